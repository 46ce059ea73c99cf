//! Built-in benchmark problems and the bridge to external objectives.

pub mod elastic;
pub mod external;
pub mod illustrative;

pub use elastic::{ElasticNetProblem, ElasticNetTuning};
pub use external::{ExternalObjective, ExternalObjectiveSpec};
pub use illustrative::IllustrativeObjective;
