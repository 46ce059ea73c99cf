//! Bayesian optimization for objectives that split into a sum of components
//! with known monotone directions.
//!
//! Each component gets its own Gaussian process. Known monotonicity enters
//! through virtual derivative observations on a grid, observed through a
//! probit likelihood and approximated by expectation propagation. The
//! summed posterior drives an expected-improvement search on the unit cube.

pub mod acquisition;
pub mod bench;
pub mod bo;
pub mod composite;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod mono;
pub mod optim;
pub mod problems;
pub mod stats;

pub use acquisition::{expected_improvement, propose_next};
pub use bo::{run_trial, run_trials, EvaluationRecord, Problem, TrialSettings, TrialTrace};
pub use composite::{fit_stack, predict_sum, ComponentSpec, Strategy, SurrogateStack};
pub use error::{Error, Result};
pub use gp::{fit, FittedGp, PosteriorSummary, TrainingSet};
pub use kernel::{DerivativeIndex, GpHyperparameters};
pub use mono::{fit_mono, make_virtual_grid, FittedMonoGp, VirtualGrid};
