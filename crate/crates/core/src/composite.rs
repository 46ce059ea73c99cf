//! The surrogate for a decomposed objective: one GP per component, with
//! predictions of the sum obtained by adding component means and variances.

use serde::{Deserialize, Serialize};

use crate::bo::EvaluationRecord;
use crate::error::{Error, Result};
use crate::gp::{fit, FittedGp, PosteriorSummary, TrainingSet};
use crate::mono::{fit_mono, make_virtual_grid, FittedMonoGp, DEFAULT_NU};

/// A component's name and its monotonicity sign per input dimension
/// (`+1` non-decreasing, `-1` non-increasing, `0` unknown).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub signs: Vec<i8>,
}

impl ComponentSpec {
    pub fn new(name: impl Into<String>, signs: Vec<i8>) -> Result<Self> {
        let name = name.into();
        if signs.iter().any(|s| !(-1..=1).contains(s)) {
            return Err(Error::usage(format!(
                "component `{name}` has signs outside {{-1, 0, 1}}: {signs:?}"
            )));
        }
        Ok(Self { name, signs })
    }

    pub fn is_constrained(&self) -> bool {
        self.signs.iter().any(|&s| s != 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// One GP on the summed objective.
    Standard,
    /// One unconstrained GP per component.
    Decomposed,
    /// One monotonicity-constrained GP per component.
    DecomposedMonotone,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Standard, Strategy::Decomposed, Strategy::DecomposedMonotone];

    /// Name used on the command line and in result files.
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::Decomposed => "decomp",
            Strategy::DecomposedMonotone => "decomp-mono",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.label() == label)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Virtual points per dimension when none is configured.
pub fn default_grid_resolution(d: usize) -> usize {
    match d {
        1 | 2 => 10,
        3 => 4,
        _ => 3,
    }
}

#[derive(Debug, Clone)]
pub enum ComponentModel {
    Plain(FittedGp),
    Monotone(FittedMonoGp),
}

impl ComponentModel {
    pub fn predict(&self, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
        match self {
            ComponentModel::Plain(m) => m.predict(xq),
            ComponentModel::Monotone(m) => m.predict(xq),
        }
    }
}

/// Fitted models of one strategy: a single model on totals for
/// [`Strategy::Standard`], otherwise one per component in spec order.
#[derive(Debug, Clone)]
pub struct SurrogateStack {
    strategy: Strategy,
    dim: usize,
    specs: Vec<ComponentSpec>,
    grid_resolution: usize,
    models: Vec<ComponentModel>,
}

impl SurrogateStack {
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn specs(&self) -> &[ComponentSpec] {
        &self.specs
    }

    pub fn grid_resolution(&self) -> usize {
        self.grid_resolution
    }

    pub fn models(&self) -> &[ComponentModel] {
        &self.models
    }

    pub fn predict(&self, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
        predict_sum(self, xq)
    }
}

/// Seed for component `index`; component 0 uses the stack seed unchanged.
fn component_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn with_component<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Component {
        component: name.to_string(),
        source: Box::new(e),
    })
}

pub fn fit_stack(
    records: &[EvaluationRecord],
    specs: &[ComponentSpec],
    strategy: Strategy,
    grid_resolution: usize,
    seed: u64,
) -> Result<SurrogateStack> {
    let Some(first) = records.first() else {
        return Err(Error::usage("cannot fit a surrogate without evaluations"));
    };
    let dim = first.x.len();
    if specs.is_empty() {
        return Err(Error::usage("at least one component is required"));
    }
    if let Some(s) = specs.iter().find(|s| s.signs.len() != dim) {
        return Err(Error::usage(format!(
            "component `{}` declares {} signs for a {dim}-d problem",
            s.name,
            s.signs.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.x.len() != dim || r.components.len() != specs.len()) {
        return Err(Error::usage(format!(
            "record at {:?} does not match {dim} dimensions and {} components",
            r.x,
            specs.len()
        )));
    }
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();

    let models = match strategy {
        Strategy::Standard => {
            let t = TrainingSet::new(xs, records.iter().map(|r| r.total).collect())?;
            vec![ComponentModel::Plain(with_component("total", fit(&t, seed))?)]
        }
        Strategy::Decomposed | Strategy::DecomposedMonotone => specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let t = TrainingSet::new(xs.clone(), records.iter().map(|r| r.components[i]).collect())?;
                let s = component_seed(seed, i);
                if strategy == Strategy::DecomposedMonotone && spec.is_constrained() {
                    let grid = make_virtual_grid(dim, grid_resolution, &spec.signs, DEFAULT_NU)?;
                    with_component(&spec.name, fit_mono(&t, &grid, s)).map(ComponentModel::Monotone)
                } else {
                    with_component(&spec.name, fit(&t, s)).map(ComponentModel::Plain)
                }
            })
            .collect::<Result<Vec<_>>>()?,
    };

    Ok(SurrogateStack {
        strategy,
        dim,
        specs: specs.to_vec(),
        grid_resolution,
        models,
    })
}

/// Mean and variance of the summed objective; components are accumulated in
/// index order.
pub fn predict_sum(stack: &SurrogateStack, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
    let mut models = stack.models.iter();
    let first = models
        .next()
        .ok_or_else(|| Error::usage("surrogate stack has no models"))?;
    let mut total = first.predict(xq)?;
    for model in models {
        let p = model.predict(xq)?;
        for (acc, v) in total.mean.iter_mut().zip(&p.mean) {
            *acc += v;
        }
        for (acc, v) in total.variance.iter_mut().zip(&p.variance) {
            *acc += v;
        }
    }
    Ok(total)
}
