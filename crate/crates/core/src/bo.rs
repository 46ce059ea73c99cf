//! The sequential optimization loop: fit surrogate, maximize expected
//! improvement, evaluate, repeat.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::propose_next;
use crate::composite::{default_grid_resolution, fit_stack, ComponentSpec, Strategy};
use crate::error::{Error, Result};

/// A decomposable objective on the unit cube. `evaluate` returns one value per
/// component; the objective is their sum and is to be maximized.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn components(&self) -> &[ComponentSpec];
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Human-readable description of how unit-cube coordinates map to the
    /// problem's native parameters.
    fn transform_descriptions(&self) -> Vec<String> {
        Vec::new()
    }
}

/// One probed point with its per-component values and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub x: Vec<f64>,
    pub components: Vec<f64>,
    pub total: f64,
}

impl EvaluationRecord {
    pub fn new(x: Vec<f64>, components: Vec<f64>) -> Self {
        let total = components.iter().fold(0.0, |acc, v| acc + v);
        Self { x, components, total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub problem: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub records: Vec<EvaluationRecord>,
    /// Running maximum of observed totals, one entry per record.
    pub best_so_far: Vec<f64>,
}

#[derive(Debug, Error)]
#[error("trial with seed {seed} failed after {} evaluations: {source}", completed.len())]
pub struct TrialError {
    pub seed: u64,
    pub completed: Vec<EvaluationRecord>,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSettings {
    pub n_init: usize,
    /// Evaluations added after the initial design.
    pub budget: usize,
    /// Virtual points per dimension; `None` picks the dimension default.
    pub grid_resolution: Option<usize>,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            n_init: 4,
            budget: 8,
            grid_resolution: None,
        }
    }
}

/// splitmix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` independent uniform points in `[0,1]^d`.
pub fn initial_design(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Evaluates `problem` at `x` and checks the arity and finiteness of the answer.
pub fn evaluate_record(problem: &dyn Problem, x: Vec<f64>) -> Result<EvaluationRecord> {
    let values = problem.evaluate(&x)?;
    let expected = problem.components().len();
    if values.len() != expected {
        return Err(Error::OracleArity {
            expected,
            got: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::OracleNonFinite { index });
    }
    Ok(EvaluationRecord::new(x, values))
}

pub fn run_trial(
    problem: &dyn Problem,
    strategy: Strategy,
    settings: &TrialSettings,
    seed: u64,
) -> std::result::Result<TrialTrace, TrialError> {
    let mut records: Vec<EvaluationRecord> = Vec::with_capacity(settings.n_init + settings.budget);
    let fail = |records: Vec<EvaluationRecord>, source: Error| TrialError {
        seed,
        completed: records,
        source,
    };
    if settings.n_init == 0 {
        return Err(fail(records, Error::usage("initial design needs at least one point")));
    }
    let d = problem.dimension();
    let resolution = settings
        .grid_resolution
        .unwrap_or_else(|| default_grid_resolution(d));

    for x in initial_design(d, settings.n_init, seed) {
        match evaluate_record(problem, x) {
            Ok(r) => records.push(r),
            Err(e) => return Err(fail(records, e)),
        }
    }
    for iter in 0..settings.budget {
        let step = || -> Result<EvaluationRecord> {
            let best = records.iter().map(|r| r.total).fold(f64::NEG_INFINITY, f64::max);
            let stack = fit_stack(
                &records,
                problem.components(),
                strategy,
                resolution,
                mix_seed(seed, iter as u64, 1),
            )?;
            let x = propose_next(&stack, best, mix_seed(seed, iter as u64, 2))?;
            evaluate_record(problem, x)
        };
        match step() {
            Ok(r) => records.push(r),
            Err(e) => return Err(fail(records, e)),
        }
    }

    let mut best = f64::NEG_INFINITY;
    let best_so_far = records
        .iter()
        .map(|r| {
            best = best.max(r.total);
            best
        })
        .collect();
    Ok(TrialTrace {
        problem: problem.name().to_string(),
        strategy,
        seed,
        records,
        best_so_far,
    })
}

/// Runs trials with seeds `base_seed, base_seed + 1, …` sequentially.
pub fn run_trials(
    problem: &dyn Problem,
    strategy: Strategy,
    settings: &TrialSettings,
    n_trials: usize,
    base_seed: u64,
) -> Vec<std::result::Result<TrialTrace, TrialError>> {
    (0..n_trials)
        .map(|t| run_trial(problem, strategy, settings, base_seed.wrapping_add(t as u64)))
        .collect()
}

/// Like [`run_trials`] but with up to `jobs` trials in flight. Results come
/// back in trial order and are identical to the sequential run.
pub fn run_trials_parallel(
    problem: &dyn Problem,
    strategy: Strategy,
    settings: &TrialSettings,
    n_trials: usize,
    base_seed: u64,
    jobs: usize,
) -> Vec<std::result::Result<TrialTrace, TrialError>> {
    if jobs <= 1 {
        return run_trials(problem, strategy, settings, n_trials, base_seed);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool,
        Err(_) => return run_trials(problem, strategy, settings, n_trials, base_seed),
    };
    pool.install(|| {
        (0..n_trials)
            .into_par_iter()
            .map(|t| run_trial(problem, strategy, settings, base_seed.wrapping_add(t as u64)))
            .collect()
    })
}
