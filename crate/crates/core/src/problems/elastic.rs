//! Elastic-net hyperparameter tuning on synthetic linear-regression data.
//!
//! The validation error is split into the training error and the gap
//! between validation and training error; both are negated so the tuner
//! maximizes.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::bo::Problem;
use crate::composite::ComponentSpec;
use crate::error::{Error, Result};

pub const ROWS: usize = 200;
pub const FEATURES: usize = 100;
pub const ZERO_COEFFICIENTS: usize = 50;
pub const COEFFICIENT_SD: f64 = 0.22;
pub const NOISE_SD: f64 = 1.0;
/// `λ = 2^(LOG2_LAMBDA_LOW + (LOG2_LAMBDA_HIGH − LOG2_LAMBDA_LOW) · u)`.
pub const LOG2_LAMBDA_LOW: f64 = -10.0;
pub const LOG2_LAMBDA_HIGH: f64 = 0.0;

pub const MAX_SWEEPS: usize = 10_000;
pub const COEFFICIENT_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;

/// Training and validation sets drawn from one sparse linear model.
#[derive(Debug, Clone)]
pub struct ElasticNetProblem {
    pub seed: u64,
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_valid: DMatrix<f64>,
    pub y_valid: DVector<f64>,
    pub coefficients: DVector<f64>,
    /// Indices of the coefficients forced to zero, ascending.
    pub zero_indices: Vec<usize>,
}

fn draw_set(rng: &mut ChaCha8Rng, coefficients: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let p = coefficients.len();
    let x = DMatrix::from_fn(ROWS, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = Normal::new(0.0, NOISE_SD).expect("valid normal");
    let mut y = &x * coefficients;
    for v in y.iter_mut() {
        *v += rng.sample(noise);
    }
    (x, y)
}

/// Draws the coefficient vector (a seeded shuffle picks the zero entries),
/// then the training set, then the validation set.
pub fn generate_elastic_data(seed: u64) -> ElasticNetProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..FEATURES).collect();
    order.shuffle(&mut rng);
    let mut zero_indices = order[..ZERO_COEFFICIENTS].to_vec();
    zero_indices.sort_unstable();

    let coef_dist = Normal::new(0.0, COEFFICIENT_SD).expect("valid normal");
    let mut coefficients = DVector::zeros(FEATURES);
    for j in 0..FEATURES {
        if zero_indices.binary_search(&j).is_err() {
            coefficients[j] = rng.sample(coef_dist);
        }
    }
    let (x_train, y_train) = draw_set(&mut rng, &coefficients);
    let (x_valid, y_valid) = draw_set(&mut rng, &coefficients);
    ElasticNetProblem {
        seed,
        x_train,
        y_train,
        x_valid,
        y_valid,
        coefficients,
        zero_indices,
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Half mean squared error `‖y − Xβ‖² / (2n)`.
pub fn mse(beta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    (y - x * beta).norm_squared() / (2.0 * y.len() as f64)
}

/// `mse + λ[(1−α)/2 ‖β‖² + α ‖β‖₁]`.
pub fn elastic_loss(beta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, lambda: f64) -> f64 {
    mse(beta, x, y) + lambda * (0.5 * (1.0 - alpha) * beta.norm_squared() + alpha * beta.lp_norm(1))
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_residual(beta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let r = y - x * beta;
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    (0..beta.len())
        .map(|j| {
            let g = -x.column(j).dot(&r) / n + l2 * beta[j];
            if beta[j] != 0.0 {
                (g + l1 * beta[j].signum()).abs()
            } else {
                (g.abs() - l1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct ElasticNetFit {
    pub coefficients: DVector<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

/// Cyclic coordinate descent with soft-thresholding from `β = 0`.
pub fn elastic_net_solve(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, lambda: f64) -> Result<ElasticNetFit> {
    if !(lambda >= 0.0) || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::usage(format!("need λ ≥ 0 and α ∈ [0,1], got λ={lambda}, α={alpha}")));
    }
    if x.ncols() == 0 || x.nrows() != y.len() {
        return Err(Error::usage("design matrix and response do not match"));
    }
    let n = y.len() as f64;
    let p = x.ncols();
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / n).collect();

    let mut beta: DVector<f64> = DVector::zeros(p);
    let mut resid = y.clone();
    let mut residual = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let denom = col_sq[j] + l2;
            let old = beta[j];
            let new = if denom > 0.0 {
                let rho = x.column(j).dot(&resid) / n + col_sq[j] * old;
                soft_threshold(rho, l1) / denom
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &x.column(j), 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < COEFFICIENT_TOL {
            residual = kkt_residual(&beta, x, y, alpha, lambda);
            if residual <= KKT_TOL {
                return Ok(ElasticNetFit {
                    coefficients: beta,
                    sweeps: sweep,
                    kkt_residual: residual,
                });
            }
            // Accumulated drift in the running residual; start from a fresh one.
            resid = y - x * &beta;
        }
    }
    if !residual.is_finite() {
        residual = kkt_residual(&beta, x, y, alpha, lambda);
    }
    Err(Error::SolverNonConvergence {
        residual,
        sweeps: MAX_SWEEPS,
    })
}

pub fn elastic_net_fit(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, lambda: f64) -> Result<DVector<f64>> {
    Ok(elastic_net_solve(x, y, alpha, lambda)?.coefficients)
}

/// Maps unit-square coordinates to `(α, λ)`.
pub fn hyperparameters_from_unit(theta: &[f64]) -> (f64, f64) {
    let alpha = theta[0];
    let lambda = 2f64.powf(LOG2_LAMBDA_LOW + (LOG2_LAMBDA_HIGH - LOG2_LAMBDA_LOW) * theta[1]);
    (alpha, lambda)
}

/// `(−training mse, −(validation mse − training mse))` at `θ ∈ [0,1]²`.
pub fn elastic_objective(problem: &ElasticNetProblem, theta: &[f64]) -> Result<(f64, f64)> {
    if theta.len() != 2 || theta.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::usage(format!("elastic objective takes a point in [0,1]², got {theta:?}")));
    }
    let (alpha, lambda) = hyperparameters_from_unit(theta);
    let beta = elastic_net_fit(&problem.x_train, &problem.y_train, alpha, lambda)?;
    let train = mse(&beta, &problem.x_train, &problem.y_train);
    let valid = mse(&beta, &problem.x_valid, &problem.y_valid);
    Ok((-train, -(valid - train)))
}

/// The tuning problem seen by the optimizer.
#[derive(Debug, Clone)]
pub struct ElasticNetTuning {
    data: ElasticNetProblem,
    specs: Vec<ComponentSpec>,
}

impl ElasticNetTuning {
    /// Component signs: −training error falls with both α and λ; −gap rises.
    pub fn new(data: ElasticNetProblem) -> Self {
        Self::with_signs(data, [-1, -1], [1, 1])
    }

    pub fn with_signs(data: ElasticNetProblem, train_signs: [i8; 2], gap_signs: [i8; 2]) -> Self {
        Self {
            data,
            specs: vec![
                ComponentSpec {
                    name: "neg_train_mse".into(),
                    signs: train_signs.to_vec(),
                },
                ComponentSpec {
                    name: "neg_gap".into(),
                    signs: gap_signs.to_vec(),
                },
            ],
        }
    }

    pub fn data(&self) -> &ElasticNetProblem {
        &self.data
    }
}

impl Problem for ElasticNetTuning {
    fn name(&self) -> &str {
        "elastic"
    }

    fn dimension(&self) -> usize {
        2
    }

    fn components(&self) -> &[ComponentSpec] {
        &self.specs
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (c1, c2) = elastic_objective(&self.data, x)?;
        Ok(vec![c1, c2])
    }

    fn transform_descriptions(&self) -> Vec<String> {
        vec![
            "x0 -> alpha: linear on [0, 1]".into(),
            format!("x1 -> lambda: 2^(linear on [{LOG2_LAMBDA_LOW}, {LOG2_LAMBDA_HIGH}])"),
            format!("zero coefficients (data seed {}): {:?}", self.data.seed, self.data.zero_indices),
        ]
    }
}
