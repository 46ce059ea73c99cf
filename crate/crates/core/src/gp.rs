//! Zero-mean GP regression with Gaussian noise.
//!
//! Outputs are centered on their empirical mean. During fitting they are
//! additionally scaled to unit standard deviation so the hyperparameter box is
//! independent of the objective's units; predictions and reported
//! hyperparameters are mapped back to data units.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DVector, Dyn};
#[cfg(test)]
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cholesky_with_jitter, cov_unchecked, gram_matrix, GpHyperparameters, BASE_JITTER};
use crate::optim::{box_starts, multistart_max, screen_starts, NelderMeadOptions};

/// Search box for `[log10 σ², log10 ℓ, log10 σ_n²]` on standardized outputs.
pub const LOG10_LOWER: [f64; 3] = [-4.0, -1.3, -8.0];
pub const LOG10_UPPER: [f64; 3] = [2.0, 1.0, 0.0];

/// The box center, used as the default hyperparameters and the first start.
pub fn default_log10() -> [f64; 3] {
    [0, 1, 2].map(|i| 0.5 * (LOG10_LOWER[i] + LOG10_UPPER[i]))
}

pub fn default_hyperparameters() -> GpHyperparameters {
    GpHyperparameters::from_log10(default_log10())
}

/// Predictive mean and variance of the latent function at query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Observations of one function: inputs in the unit cube and real outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    offset: f64,
}

impl TrainingSet {
    /// Training set whose outputs are centered on their empirical mean.
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let mut set = Self::uncentered(x, y)?;
        set.offset = set.y.iter().sum::<f64>() / set.y.len() as f64;
        Ok(set)
    }

    /// Training set used as-is, with a zero offset.
    pub fn uncentered(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::usage(format!(
                "training set needs matching nonempty inputs and outputs ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|p| p.len() != d) {
            return Err(Error::usage("training inputs must share one nonzero dimension"));
        }
        if x.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::usage("training data must be finite"));
        }
        Ok(Self { x, y, offset: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn outputs(&self) -> &[f64] {
        &self.y
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn centered(&self) -> Vec<f64> {
        self.y.iter().map(|v| v - self.offset).collect()
    }

    /// Standard deviation of the centered outputs, or 1 when they are
    /// (numerically) constant.
    pub(crate) fn output_scale(&self) -> f64 {
        let c = self.centered();
        let sd = (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt();
        if sd.is_finite() && sd > 1e-12 * (1.0 + self.offset.abs()) {
            sd
        } else {
            1.0
        }
    }
}

/// Exact posterior of a zero-mean GP given noisy observations, with the
/// Cholesky factor of `K + (σ_n² + jitter) I` cached.
#[derive(Debug, Clone)]
pub(crate) struct ExactPosterior {
    pub xs: Vec<Vec<f64>>,
    pub hyper: GpHyperparameters,
    pub chol: Cholesky<f64, Dyn>,
    pub alpha: DVector<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub jitter: f64,
    pub log_marginal: f64,
}

impl ExactPosterior {
    pub fn new(xs: &[Vec<f64>], y: &[f64], hyper: &GpHyperparameters) -> Result<Self> {
        hyper.validate()?;
        let n = xs.len();
        let mut k = gram_matrix(xs, hyper);
        for i in 0..n {
            k[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_with_jitter(&k, BASE_JITTER * hyper.signal_variance)?;
        let y = DVector::from_column_slice(y);
        let alpha = chol.solve(&y);
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let log_marginal =
            -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * PI).ln();
        if !log_marginal.is_finite() {
            return Err(Error::numeric("log marginal likelihood is not finite"));
        }
        Ok(Self {
            xs: xs.to_vec(),
            hyper: *hyper,
            chol,
            alpha,
            jitter,
            log_marginal,
        })
    }

    pub fn cross_covariance(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|x| cov_unchecked(x, q, &self.hyper)),
        )
    }

    /// Mean, variance (unclamped) and `L⁻¹ k(X, q)` at a query.
    pub fn query(&self, q: &[f64]) -> (f64, f64, DVector<f64>) {
        let mut u = self.cross_covariance(q);
        let mean = u.dot(&self.alpha);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut u);
        let var = self.hyper.signal_variance - u.norm_squared();
        (mean, var, u)
    }

    /// Reassembled `K + (σ_n² + jitter) I`, for checking the cached factor.
    #[cfg(test)]
    pub fn reconstructed(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    #[cfg(test)]
    pub fn target_matrix(&self) -> DMatrix<f64> {
        let mut k = gram_matrix(&self.xs, &self.hyper);
        for i in 0..self.xs.len() {
            k[(i, i)] += self.hyper.noise_variance + self.jitter;
        }
        k
    }
}

pub(crate) fn check_queries(xq: &[Vec<f64>], d: usize) -> Result<()> {
    if xq.is_empty() {
        return Err(Error::usage("no query points"));
    }
    for q in xq {
        if q.len() != d {
            return Err(Error::usage(format!(
                "query has dimension {}, model has {d}",
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("query point is not finite"));
        }
    }
    Ok(())
}

/// Gaussian log evidence of the centered outputs under `hyper`.
pub fn log_marginal_likelihood(training: &TrainingSet, hyper: &GpHyperparameters) -> Result<f64> {
    Ok(ExactPosterior::new(training.inputs(), &training.centered(), hyper)?.log_marginal)
}

/// A GP with fixed hyperparameters conditioned on a training set.
#[derive(Debug, Clone)]
pub struct FittedGp {
    training: TrainingSet,
    scale: f64,
    posterior: ExactPosterior,
}

impl FittedGp {
    /// Conditions on `training` with hyperparameters given in data units.
    pub fn with_hyper(training: TrainingSet, hyper: GpHyperparameters) -> Result<Self> {
        let posterior = ExactPosterior::new(training.inputs(), &training.centered(), &hyper)?;
        Ok(Self {
            training,
            scale: 1.0,
            posterior,
        })
    }

    fn standardized(training: TrainingSet, scale: f64, hyper_std: GpHyperparameters) -> Result<Self> {
        let y: Vec<f64> = training.centered().iter().map(|v| v / scale).collect();
        let posterior = ExactPosterior::new(training.inputs(), &y, &hyper_std)?;
        Ok(Self {
            training,
            scale,
            posterior,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    /// Hyperparameters in data units.
    pub fn hyper(&self) -> GpHyperparameters {
        self.posterior.hyper.scale_variances(self.scale * self.scale)
    }

    pub fn mean_offset(&self) -> f64 {
        self.training.offset()
    }

    /// Log evidence of the training outputs in data units.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.posterior.log_marginal - self.training.len() as f64 * self.scale.ln()
    }

    pub fn predict(&self, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
        check_queries(xq, self.training.dim())?;
        let s2 = self.scale * self.scale;
        let (mean, variance) = xq
            .iter()
            .map(|q| {
                let (m, v, _) = self.posterior.query(q);
                (self.training.offset() + self.scale * m, (s2 * v).max(0.0))
            })
            .unzip();
        Ok(PosteriorSummary { mean, variance })
    }

    #[cfg(test)]
    pub(crate) fn posterior(&self) -> &ExactPosterior {
        &self.posterior
    }
}

pub fn predict(model: &FittedGp, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
    model.predict(xq)
}

/// Multi-start settings for hyperparameter searches.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Quasi-random starts in addition to the box center.
    pub extra_starts: usize,
    /// When set, every start is evaluated once and the local search runs
    /// only from this many of the best (ties to the earlier start).
    pub refine_best: Option<usize>,
    pub simplex: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            extra_starts: 9,
            refine_best: None,
            simplex: NelderMeadOptions::default(),
        }
    }
}

/// Maximizes `objective(hyper)` over the log10 box. With a single observation
/// the length scale stays at the box center and only the variances move.
pub(crate) fn search_hyperparameters<F>(
    n_obs: usize,
    seed: u64,
    opts: &FitOptions,
    mut objective: F,
) -> Result<(GpHyperparameters, f64)>
where
    F: FnMut(&GpHyperparameters) -> f64,
{
    let center = default_log10();
    let best = if n_obs == 1 {
        let lower = [LOG10_LOWER[0], LOG10_LOWER[2]];
        let upper = [LOG10_UPPER[0], LOG10_UPPER[2]];
        let mut f = |p: &[f64]| objective(&GpHyperparameters::from_log10([p[0], center[1], p[1]]));
        let mut starts = box_starts(&lower, &upper, opts.extra_starts, seed);
        if let Some(keep) = opts.refine_best {
            starts = screen_starts(&mut f, starts, keep);
        }
        multistart_max(f, &starts, &lower, &upper, &opts.simplex).map(|o| ([o.x[0], center[1], o.x[1]], o.value))
    } else {
        let mut f = |p: &[f64]| objective(&GpHyperparameters::from_log10([p[0], p[1], p[2]]));
        let mut starts = box_starts(&LOG10_LOWER, &LOG10_UPPER, opts.extra_starts, seed);
        if let Some(keep) = opts.refine_best {
            starts = screen_starts(&mut f, starts, keep);
        }
        multistart_max(f, &starts, &LOG10_LOWER, &LOG10_UPPER, &opts.simplex)
            .map(|o| ([o.x[0], o.x[1], o.x[2]], o.value))
    };
    let (log10, value) = best.ok_or_else(|| {
        Error::Fit("every optimizer start produced a non-finite objective".into())
    })?;
    Ok((GpHyperparameters::from_log10(log10), value))
}

/// Fits hyperparameters by bounded maximum likelihood on standardized
/// outputs. Deterministic given `seed`.
pub fn fit(training: &TrainingSet, seed: u64) -> Result<FittedGp> {
    fit_with_options(training, seed, &FitOptions::default())
}

pub fn fit_with_options(training: &TrainingSet, seed: u64, opts: &FitOptions) -> Result<FittedGp> {
    let scale = training.output_scale();
    let y: Vec<f64> = training.centered().iter().map(|v| v / scale).collect();
    let (hyper_std, _) = search_hyperparameters(training.len(), seed, opts, |h| {
        ExactPosterior::new(training.inputs(), &y, h)
            .map(|p| p.log_marginal)
            .unwrap_or(f64::NEG_INFINITY)
    })?;
    FittedGp::standardized(training.clone(), scale, hyper_std)
}

/// Dense-inverse evaluation of the log evidence, kept for cross-checks.
#[cfg(test)]
pub(crate) fn dense_log_marginal(training: &TrainingSet, hyper: &GpHyperparameters) -> f64 {
    let n = training.len();
    let mut k: DMatrix<f64> = gram_matrix(training.inputs(), hyper);
    for i in 0..n {
        k[(i, i)] += hyper.noise_variance + BASE_JITTER * hyper.signal_variance;
    }
    let y = DVector::from_vec(training.centered());
    let inv = k.clone().try_inverse().unwrap();
    let quad = (y.transpose() * &inv * &y)[(0, 0)];
    -0.5 * quad - 0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * PI).ln()
}
