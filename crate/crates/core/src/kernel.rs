//! Isotropic squared-exponential covariance with derivative cross-covariances.
//!
//! With `r² = ‖x − x′‖²` the covariance is `σ² · exp(−r² / (2ℓ²))`. The
//! derivative process `∂f/∂x_j` is itself Gaussian, so covariances between
//! function values and partial derivatives follow by differentiating the
//! kernel. Those cross terms are what let a GP condition on (virtual)
//! derivative observations.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal jitter added before any Cholesky factorization.
pub const BASE_JITTER: f64 = 1e-8;
/// How many times the jitter is doubled before giving up.
pub const JITTER_RETRIES: usize = 6;

/// The three parameters of one GP: signal variance, isotropic length scale
/// and independent noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparameters {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl GpHyperparameters {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        let hyper = Self {
            signal_variance,
            length_scale,
            noise_variance,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    /// Builds from `[log10 σ², log10 ℓ, log10 σ_n²]`.
    pub fn from_log10(params: [f64; 3]) -> Self {
        Self {
            signal_variance: 10f64.powf(params[0]),
            length_scale: 10f64.powf(params[1]),
            noise_variance: 10f64.powf(params[2]),
        }
    }

    pub fn to_log10(&self) -> [f64; 3] {
        [
            self.signal_variance.log10(),
            self.length_scale.log10(),
            self.noise_variance.log10(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.signal_variance.is_finite()
            && self.length_scale.is_finite()
            && self.noise_variance.is_finite();
        if !all_finite
            || self.signal_variance <= 0.0
            || self.length_scale <= 0.0
            || self.noise_variance < 0.0
        {
            return Err(Error::usage(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// Same correlation structure with both variances multiplied by `factor`.
    pub fn scale_variances(&self, factor: f64) -> Self {
        Self {
            signal_variance: self.signal_variance * factor,
            length_scale: self.length_scale,
            noise_variance: self.noise_variance * factor,
        }
    }
}

/// A partial derivative latent `∂f/∂x_dim` at `point`, with the sign the
/// derivative is believed to have.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeIndex {
    pub point: Vec<f64>,
    pub dim: usize,
    pub sign: i8,
}

impl DerivativeIndex {
    pub fn new(point: Vec<f64>, dim: usize, sign: i8) -> Result<Self> {
        if dim >= point.len() {
            return Err(Error::usage(format!(
                "derivative dimension {dim} out of range for a {}-d point",
                point.len()
            )));
        }
        if sign != 1 && sign != -1 {
            return Err(Error::usage(format!("derivative sign must be +1 or -1, got {sign}")));
        }
        if point.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::usage("derivative point outside the unit cube"));
        }
        Ok(Self { point, dim, sign })
    }
}

fn check_dims(x: &[f64], x2: &[f64]) -> Result<()> {
    if x.len() != x2.len() {
        return Err(Error::usage(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            x2.len()
        )));
    }
    Ok(())
}

fn check_index(j: usize, d: usize) -> Result<()> {
    if j >= d {
        return Err(Error::usage(format!("dimension index {j} out of range for d={d}")));
    }
    Ok(())
}

#[inline]
fn sq_dist(x: &[f64], x2: &[f64]) -> f64 {
    x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn cov_unchecked(x: &[f64], x2: &[f64], hyper: &GpHyperparameters) -> f64 {
    let l2 = hyper.length_scale * hyper.length_scale;
    hyper.signal_variance * (-0.5 * sq_dist(x, x2) / l2).exp()
}

#[inline]
pub(crate) fn cov_dx2_unchecked(x: &[f64], x2: &[f64], j: usize, hyper: &GpHyperparameters) -> f64 {
    let l2 = hyper.length_scale * hyper.length_scale;
    cov_unchecked(x, x2, hyper) * (x[j] - x2[j]) / l2
}

#[inline]
pub(crate) fn cov_dx_dx2_unchecked(
    x: &[f64],
    i: usize,
    x2: &[f64],
    j: usize,
    hyper: &GpHyperparameters,
) -> f64 {
    let l2 = hyper.length_scale * hyper.length_scale;
    let delta = if i == j { 1.0 } else { 0.0 };
    cov_unchecked(x, x2, hyper) / l2 * (delta - (x[i] - x2[i]) * (x[j] - x2[j]) / l2)
}

/// `cov(f(x), f(x2))`.
pub fn se_cov(x: &[f64], x2: &[f64], hyper: &GpHyperparameters) -> Result<f64> {
    check_dims(x, x2)?;
    Ok(cov_unchecked(x, x2, hyper))
}

/// `cov(f(x), ∂f(x2)/∂x2_j)`.
pub fn se_cov_dx2(x: &[f64], x2: &[f64], j: usize, hyper: &GpHyperparameters) -> Result<f64> {
    check_dims(x, x2)?;
    check_index(j, x.len())?;
    Ok(cov_dx2_unchecked(x, x2, j, hyper))
}

/// `cov(∂f(x)/∂x_i, ∂f(x2)/∂x2_j)`.
pub fn se_cov_dx_dx2(
    x: &[f64],
    i: usize,
    x2: &[f64],
    j: usize,
    hyper: &GpHyperparameters,
) -> Result<f64> {
    check_dims(x, x2)?;
    check_index(i, x.len())?;
    check_index(j, x.len())?;
    Ok(cov_dx_dx2_unchecked(x, i, x2, j, hyper))
}

/// Gram matrix of `se_cov` over a point set.
pub fn gram_matrix(xs: &[Vec<f64>], hyper: &GpHyperparameters) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        k[(a, a)] = hyper.signal_variance;
        for b in 0..a {
            let v = cov_unchecked(&xs[a], &xs[b], hyper);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// Prior covariance of `[f(X); ∂f/∂x_{dim_k}(point_k) for k in V]`, function
/// values first and derivative latents after, in the given orders. No jitter
/// is added here.
pub fn build_joint_covariance(
    xs: &[Vec<f64>],
    derivs: &[DerivativeIndex],
    hyper: &GpHyperparameters,
) -> Result<DMatrix<f64>> {
    let Some(first) = xs.first() else {
        return Err(Error::usage("joint covariance needs at least one function point"));
    };
    let d = first.len();
    for x in xs {
        check_dims(first, x)?;
    }
    for v in derivs {
        check_dims(first, &v.point)?;
        check_index(v.dim, d)?;
    }

    let n = xs.len();
    let m = derivs.len();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&gram_matrix(xs, hyper));
    for (a, x) in xs.iter().enumerate() {
        for (b, v) in derivs.iter().enumerate() {
            let c = cov_dx2_unchecked(x, &v.point, v.dim, hyper);
            k[(a, n + b)] = c;
            k[(n + b, a)] = c;
        }
    }
    for (a, va) in derivs.iter().enumerate() {
        for (b, vb) in derivs.iter().enumerate().take(a + 1) {
            let c = cov_dx_dx2_unchecked(&va.point, va.dim, &vb.point, vb.dim, hyper);
            k[(n + a, n + b)] = c;
            k[(n + b, n + a)] = c;
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("joint covariance has non-finite entries"));
    }
    Ok(k)
}

/// Cholesky factorization after adding `jitter · I`; the jitter is doubled on
/// failure, at most [`JITTER_RETRIES`] times. Returns the factor and the
/// jitter that was finally used.
pub(crate) fn cholesky_with_jitter(
    matrix: &DMatrix<f64>,
    jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = jitter;
    for _ in 0..=JITTER_RETRIES {
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        jitter *= 2.0;
    }
    Err(Error::numeric(format!(
        "Cholesky factorization failed for a {n}x{n} matrix even with jitter {jitter:e}",
        n = matrix.nrows()
    )))
}
