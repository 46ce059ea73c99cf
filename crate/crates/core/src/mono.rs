//! Monotonicity-constrained GP regression.
//!
//! Monotonicity enters through virtual derivative observations: at each
//! virtual point `v` and constrained direction `j` the likelihood gains a
//! factor `Φ(s · ∂f/∂x_j(v) / ν)` with `s = ±1` the believed sign. The
//! Gaussian observations are conditioned on exactly; the probit factors are
//! approximated by expectation propagation over the derivative latents.
//!
//! Write `z` for the derivative latents. Conditioning the joint prior on the
//! noisy outputs gives `z | y ~ N(μ_z, Σ_z)`. EP replaces each probit factor
//! by an unnormalized Gaussian site with precision `τ̃_k` and precision-mean
//! `ν̃_k`; with `S = diag(τ̃)` and `B = I + S^½ Σ_z S^½` the approximate
//! posterior is `Σ_q = Σ_z − Σ_z S^½ B⁻¹ S^½ Σ_z`, `μ_q = μ_z + Σ_q (ν̃ − S μ_z)`.
//! Nothing here ever inverts `Σ_z` itself, which is badly conditioned for
//! long length scales on dense grids.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::gp::{
    check_queries, search_hyperparameters, ExactPosterior, FitOptions, PosteriorSummary,
    TrainingSet,
};
use crate::kernel::{
    cov_dx2_unchecked, cov_dx_dx2_unchecked, DerivativeIndex, GpHyperparameters, BASE_JITTER,
};
use crate::stats::{inverse_mills, log_norm_cdf};

/// Default probit slack ν.
pub const DEFAULT_NU: f64 = 0.1;
/// Fraction of the moment-matched site update that is applied.
pub const EP_DAMPING: f64 = 0.8;
pub const EP_MAX_SWEEPS: usize = 100;
/// Convergence threshold on the largest site-parameter change in a sweep.
pub const EP_TOLERANCE: f64 = 1e-6;

/// Virtual points carrying derivative-sign constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualGrid {
    points: Vec<Vec<f64>>,
    constraints: Vec<DerivativeIndex>,
    nu: f64,
}

impl VirtualGrid {
    pub fn new(points: Vec<Vec<f64>>, constraints: Vec<DerivativeIndex>, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::usage(format!("probit slack must be positive, got {nu}")));
        }
        if let Some(c) = constraints.iter().find(|c| !points.contains(&c.point)) {
            return Err(Error::usage(format!(
                "constraint point {:?} is not a grid point",
                c.point
            )));
        }
        Ok(Self {
            points,
            constraints,
            nu,
        })
    }

    /// A grid with no constraints; models built on it are plain GPs.
    pub fn empty(nu: f64) -> Self {
        Self {
            points: Vec::new(),
            constraints: Vec::new(),
            nu,
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn constraints(&self) -> &[DerivativeIndex] {
        &self.constraints
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Same constraints with every sign flipped.
    pub fn flipped(&self) -> Self {
        let mut g = self.clone();
        for c in &mut g.constraints {
            c.sign = -c.sign;
        }
        g
    }

    #[cfg(test)]
    fn with_nu(&self, nu: f64) -> Self {
        Self {
            nu,
            ..self.clone()
        }
    }
}

/// Regular grid with `per_dim_count` equally spaced values per axis, both
/// endpoints included. Points are in lexicographic order (last axis fastest);
/// each point carries one constraint per dimension with a nonzero sign.
pub fn make_virtual_grid(d: usize, per_dim_count: usize, signs: &[i8], nu: f64) -> Result<VirtualGrid> {
    if d == 0 || signs.len() != d {
        return Err(Error::usage(format!(
            "need one sign per dimension (d={d}, got {})",
            signs.len()
        )));
    }
    if per_dim_count < 2 {
        return Err(Error::usage("virtual grid needs at least 2 points per dimension"));
    }
    if signs.iter().any(|s| !(-1..=1).contains(s)) {
        return Err(Error::usage(format!("signs must be in {{-1, 0, 1}}, got {signs:?}")));
    }
    if signs.iter().all(|&s| s == 0) {
        return Err(Error::usage("virtual grid requested with no constrained dimension"));
    }
    let axis: Vec<f64> = (0..per_dim_count)
        .map(|i| i as f64 / (per_dim_count - 1) as f64)
        .collect();
    let total = per_dim_count.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut constraints = Vec::new();
    for flat in 0..total {
        let mut rest = flat;
        let mut p = vec![0.0; d];
        for k in (0..d).rev() {
            p[k] = axis[rest % per_dim_count];
            rest /= per_dim_count;
        }
        for (dim, &s) in signs.iter().enumerate() {
            if s != 0 {
                constraints.push(DerivativeIndex {
                    point: p.clone(),
                    dim,
                    sign: s,
                });
            }
        }
        points.push(p);
    }
    VirtualGrid::new(points, constraints, nu)
}

/// Site parameters of the EP approximation and how it terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    pub site_precisions: Vec<f64>,
    /// Site precision times site mean.
    pub site_precision_means: Vec<f64>,
    pub converged: bool,
    pub sweeps_used: usize,
    /// Site updates skipped because the cavity variance was not positive.
    pub skipped_updates: usize,
}

impl EpState {
    fn empty() -> Self {
        Self {
            site_precisions: Vec::new(),
            site_precision_means: Vec::new(),
            converged: true,
            sweeps_used: 0,
            skipped_updates: 0,
        }
    }

    /// Site means `ν̃/τ̃`, zero where the precision vanishes.
    pub fn site_means(&self) -> Vec<f64> {
        self.site_precisions
            .iter()
            .zip(&self.site_precision_means)
            .map(|(t, n)| if *t > 0.0 { n / t } else { 0.0 })
            .collect()
    }
}

/// Posterior after EP, able to predict the function at new points.
#[derive(Debug, Clone)]
pub struct MonoPosterior {
    exact: ExactPosterior,
    grid: VirtualGrid,
    /// `L_C⁻¹ K(X, Z)`, n × m.
    w: DMatrix<f64>,
    state: EpState,
    sqrt_sites: DVector<f64>,
    chol_b: Option<Cholesky<f64, Dyn>>,
    /// `Σ_z⁻¹ (μ_q − μ_z)`.
    correction: DVector<f64>,
    deriv_mean: Vec<f64>,
    deriv_var: Vec<f64>,
    log_marginal: f64,
}

struct EpOutcome {
    state: EpState,
    sqrt_sites: DVector<f64>,
    chol_b: Cholesky<f64, Dyn>,
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
}

/// Full posterior refreshes during EP happen every this many sweeps, to
/// shed rounding accumulated by the rank-one updates.
const EP_REFRESH_SWEEPS: usize = 10;

/// `Σ_q`, `μ_q`, `√S` and the Cholesky factor of `B = I + √S Σ_z √S` from
/// the current sites. With `full == false` only the diagonal of `Σ_q` is
/// filled in (off-diagonal entries are left at zero).
fn recompute(
    sigma_z: &DMatrix<f64>,
    mu_z: &DVector<f64>,
    tau: &[f64],
    nu_site: &[f64],
    full: bool,
) -> Result<(DMatrix<f64>, DVector<f64>, Cholesky<f64, Dyn>, DVector<f64>)> {
    let m = tau.len();
    let sqrt_s = DVector::from_iterator(m, tau.iter().map(|t| t.sqrt()));
    let mut b = DMatrix::identity(m, m);
    for c in 0..m {
        for r in 0..m {
            b[(r, c)] += sqrt_s[r] * sigma_z[(r, c)] * sqrt_s[c];
        }
    }
    let chol = Cholesky::new(b).ok_or_else(|| Error::numeric("EP matrix B is not positive definite"))?;
    let mut v = sigma_z.clone();
    for c in 0..m {
        for r in 0..m {
            v[(r, c)] *= sqrt_s[r];
        }
    }
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let sigma = if full {
        sigma_z - v.tr_mul(&v)
    } else {
        let mut diag = DMatrix::zeros(m, m);
        for k in 0..m {
            diag[(k, k)] = sigma_z[(k, k)] - v.column(k).norm_squared();
        }
        diag
    };
    let shift = DVector::from_iterator(m, (0..m).map(|k| nu_site[k] - tau[k] * mu_z[k]));
    // Σ_q b = Σ_z b − vᵀ(v b)
    let mu = mu_z + sigma_z * &shift - v.tr_mul(&(&v * &shift));
    Ok((sigma, mu, chol, sqrt_s))
}

/// Sequential damped EP over the probit sites `Φ(s_k z_k / ν)` given the
/// Gaussian prior `N(μ_z, Σ_z)`.
///
/// Between refreshes only the upper triangle of the working covariance is
/// updated; column `k` is read from column `k` above the diagonal and row
/// `k` below it.
fn run_ep(mu_z: &DVector<f64>, sigma_z: &DMatrix<f64>, signs: &[f64], nu: f64) -> Result<EpOutcome> {
    let m = signs.len();
    let mut tau = vec![0.0; m];
    let mut nu_site = vec![0.0; m];
    let mut sigma = sigma_z.clone();
    let mut mu = mu_z.clone();
    let mut converged = false;
    let mut sweeps_used = 0;
    let mut skipped = 0;
    let mut col = vec![0.0; m];

    for sweep in 1..=EP_MAX_SWEEPS {
        sweeps_used = sweep;
        let mut max_change = 0.0f64;
        for k in 0..m {
            let skk = sigma[(k, k)];
            let tau_cav = 1.0 / skk - tau[k];
            if !(tau_cav > 0.0 && tau_cav.is_finite()) {
                skipped += 1;
                continue;
            }
            let nu_cav = mu[k] / skk - nu_site[k];
            let var_cav = 1.0 / tau_cav;
            let mean_cav = nu_cav * var_cav;

            let s = signs[k];
            let denom = (nu * nu + var_cav).sqrt();
            let kappa = s * mean_cav / denom;
            let ratio = inverse_mills(kappa);
            let mean_hat = mean_cav + s * var_cav * ratio / denom;
            let var_hat = var_cav - var_cav * var_cav * ratio * (kappa + ratio) / (denom * denom);
            if !(var_hat > 0.0 && var_hat.is_finite()) {
                skipped += 1;
                continue;
            }

            let tau_prop = 1.0 / var_hat - tau_cav;
            let nu_prop = mean_hat / var_hat - nu_cav;
            let tau_new = (EP_DAMPING * tau_prop + (1.0 - EP_DAMPING) * tau[k]).max(0.0);
            let nu_new = EP_DAMPING * nu_prop + (1.0 - EP_DAMPING) * nu_site[k];
            let d_tau = tau_new - tau[k];
            let d_nu = nu_new - nu_site[k];
            max_change = max_change.max(d_tau.abs()).max(d_nu.abs());
            tau[k] = tau_new;
            nu_site[k] = nu_new;

            // Rank-one update of the posterior for the change at site k.
            let denom_update = 1.0 + d_tau * skk;
            let c_sigma = d_tau / denom_update;
            let c_mu = (d_nu - d_tau * mu[k]) / denom_update;
            {
                let data = sigma.as_slice();
                col[..=k].copy_from_slice(&data[k * m..k * m + k + 1]);
                for (r, dst) in col.iter_mut().enumerate().skip(k + 1) {
                    *dst = data[r * m + k];
                }
            }
            for (mi, ci) in mu.iter_mut().zip(&col) {
                *mi += c_mu * ci;
            }
            if c_sigma != 0.0 {
                let data = sigma.as_mut_slice();
                for (c, &cc) in col.iter().enumerate() {
                    let f = c_sigma * cc;
                    for (dst, &cr) in data[c * m..c * m + c + 1].iter_mut().zip(&col) {
                        *dst -= f * cr;
                    }
                }
            }
        }

        if max_change < EP_TOLERANCE {
            converged = true;
            break;
        }
        if sweep % EP_REFRESH_SWEEPS == 0 {
            let (s_new, mu_new, _, _) = recompute(sigma_z, mu_z, &tau, &nu_site, true)?;
            sigma = s_new;
            mu = mu_new;
        }
    }

    let (sigma, mu, chol_b, sqrt_sites) = recompute(sigma_z, mu_z, &tau, &nu_site, false)?;
    if mu.iter().chain(sigma.diagonal().iter()).any(|v| !v.is_finite()) {
        return Err(Error::numeric("EP produced a non-finite posterior"));
    }
    Ok(EpOutcome {
        state: EpState {
            site_precisions: tau,
            site_precision_means: nu_site,
            converged,
            sweeps_used,
            skipped_updates: skipped,
        },
        sqrt_sites,
        chol_b,
        sigma,
        mu,
    })
}

/// Log of the EP approximation to `∫ N(z; μ_z, Σ_z) Π_k Φ(s_k z_k / ν) dz`.
fn ep_log_normalizer(
    outcome: &EpOutcome,
    mu_z: &DVector<f64>,
    signs: &[f64],
    nu: f64,
) -> f64 {
    let tau = &outcome.state.site_precisions;
    let nu_site = &outcome.state.site_precision_means;
    let m = tau.len();

    let mut total = 0.0;
    for k in 0..m {
        let skk = outcome.sigma[(k, k)];
        let mk = outcome.mu[k];
        let tau_cav = 1.0 / skk - tau[k];
        if !(tau_cav > 0.0) {
            continue;
        }
        let nu_cav = mk / skk - nu_site[k];
        let var_cav = 1.0 / tau_cav;
        let mean_cav = nu_cav * var_cav;
        let kappa = signs[k] * mean_cav / (nu * nu + var_cav).sqrt();
        total += log_norm_cdf(kappa) - 0.5 * (tau_cav * skk).ln() - 0.5 * mk * mk / skk
            + 0.5 * nu_cav * nu_cav / tau_cav;
    }

    let mut shift_quad = 0.0;
    let mut prior_terms = 0.0;
    for k in 0..m {
        prior_terms += -0.5 * tau[k] * mu_z[k] * mu_z[k] + nu_site[k] * mu_z[k];
        let b_k = nu_site[k] - tau[k] * mu_z[k];
        shift_quad += b_k * (outcome.mu[k] - mu_z[k]);
    }
    let log_det_half: f64 = outcome.chol_b.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    total + prior_terms - log_det_half + 0.5 * shift_quad
}

impl MonoPosterior {
    /// Conditions on centered outputs `y` and approximates the constraint
    /// factors of `grid` by EP.
    fn build(xs: &[Vec<f64>], y: &[f64], grid: &VirtualGrid, hyper: &GpHyperparameters) -> Result<Self> {
        let exact = ExactPosterior::new(xs, y, hyper)?;
        let n = xs.len();
        let m = grid.len();
        let d = xs[0].len();
        if let Some(c) = grid.constraints().iter().find(|c| c.point.len() != d || c.dim >= d) {
            return Err(Error::usage(format!(
                "constraint {c:?} does not match the {d}-d training inputs"
            )));
        }
        if m == 0 {
            let log_marginal = exact.log_marginal;
            return Ok(Self {
                exact,
                grid: grid.clone(),
                w: DMatrix::zeros(n, 0),
                state: EpState::empty(),
                sqrt_sites: DVector::zeros(0),
                chol_b: None,
                correction: DVector::zeros(0),
                deriv_mean: Vec::new(),
                deriv_var: Vec::new(),
                log_marginal,
            });
        }

        let cons = grid.constraints();
        let mut k_fz = DMatrix::zeros(n, m);
        for (a, x) in xs.iter().enumerate() {
            for (b, c) in cons.iter().enumerate() {
                k_fz[(a, b)] = cov_dx2_unchecked(x, &c.point, c.dim, hyper);
            }
        }
        let mu_z = k_fz.tr_mul(&exact.alpha);
        let mut w = k_fz;
        exact.chol.l_dirty().solve_lower_triangular_mut(&mut w);

        let mut sigma_z = w.tr_mul(&w);
        sigma_z.neg_mut();
        let jitter = BASE_JITTER * hyper.signal_variance;
        for a in 0..m {
            for b in 0..=a {
                let v = cov_dx_dx2_unchecked(&cons[a].point, cons[a].dim, &cons[b].point, cons[b].dim, hyper);
                sigma_z[(a, b)] += v;
                if a != b {
                    sigma_z[(b, a)] += v;
                }
            }
            sigma_z[(a, a)] += jitter;
        }
        // Keep exact symmetry so the EP updates stay symmetric.
        for a in 0..m {
            for b in 0..a {
                let avg = 0.5 * (sigma_z[(a, b)] + sigma_z[(b, a)]);
                sigma_z[(a, b)] = avg;
                sigma_z[(b, a)] = avg;
            }
        }
        if sigma_z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("derivative covariance is not finite"));
        }

        let signs: Vec<f64> = cons.iter().map(|c| c.sign as f64).collect();
        let outcome = run_ep(&mu_z, &sigma_z, &signs, grid.nu())?;
        let log_z = ep_log_normalizer(&outcome, &mu_z, &signs, grid.nu());
        let log_marginal = exact.log_marginal + log_z;
        if !log_marginal.is_finite() {
            return Err(Error::numeric("EP log evidence is not finite"));
        }

        let shift = DVector::from_iterator(
            m,
            (0..m).map(|k| outcome.state.site_precision_means[k] - outcome.state.site_precisions[k] * mu_z[k]),
        );
        let mut t = (&sigma_z * &shift).component_mul(&outcome.sqrt_sites);
        outcome.chol_b.solve_mut(&mut t);
        let correction = shift - t.component_mul(&outcome.sqrt_sites);

        Ok(Self {
            exact,
            grid: grid.clone(),
            w,
            deriv_mean: outcome.mu.iter().copied().collect(),
            deriv_var: outcome.sigma.diagonal().iter().map(|v| v.max(0.0)).collect(),
            state: outcome.state,
            sqrt_sites: outcome.sqrt_sites,
            chol_b: Some(outcome.chol_b),
            correction,
            log_marginal,
        })
    }

    pub fn state(&self) -> &EpState {
        &self.state
    }

    pub fn grid(&self) -> &VirtualGrid {
        &self.grid
    }

    pub fn hyper(&self) -> &GpHyperparameters {
        &self.exact.hyper
    }

    /// Approximate log evidence: exact Gaussian part plus the EP normalizer.
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// Posterior means of the derivative latents, in constraint order.
    pub fn derivative_mean(&self) -> &[f64] {
        &self.deriv_mean
    }

    pub fn derivative_variance(&self) -> &[f64] {
        &self.deriv_var
    }

    /// Mean and variance (unclamped) of the centered latent function at `q`.
    fn query(&self, q: &[f64]) -> (f64, f64) {
        let (mean, var, u) = self.exact.query(q);
        let Some(chol_b) = &self.chol_b else {
            return (mean, var);
        };
        let m = self.grid.len();
        let hyper = &self.exact.hyper;
        let cons = self.grid.constraints();
        let mut c = DVector::from_iterator(
            m,
            cons.iter().map(|k| cov_dx2_unchecked(q, &k.point, k.dim, hyper)),
        );
        c -= self.w.tr_mul(&u);
        let mean = mean + c.dot(&self.correction);
        let mut scaled = c.component_mul(&self.sqrt_sites);
        chol_b.l_dirty().solve_lower_triangular_mut(&mut scaled);
        (mean, var - scaled.norm_squared())
    }

    /// Posterior of the centered latent function at training inputs followed
    /// by the derivative latents.
    pub fn latent_summary(&self) -> PosteriorSummary {
        let (mut mean, mut variance): (Vec<f64>, Vec<f64>) = self
            .exact
            .xs
            .iter()
            .map(|x| {
                let (m, v) = self.query(x);
                (m, v.max(0.0))
            })
            .unzip();
        mean.extend_from_slice(&self.deriv_mean);
        variance.extend_from_slice(&self.deriv_var);
        PosteriorSummary { mean, variance }
    }
}

/// EP posterior for centered outputs of `training` in data units.
pub fn ep_posterior(
    training: &TrainingSet,
    grid: &VirtualGrid,
    hyper: &GpHyperparameters,
) -> Result<MonoPosterior> {
    MonoPosterior::build(training.inputs(), &training.centered(), grid, hyper)
}

pub fn ep_log_marginal(training: &TrainingSet, grid: &VirtualGrid, hyper: &GpHyperparameters) -> Result<f64> {
    Ok(ep_posterior(training, grid, hyper)?.log_marginal())
}

/// A monotonicity-constrained GP ready for prediction.
#[derive(Debug, Clone)]
pub struct FittedMonoGp {
    training: TrainingSet,
    scale: f64,
    posterior: MonoPosterior,
}

impl FittedMonoGp {
    /// Conditions with fixed data-unit hyperparameters.
    pub fn with_hyper(training: TrainingSet, grid: &VirtualGrid, hyper: GpHyperparameters) -> Result<Self> {
        let posterior = ep_posterior(&training, grid, &hyper)?;
        Ok(Self {
            training,
            scale: 1.0,
            posterior,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    /// Hyperparameters in data units.
    pub fn hyper(&self) -> GpHyperparameters {
        self.posterior.hyper().scale_variances(self.scale * self.scale)
    }

    /// EP state of the final posterior.
    pub fn ep_state(&self) -> &EpState {
        self.posterior.state()
    }

    /// Posterior means of the derivative latents in data units.
    pub fn derivative_mean(&self) -> Vec<f64> {
        self.posterior.derivative_mean().iter().map(|v| v * self.scale).collect()
    }

    /// Log evidence in data units.
    pub fn log_marginal(&self) -> f64 {
        self.posterior.log_marginal() - self.training.len() as f64 * self.scale.ln()
    }

    pub fn predict(&self, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
        check_queries(xq, self.training.dim())?;
        let s2 = self.scale * self.scale;
        let (mean, variance) = xq
            .iter()
            .map(|q| {
                let (m, v) = self.posterior.query(q);
                (self.training.offset() + self.scale * m, (s2 * v).max(0.0))
            })
            .unzip();
        Ok(PosteriorSummary { mean, variance })
    }
}

pub fn predict_mono(model: &FittedMonoGp, xq: &[Vec<f64>]) -> Result<PosteriorSummary> {
    model.predict(xq)
}

/// Above this many constraints each evidence evaluation costs tens of
/// milliseconds, so [`fit_mono`] screens its starts and refines only the best.
pub const FULL_MULTISTART_MAX_SITES: usize = 64;

/// Default search for `grid`: the same starts as the unconstrained fit, all
/// refined for small grids, only the best one refined for large grids.
pub fn default_mono_fit_options(grid: &VirtualGrid) -> FitOptions {
    FitOptions {
        refine_best: (grid.len() > FULL_MULTISTART_MAX_SITES).then_some(1),
        ..FitOptions::default()
    }
}

/// Fits hyperparameters by maximizing the EP evidence on standardized
/// outputs; `ν` is applied on the standardized scale. Deterministic given
/// `seed`.
pub fn fit_mono(training: &TrainingSet, grid: &VirtualGrid, seed: u64) -> Result<FittedMonoGp> {
    fit_mono_with_options(training, grid, seed, &default_mono_fit_options(grid))
}

pub fn fit_mono_with_options(
    training: &TrainingSet,
    grid: &VirtualGrid,
    seed: u64,
    opts: &FitOptions,
) -> Result<FittedMonoGp> {
    let scale = training.output_scale();
    let y: Vec<f64> = training.centered().iter().map(|v| v / scale).collect();
    let xs = training.inputs();
    let (hyper_std, _) = search_hyperparameters(training.len(), seed, opts, |h| {
        MonoPosterior::build(xs, &y, grid, h)
            .map(|p| p.log_marginal)
            .unwrap_or(f64::NEG_INFINITY)
    })?;
    let posterior = MonoPosterior::build(xs, &y, grid, &hyper_std)?;
    Ok(FittedMonoGp {
        training: training.clone(),
        scale,
        posterior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{log_marginal_likelihood, FittedGp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (TrainingSet, VirtualGrid, GpHyperparameters) {
        let t = TrainingSet::uncentered(vec![vec![0.2], vec![0.7]], vec![0.5, 0.1]).unwrap();
        let v = DerivativeIndex::new(vec![0.45], 0, 1).unwrap();
        let g = VirtualGrid::new(vec![vec![0.45]], vec![v], DEFAULT_NU).unwrap();
        let h = GpHyperparameters::new(1.0, 0.3, 0.05).unwrap();
        (t, g, h)
    }

    #[test]
    fn grid_sizes() {
        let g = make_virtual_grid(1, 10, &[1], 0.1).unwrap();
        assert_eq!(g.points().len(), 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g.points()[0], vec![0.0]);
        assert!((g.points()[1][0] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(g.points()[9], vec![1.0]);

        let g = make_virtual_grid(2, 10, &[1, -1], 0.1).unwrap();
        assert_eq!((g.points().len(), g.len()), (100, 200));
        let g = make_virtual_grid(3, 4, &[1, 1, -1], 0.1).unwrap();
        assert_eq!((g.points().len(), g.len()), (64, 192));
        let g = make_virtual_grid(2, 3, &[0, 1], 0.1).unwrap();
        assert_eq!((g.points().len(), g.len()), (9, 9));
        assert!(g.constraints().iter().all(|c| c.dim == 1));
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(make_virtual_grid(2, 4, &[0, 0], 0.1), Err(Error::Usage(_))));
        assert!(make_virtual_grid(1, 1, &[1], 0.1).is_err());
        assert!(make_virtual_grid(2, 4, &[1], 0.1).is_err());
        assert!(make_virtual_grid(1, 4, &[1], 0.0).is_err());
    }

    #[test]
    fn empty_grid_reproduces_exact_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let t = TrainingSet::new(x, y).unwrap();
        let h = GpHyperparameters::new(0.8, 0.4, 0.01).unwrap();
        let g = VirtualGrid::empty(DEFAULT_NU);
        let q: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random(), rng.random()]).collect();
        let a = FittedMonoGp::with_hyper(t.clone(), &g, h).unwrap().predict(&q).unwrap();
        let b = FittedGp::with_hyper(t.clone(), h).unwrap().predict(&q).unwrap();
        assert_eq!(a, b);
        let la = ep_log_marginal(&t, &g, &h).unwrap();
        let lb = log_marginal_likelihood(&t, &h).unwrap();
        assert_eq!(la, lb);
    }

    // With one site EP moment matching is exact, so the posterior equals the
    // closed-form moments of a Gaussian tilted by a single probit factor, up
    // to the EP stopping tolerance (site changes below 1e-6).
    fn single_site_oracle(
        t: &TrainingSet,
        v: &DerivativeIndex,
        nu: f64,
        h: &GpHyperparameters,
        q: &[f64],
    ) -> (f64, f64, f64) {
        let mut xs = t.inputs().to_vec();
        xs.push(q.to_vec());
        let k = crate::kernel::build_joint_covariance(&xs, std::slice::from_ref(v), h).unwrap();
        let jitter = crate::kernel::BASE_JITTER * h.signal_variance;
        let n = t.len();
        let mut c = k.view((0, 0), (n, n)).into_owned();
        for i in 0..n {
            c[(i, i)] += h.noise_variance + jitter;
        }
        let y = DVector::from_vec(t.centered());
        let rest = [n, n + 1];
        let mut cross = DMatrix::zeros(n, 2);
        let mut prior = DMatrix::zeros(2, 2);
        for (a, &ia) in rest.iter().enumerate() {
            for i in 0..n {
                cross[(i, a)] = k[(i, ia)];
            }
            for (b, &ib) in rest.iter().enumerate() {
                prior[(a, b)] = k[(ia, ib)];
            }
        }
        prior[(1, 1)] += jitter;
        let chol = c.clone().cholesky().unwrap();
        let mean = cross.transpose() * chol.solve(&y);
        let cov = prior - cross.transpose() * chol.solve(&cross);
        let (mq, mz) = (mean[0], mean[1]);
        let (vq, vz, cqz) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);

        let s = v.sign as f64;
        let root = (nu * nu + vz).sqrt();
        let kappa = s * mz / root;
        let ratio = crate::stats::inverse_mills(kappa);
        let ez = mz + s * vz * ratio / root;
        let varz = vz - vz * vz * ratio * (kappa + ratio) / (nu * nu + vz);
        let mean_q = mq + cqz / vz * (ez - mz);
        let var_q = vq - cqz * cqz / vz + cqz * cqz / (vz * vz) * varz;
        let evidence = log_marginal_likelihood(t, h).unwrap() + crate::stats::log_norm_cdf(kappa);
        (mean_q + t.offset(), var_q, evidence)
    }

    #[test]
    fn single_site_matches_closed_form() {
        let (t, _, h) = toy();
        for (nu, sign) in [(DEFAULT_NU, 1), (DEFAULT_NU, -1), (0.02, 1), (1e6, 1)] {
            let v = DerivativeIndex::new(vec![0.45], 0, sign).unwrap();
            let g = VirtualGrid::new(vec![vec![0.45]], vec![v.clone()], nu).unwrap();
            let m = FittedMonoGp::with_hyper(t.clone(), &g, h).unwrap();
            assert!(m.ep_state().converged);
            for q in [0.1, 0.45, 0.9] {
                let p = m.predict(&[vec![q]]).unwrap();
                let (mean, var, evidence) = single_site_oracle(&t, &v, nu, &h, &[q]);
                assert!((p.mean[0] - mean).abs() < 1e-7, "ν {nu} s {sign} q {q}: {} vs {mean}", p.mean[0]);
                assert!((p.variance[0] - var).abs() < 1e-7, "ν {nu} s {sign} q {q}: {} vs {var}", p.variance[0]);
                assert!((m.log_marginal() - evidence).abs() < 1e-7);
            }
        }
    }

    // At ν = 1e6 the remaining effect of the site is first order in 1/ν
    // (about 1e-7 here), so differences are measured against the posterior
    // standard deviation rather than a mean that may be near zero.
    #[test]
    fn huge_slack_is_uninformative() {
        let (t, g, h) = toy();
        let g = g.with_nu(1e6);
        let post = ep_posterior(&t, &g, &h).unwrap();
        assert!(post.state().converged);
        let q = vec![vec![0.1], vec![0.45], vec![0.9]];
        let a = FittedMonoGp::with_hyper(t.clone(), &g, h).unwrap().predict(&q).unwrap();
        let b = FittedGp::with_hyper(t.clone(), h).unwrap().predict(&q).unwrap();
        for i in 0..3 {
            let scale = b.mean[i].abs().max(b.variance[i].sqrt());
            assert!((a.mean[i] - b.mean[i]).abs() <= 1e-6 * scale, "{a:?} {b:?}");
            assert!((a.variance[i] - b.variance[i]).abs() <= 1e-6 * b.variance[i]);
        }
        let diff = ep_log_marginal(&t, &g, &h).unwrap() - log_marginal_likelihood(&t, &h).unwrap();
        assert!((diff - 0.5f64.ln()).abs() < 1e-4, "{diff}");
    }

    #[test]
    fn constraint_pushes_derivative_positive() {
        // Data decreasing, constraint says increasing: the posterior slope at
        // the virtual point is pulled towards zero from below.
        let (t, g, h) = toy();
        let post = ep_posterior(&t, &g, &h).unwrap();
        let free = FittedGp::with_hyper(t.clone(), h).unwrap();
        let eps = 1e-5;
        let p = free.predict(&[vec![0.45 + eps], vec![0.45 - eps]]).unwrap();
        let free_slope = (p.mean[0] - p.mean[1]) / (2.0 * eps);
        assert!(free_slope < 0.0);
        assert!(post.derivative_mean()[0] > free_slope);
        assert!(post.state().converged);
        assert!(post.state().site_precisions.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn sign_flip_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0] - 0.5 * p[1] + 0.1 * rng.random::<f64>()).collect();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let g = make_virtual_grid(2, 3, &[1, -1], DEFAULT_NU).unwrap();
        let h = GpHyperparameters::new(1.0, 0.4, 0.01).unwrap();
        let a = FittedMonoGp::with_hyper(TrainingSet::new(x.clone(), y).unwrap(), &g, h).unwrap();
        let b = FittedMonoGp::with_hyper(TrainingSet::new(x, neg).unwrap(), &g.flipped(), h).unwrap();
        let q: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random(), rng.random()]).collect();
        let pa = a.predict(&q).unwrap();
        let pb = b.predict(&q).unwrap();
        for i in 0..q.len() {
            assert!((pa.mean[i] + pb.mean[i]).abs() < 1e-8);
            assert!((pa.variance[i] - pb.variance[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_mono_is_deterministic_and_monotone() {
        let x: Vec<Vec<f64>> = [0.05, 0.3, 0.55, 0.8, 0.95].iter().map(|v| vec![*v]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).tanh()).collect();
        let t = TrainingSet::new(x, y.clone()).unwrap();
        let g = make_virtual_grid(1, 10, &[1], DEFAULT_NU).unwrap();
        let a = fit_mono(&t, &g, 5).unwrap();
        let b = fit_mono(&t, &g, 5).unwrap();
        assert_eq!(a.hyper(), b.hyper());

        let q: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
        let p = a.predict(&q).unwrap();
        let range = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        for w in p.mean.windows(2) {
            assert!(w[1] >= w[0] - 1e-3 * range);
        }
        assert!(a.derivative_mean().iter().all(|v| *v >= 0.0));

        let default = crate::gp::default_hyperparameters().scale_variances(t.output_scale().powi(2));
        let default_lml = FittedMonoGp {
            training: t.clone(),
            scale: t.output_scale(),
            posterior: MonoPosterior::build(
                t.inputs(),
                &t.centered().iter().map(|v| v / t.output_scale()).collect::<Vec<_>>(),
                &g,
                &crate::gp::default_hyperparameters(),
            )
            .unwrap(),
        }
        .log_marginal();
        assert!(a.log_marginal() >= default_lml - 1e-9, "{default:?}");
    }
}
