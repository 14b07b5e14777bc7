//! Bootstrap engines for reserve predictive distributions.
//!
//! All engines share the same residual-bootstrap skeleton: draw residuals
//! with replacement from the non-corner pool, back-transform them into a
//! pseudo-history `y = r sqrt(mu) + mu`, re-estimate, and record the total
//! reserve. They differ in which fit supplies residuals and means, how the
//! pool is drawn, and how the re-estimation is done:
//!
//! * **TCL** — classical fit, uniform draws, classical refit.
//! * **CB** — robust fit, uniform draws, robust refit.
//! * **WB** — robust fit, uniform draws from a winsorized pool, robust refit.
//! * **IFB** — robust fit, draws weighted against high-influence cells,
//!   classical refit.
//! * **FRB** — robust fit, uniform draws, and a single linear solve per
//!   replicate in place of the refit.
//!
//! Classical refits go through the development-factor closed form of the
//! quasi score equations ([`glm::chain_ladder_reserve`]), which reproduces
//! the quasi-likelihood refit wherever it exists and stays defined for
//! pseudo-histories with negative column totals.
//!
//! Every replicate derives its random stream from `(seed, replicate index)`
//! alone, so results are bit-identical for any worker count.

use nalgebra::{DMatrix, DVector, LU};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_pdf, normal_sf, wilson_hilferty_z};
use crate::error::{Error, Result};
use crate::exec::ExecOptions;
use crate::glm;
use crate::residuals::{classical_residuals, robust_residuals, ResidualSet, ResidualVariant};
use crate::robust::{self, RobustFit};
use crate::triangle::{DesignMatrix, Triangle};

/// The five bootstrap procedures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMethod {
    /// Classical chain ladder with the classical bootstrap.
    Tcl,
    /// Robust chain ladder with the classical bootstrap (robust refits).
    Cb,
    /// Robust chain ladder resampling from a winsorized pool.
    Wb,
    /// Influence-function bootstrap: downweighted resampling, classical refits.
    Ifb,
    /// Fast-and-robust bootstrap: one linear solve per replicate.
    Frb,
}

impl std::fmt::Display for BootstrapMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BootstrapMethod::Tcl => "tcl",
            BootstrapMethod::Cb => "cb",
            BootstrapMethod::Wb => "wb",
            BootstrapMethod::Ifb => "ifb",
            BootstrapMethod::Frb => "frb",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for BootstrapMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcl" => Ok(BootstrapMethod::Tcl),
            "cb" => Ok(BootstrapMethod::Cb),
            "wb" => Ok(BootstrapMethod::Wb),
            "ifb" => Ok(BootstrapMethod::Ifb),
            "frb" => Ok(BootstrapMethod::Frb),
            other => Err(Error::Validation(format!(
                "unknown bootstrap method '{other}' (expected tcl, cb, wb, ifb, or frb)"
            ))),
        }
    }
}

/// Which point estimator refits the pseudo-histories in the classical
/// engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Classical,
    Robust,
}

/// Influence-function resampling parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfbParams {
    /// Scale of the weight decay beyond the cutoff.
    pub d: f64,
    /// Shape of the weight decay (heavier tails for smaller gamma).
    pub gamma: f64,
    /// Empirical quantile level of the RESIF values used as the cutoff.
    pub quantile_level: f64,
}

impl Default for IfbParams {
    fn default() -> Self {
        IfbParams {
            d: 30.0,
            gamma: 10.0,
            quantile_level: 0.90,
        }
    }
}

/// Options shared by all bootstrap engines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapOptions {
    /// Number of replicates B.
    pub replicates: usize,
    /// Run seed; replicate `b` uses stream `b` of this seed.
    pub seed: u64,
    /// Residual adjustment applied before pooling.
    pub residual_variant: ResidualVariant,
    /// Huber tuning constant for the robust fits and refits.
    pub huber_c: f64,
    /// Tail fraction winsorized by the WB engine.
    pub winsor_fraction: f64,
    /// Influence-function weight parameters for the IFB engine.
    pub ifb: IfbParams,
    /// Thread-count preference.
    pub exec: ExecOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 1000,
            seed: 0,
            residual_variant: ResidualVariant::Cordeiro,
            huber_c: robust::DEFAULT_HUBER_C,
            winsor_fraction: 0.10,
            ifb: IfbParams::default(),
            exec: ExecOptions::default(),
        }
    }
}

/// The replicate reserves of a bootstrap run.
#[derive(Clone, Debug)]
pub struct BootstrapResult {
    reserves: Vec<f64>,
    method: BootstrapMethod,
    residual_variant: ResidualVariant,
    replicates: usize,
    seed: u64,
    failed: usize,
}

impl BootstrapResult {
    /// Replicate total reserves in replicate order; failed replicates are
    /// omitted, so the length is `replicates() - failed()`.
    pub fn reserves(&self) -> &[f64] {
        &self.reserves
    }

    /// Which engine produced the run.
    pub fn method(&self) -> BootstrapMethod {
        self.method
    }

    /// Residual adjustment used for the pool.
    pub fn residual_variant(&self) -> ResidualVariant {
        self.residual_variant
    }

    /// Requested number of replicates.
    pub fn replicates(&self) -> usize {
        self.replicates
    }

    /// Run seed.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replicates dropped for non-convergence.
    pub fn failed(&self) -> usize {
        self.failed
    }

    /// Interpolated order-statistic quantile of the replicate reserves.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        quantile(&self.reserves, p)
    }

    /// Mean replicate reserve.
    pub fn mean(&self) -> f64 {
        self.reserves.iter().sum::<f64>() / self.reserves.len() as f64
    }

    /// Standard deviation of the replicate reserves (the bootstrap estimate
    /// of prediction error).
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.reserves.iter().map(|r| (r - m) * (r - m)).sum();
        (ss / (self.reserves.len().saturating_sub(1).max(1)) as f64).sqrt()
    }
}

// ---- Resampling primitives ----------------------------------------------

/// Interpolated order-statistic quantile: the value at (1-based) position
/// `1 + p (m - 1)` of the sorted sample, linearly interpolated between
/// adjacent order statistics.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation(
            "cannot take a quantile of an empty sample".to_string(),
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Validation(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Draw one residual per observed cell (corner targets included) from the
/// non-corner pool, uniformly or with the supplied per-cell probabilities.
pub fn resample_residuals(
    rs: &ResidualSet,
    probs: Option<&[f64]>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let values = rs.values();
    let pool_idx = rs.pool_indices();
    if pool_idx.is_empty() {
        return Err(Error::Validation(
            "residual resampling pool is empty".to_string(),
        ));
    }
    let draw_targets = values.len();
    let mut out = Vec::with_capacity(draw_targets);
    match probs {
        None => {
            for _ in 0..draw_targets {
                let k = pool_idx[rng.gen_range(0..pool_idx.len())];
                out.push(values[k]);
            }
        }
        Some(p) => {
            if p.len() != values.len() {
                return Err(Error::Validation(format!(
                    "probability vector has length {}, expected {}",
                    p.len(),
                    values.len()
                )));
            }
            if let Some(bad) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Validation(format!(
                    "resampling probabilities must be finite and non-negative, got {bad}"
                )));
            }
            for (k, flag) in rs.corner_excluded().iter().enumerate() {
                if *flag && p[k] != 0.0 {
                    return Err(Error::Validation(format!(
                        "corner cell at index {k} must have zero resampling probability"
                    )));
                }
            }
            let weights: Vec<f64> = pool_idx.iter().map(|&k| p[k]).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| {
                Error::Validation(format!("invalid resampling probabilities: {e}"))
            })?;
            for _ in 0..draw_targets {
                out.push(values[pool_idx[dist.sample(rng)]]);
            }
        }
    }
    Ok(out)
}

/// Back-transform resampled residuals into a pseudo-history
/// `y = r sqrt(mu) + mu`; values may be negative or non-integer.
pub fn pseudo_history(r_b: &[f64], mu: &[f64]) -> Vec<f64> {
    debug_assert_eq!(r_b.len(), mu.len());
    r_b.iter()
        .zip(mu)
        .map(|(&r, &m)| {
            debug_assert!(m > 0.0, "pseudo-history needs positive means");
            r * m.sqrt() + m
        })
        .collect()
}

/// Winsorize a slice in place: the `floor(fraction * len)` smallest values
/// are raised to the next order statistic up, and symmetrically at the top.
pub fn winsorize_values(values: &mut [f64], fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::Validation(format!(
            "winsorizing fraction must lie in (0, 0.5), got {fraction}"
        )));
    }
    let m = values.len();
    let k = (fraction * m as f64).floor() as usize;
    if k == 0 {
        return Ok(());
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = sorted[k];
    let hi = sorted[m - 1 - k];
    for v in values.iter_mut() {
        *v = v.clamp(lo, hi);
    }
    Ok(())
}

/// Winsorize the non-corner pool of a residual set; corner cells stay
/// pinned at zero and excluded.
pub fn winsorize(rs: &ResidualSet, fraction: f64) -> Result<ResidualSet> {
    let pool_idx = rs.pool_indices();
    let mut pool: Vec<f64> = pool_idx.iter().map(|&k| rs.values()[k]).collect();
    winsorize_values(&mut pool, fraction)?;
    let mut values = rs.values().to_vec();
    for (slot, &k) in pool_idx.iter().enumerate() {
        values[k] = pool[slot];
    }
    Ok(rs.with_values(values, rs.variant()))
}

// ---- Influence-function weights ------------------------------------------

/// Influence-based resampling weight: 1 up to the cutoff, then the smooth
/// decay `[1 + (x - c)^2 / (gamma d^2)]^(-(gamma + 1)/2)`.
pub fn influence_weight(resif: f64, c: f64, d: f64, gamma: f64) -> f64 {
    if resif <= c {
        1.0
    } else {
        let t = (resif - c) * (resif - c) / (gamma * d * d);
        (1.0 + t).powf(-(gamma + 1.0) / 2.0)
    }
}

/// Per-cell influence diagnostics and the resampling distribution built
/// from them.
#[derive(Clone, Debug)]
pub struct IfbWeights {
    resif: Vec<f64>,
    c: f64,
    d: f64,
    gamma: f64,
    probs: Vec<f64>,
}

impl IfbWeights {
    /// Robust empirical standardized influence per cell, `|y - mu|/sqrt(mu)`
    /// against the robust fit.
    pub fn resif(&self) -> &[f64] {
        &self.resif
    }

    /// Cutoff below which cells keep full weight.
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Per-cell resampling probabilities: zero on corners, summing to one.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Resampling weights that shrink the influence of outlying cells: RESIF is
/// the absolute Pearson residual against the robust fit, the cutoff is its
/// empirical `quantile_level`-quantile, and cells beyond the cutoff decay
/// smoothly via [`influence_weight`].
pub fn ifb_weights(
    fit: &RobustFit,
    d: f64,
    gamma: f64,
    quantile_level: f64,
) -> Result<IfbWeights> {
    if !(d > 0.0) || !(gamma > 0.0) {
        return Err(Error::Validation(format!(
            "influence weight constants must be positive, got d = {d}, gamma = {gamma}"
        )));
    }
    let resif: Vec<f64> = fit.residuals().iter().map(|r| r.abs()).collect();
    let c = quantile(&resif, quantile_level)?;
    let tri_n = fit.n();
    let corner: Vec<bool> = crate::triangle::cell_order(tri_n)
        .map(|(i, j)| crate::triangle::is_corner(tri_n, i, j))
        .collect();
    let weights: Vec<f64> = resif
        .iter()
        .map(|&x| influence_weight(x, c, d, gamma))
        .collect();
    let total: f64 = weights
        .iter()
        .zip(&corner)
        .filter(|(_, &is_c)| !is_c)
        .map(|(&w, _)| w)
        .sum();
    if !(total > 0.0) {
        return Err(Error::Validation(
            "influence weights sum to zero over the resampling pool".to_string(),
        ));
    }
    let probs: Vec<f64> = weights
        .iter()
        .zip(&corner)
        .map(|(&w, &is_c)| if is_c { 0.0 } else { w / total })
        .collect();
    Ok(IfbWeights {
        resif,
        c,
        d,
        gamma,
        probs,
    })
}

// ---- Replicate scheduling -------------------------------------------------

/// Run `replicates` independent replicates, each on its own RNG stream,
/// collecting successes in replicate order and counting failures (errors
/// and results rejected by `valid`). Aborts when more than 5% of the
/// replicates fail.
pub(crate) fn run_replicates<T, F>(
    replicates: usize,
    seed: u64,
    exec: ExecOptions,
    valid: fn(&T) -> bool,
    replicate: F,
) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    if replicates == 0 {
        return Err(Error::Validation(
            "bootstrap needs at least one replicate".to_string(),
        ));
    }
    let outcomes = crate::exec::map_indices(replicates, exec, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        match replicate(b, &mut rng) {
            Ok(v) if valid(&v) => Some(v),
            _ => None,
        }
    });
    let mut reserves = Vec::with_capacity(replicates);
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Some(v) => reserves.push(v),
            None => failed += 1,
        }
    }
    if failed as f64 > 0.05 * replicates as f64 {
        return Err(Error::ExcessFailures {
            failed,
            total: replicates,
        });
    }
    Ok((reserves, failed))
}

// ---- Classical / robust-refit engines ------------------------------------

fn refit_engine(
    tri: &Triangle,
    estimator: Estimator,
    rs: &ResidualSet,
    probs: Option<&[f64]>,
    opts: &BootstrapOptions,
    method: BootstrapMethod,
) -> Result<BootstrapResult> {
    if rs.n() != tri.n() {
        return Err(Error::Validation(format!(
            "residual set is for n = {}, triangle has n = {}",
            rs.n(),
            tri.n()
        )));
    }
    let n = tri.n();
    // Means and warm start come from the fit matching the estimator; the
    // caller's residual set is expected to come from the same fit.
    let (mu, theta0, robust_c) = match estimator {
        Estimator::Classical => {
            let fit = glm::fit_poisson(tri)?;
            (fit.mu().to_vec(), fit.theta().to_vec(), None)
        }
        Estimator::Robust => {
            let fit = robust::fit_robust(tri, opts.huber_c, None)?;
            (fit.mu().to_vec(), fit.theta().to_vec(), Some(opts.huber_c))
        }
    };
    let (reserves, failed) = run_replicates(
        opts.replicates,
        opts.seed,
        opts.exec,
        |v: &f64| v.is_finite(),
        |_, rng| {
            let r_star = resample_residuals(rs, probs, rng)?;
            let y_star = pseudo_history(&r_star, &mu);
            match robust_c {
                // The classical refit solves the quasi score equations
                // through the development-factor closed form, which also
                // covers pseudo-histories whose negative column totals put
                // the solution outside the log-link parametrization.
                None => glm::chain_ladder_reserve(n, &y_star),
                Some(c) => {
                    let theta_b = robust::fit_robust_quasi(n, &y_star, &theta0, c)?.theta;
                    Ok(glm::reserve_from_theta(n, &theta_b))
                }
            }
        },
    )?;
    Ok(BootstrapResult {
        reserves,
        method,
        residual_variant: rs.variant(),
        replicates: opts.replicates,
        seed: opts.seed,
        failed,
    })
}

/// The classical bootstrap: uniform resampling and a full refit per
/// replicate — development factors for [`Estimator::Classical`] (TCL),
/// robust quasi-likelihood for [`Estimator::Robust`] (CB).
///
/// `rs` should be the residual set of the corresponding fit on `tri`.
pub fn bootstrap_classical(
    tri: &Triangle,
    estimator: Estimator,
    rs: &ResidualSet,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    let method = match estimator {
        Estimator::Classical => BootstrapMethod::Tcl,
        Estimator::Robust => BootstrapMethod::Cb,
    };
    refit_engine(tri, estimator, rs, None, opts, method)
}

/// The winsorized bootstrap (WB): robust fit, pool winsorized at
/// `opts.winsor_fraction` per tail, robust refits.
pub fn bootstrap_winsorized(tri: &Triangle, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    let fit = robust::fit_robust(tri, opts.huber_c, None)?;
    let rs = robust_residuals(&fit, tri, opts.residual_variant)?;
    let rs = winsorize(&rs, opts.winsor_fraction)?;
    refit_engine(
        tri,
        Estimator::Robust,
        &rs,
        None,
        opts,
        BootstrapMethod::Wb,
    )
}

/// The influence-function bootstrap (IFB): residuals and means from the
/// robust fit, resampling probabilities shrunk on high-influence cells,
/// classical refits.
pub fn bootstrap_ifb(tri: &Triangle, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    let n = tri.n();
    let fit = robust::fit_robust(tri, opts.huber_c, None)?;
    let rs = robust_residuals(&fit, tri, opts.residual_variant)?;
    let weights = ifb_weights(&fit, opts.ifb.d, opts.ifb.gamma, opts.ifb.quantile_level)?;
    let mu = fit.mu().to_vec();
    let (reserves, failed) = run_replicates(
        opts.replicates,
        opts.seed,
        opts.exec,
        |v: &f64| v.is_finite(),
        |_, rng| {
            let r_star = resample_residuals(&rs, Some(weights.probs()), rng)?;
            let y_star = pseudo_history(&r_star, &mu);
            glm::chain_ladder_reserve(n, &y_star)
        },
    )?;
    Ok(BootstrapResult {
        reserves,
        method: BootstrapMethod::Ifb,
        residual_variant: rs.variant(),
        replicates: opts.replicates,
        seed: opts.seed,
        failed,
    })
}

// ---- Fast-and-robust bootstrap -------------------------------------------

/// Precomputed pieces of the fast-and-robust update
/// `theta_b = theta_hat - grad^(-1) psi_b(theta_hat)`.
///
/// [`frb_prepare`] builds the state over the observed triangle; the
/// one-year CDR builds a second state over the history extended by the
/// forecast anti-diagonal. [`frb_solve`] runs the update against either.
pub struct FrbState {
    n: usize,
    c: f64,
    theta_hat: Vec<f64>,
    mu: Vec<f64>,
    sqrt_mu: Vec<f64>,
    expected: Vec<f64>,
    x_weights: Vec<f64>,
    design: DMatrix<f64>,
    grad: DMatrix<f64>,
    frozen: Vec<bool>,
    factorization: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl FrbState {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Robust point estimate the updates are anchored at.
    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    /// Fitted means of the robust fit (the back-transform means).
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// The estimating-equation gradient at the point estimate.
    pub fn grad(&self) -> &DMatrix<f64> {
        &self.grad
    }

    /// Parameters held fixed across replicates because the data pin them
    /// at the parameter floor (zero rows or columns in the triangle).
    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    /// 2-norm condition number of the gradient.
    pub fn condition(&self) -> f64 {
        self.condition
    }
}

/// Smoothed derivative of `E[psi_c]` with respect to the linear predictor.
///
/// The exact expectation is only piecewise differentiable (the clipping
/// boundaries cross integers), so the gradient assembly replaces the
/// Poisson tail sums with their Wilson-Hilferty normal approximations,
/// which are smooth in both arguments, and differentiates those. The
/// clipping boundaries are kept at their real-valued (non-truncated)
/// positions `mu -+ c sqrt(mu)`, with the lower one floored at zero (its
/// derivative is taken as zero while floored).
fn expected_psi_deta_smoothed(mu: f64, c: f64) -> f64 {
    if c >= robust::BIG_C {
        return 0.0;
    }
    let s = mu.sqrt();
    let j2 = mu + c * s;
    let dj2 = mu + 0.5 * c * s;
    let raw_j1 = mu - c * s;
    let (j1, dj1) = if raw_j1 > 0.0 {
        (raw_j1, mu - 0.5 * c * s)
    } else {
        (0.0, 0.0)
    };

    // z evaluated at a = j + m and its eta-derivative through both mu and j.
    let z_at = |j: f64, m: f64| wilson_hilferty_z(j + m - 1.0, mu);
    let dz_at = |j: f64, m: f64, dj: f64| {
        let a = j + m;
        let base = (mu / a).cbrt() - 1.0 + 1.0 / (9.0 * a);
        let d_ratio = (mu / a).cbrt() / a * (a - dj) / 3.0;
        let d_recip = -dj / (9.0 * a * a);
        3.0 * (d_ratio + d_recip) * a.sqrt() + 3.0 * base * dj / (2.0 * a.sqrt())
    };

    let zh1 = z_at(j1, 1.5);
    let zt1 = z_at(j1, 0.5);
    let zh2 = z_at(j2, 1.5);
    let zt2 = z_at(j2, 0.5);
    let dzh1 = dz_at(j1, 1.5, dj1);
    let dzt1 = dz_at(j1, 0.5, dj1);
    let dzh2 = dz_at(j2, 1.5, dj2);
    let dzt2 = dz_at(j2, 0.5, dj2);

    c * (normal_pdf(zh2) * dzh2 + normal_pdf(zh1) * dzh1)
        + 0.5 * s * ((normal_sf(zt2) - normal_sf(zh2)) - (normal_sf(zt1) - normal_sf(zh1)))
        + s * (normal_pdf(zh2) * dzh2 - normal_pdf(zt2) * dzt2 - normal_pdf(zh1) * dzh1
            + normal_pdf(zt1) * dzt1)
}

impl FrbState {
    /// Assemble and factorize the estimating-equation gradient of an
    /// arbitrary cell system at the anchor `theta_hat`, given the system's
    /// design matrix, fitted means, anchor Pearson residuals and design
    /// weights.
    ///
    /// The per-cell coefficient is the derivative of
    /// `(psi_c(r) - E[psi_c]) sqrt(mu)` in the cell's linear predictor,
    /// with the expectation differentiated through the smoothed tails
    /// ([`expected_psi_deta_smoothed`]); the centering value itself stays
    /// exact. Errors if the gradient is singular; `context` names the
    /// caller in that message.
    pub(crate) fn assemble(
        n: usize,
        c: f64,
        theta_hat: Vec<f64>,
        design: DMatrix<f64>,
        mu: Vec<f64>,
        residuals: &[f64],
        x_weights: Vec<f64>,
        context: &str,
    ) -> Result<FrbState> {
        let sqrt_mu: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
        let expected: Vec<f64> = mu.iter().map(|&m| robust::expected_psi(m, c)).collect();

        let nrows = mu.len();
        let mut coeffs = Vec::with_capacity(nrows);
        for k in 0..nrows {
            let m = mu[k];
            let s = sqrt_mu[k];
            let r = residuals[k]; // Pearson residual at the anchor
            let y_k = r * s + m;
            let d_psi = if r.abs() <= c { -0.5 * (y_k + m) } else { 0.0 };
            let coeff = d_psi - expected_psi_deta_smoothed(m, c) * s
                + 0.5 * (robust::huber_psi(r, c) - expected[k]) * s;
            coeffs.push(x_weights[k] * coeff);
        }
        let mut xtd = design.transpose();
        for k in 0..nrows {
            for row in 0..xtd.nrows() {
                xtd[(row, k)] *= coeffs[k];
            }
        }
        let mut grad = &xtd * &design;

        // A zero row or column in the triangle pins its parameter at the
        // parameter floor; the fitted means there underflow to ~0 and the
        // corresponding gradient rows vanish. Any refit of a pseudo-history
        // would floor those parameters again (their pseudo-observations are
        // ~0 too), so the update holds them fixed: decouple their equations
        // and zero their score in [`frb_solve`].
        let p = grad.nrows();
        let dmax = (0..p).map(|l| grad[(l, l)].abs()).fold(0.0, f64::max);
        let mut frozen = vec![false; p];
        for l in 0..p {
            if grad[(l, l)].abs() <= 1e-10 * dmax {
                frozen[l] = true;
                for m in 0..p {
                    grad[(l, m)] = 0.0;
                    grad[(m, l)] = 0.0;
                }
                grad[(l, l)] = -dmax;
            }
        }

        let svd = grad.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = smax / smin;
        if !(smin > 0.0) || !condition.is_finite() {
            return Err(Error::Singular(format!(
                "{context} gradient is singular (condition number {condition:.3e})"
            )));
        }
        let factorization = LU::new(grad.clone());
        Ok(FrbState {
            n,
            c,
            theta_hat,
            mu,
            sqrt_mu,
            expected,
            x_weights,
            design,
            grad,
            frozen,
            factorization,
            condition,
        })
    }
}

/// Build the fast-and-robust update state over the observed triangle.
pub fn frb_prepare(fit: &RobustFit) -> Result<FrbState> {
    let dm = DesignMatrix::new(fit.n());
    FrbState::assemble(
        fit.n(),
        fit.c(),
        fit.theta().to_vec(),
        dm.matrix().clone(),
        fit.mu().to_vec(),
        fit.residuals(),
        fit.x_weights().to_vec(),
        "fast bootstrap",
    )
}

/// One fast-and-robust update: evaluate the state's estimating equations
/// at the anchor on the pseudo-history `y_star` (one value per modelled
/// cell) and take a single Newton step from `theta_hat`.
pub fn frb_solve(state: &FrbState, y_star: &[f64]) -> Result<Vec<f64>> {
    if y_star.len() != state.mu.len() {
        return Err(Error::Validation(format!(
            "pseudo-history has length {}, expected {}",
            y_star.len(),
            state.mu.len()
        )));
    }
    let mut coef = DVector::zeros(state.mu.len());
    for k in 0..state.mu.len() {
        let r = (y_star[k] - state.mu[k]) / state.sqrt_mu[k];
        coef[k] = (robust::huber_psi(r, state.c) - state.expected[k])
            * state.x_weights[k]
            * state.sqrt_mu[k];
    }
    let mut psi = state.design.transpose() * coef;
    for (l, &hold) in state.frozen.iter().enumerate() {
        if hold {
            psi[l] = 0.0;
        }
    }
    let step = state
        .factorization
        .solve(&psi)
        .ok_or_else(|| Error::Singular("fast bootstrap solve failed".to_string()))?;
    Ok(state
        .theta_hat
        .iter()
        .zip(step.iter())
        .map(|(&t, &s)| t - s)
        .collect())
}

/// The fast-and-robust bootstrap (FRB): resample robust-fit residuals
/// uniformly and replace each refit with one linear solve anchored at the
/// point estimate.
pub fn bootstrap_frb(tri: &Triangle, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    let fit = robust::fit_robust(tri, opts.huber_c, None)?;
    let rs = robust_residuals(&fit, tri, opts.residual_variant)?;
    let state = frb_prepare(&fit)?;
    bootstrap_frb_with(&state, &rs, opts)
}

/// FRB replicates from an already-prepared state and residual set (the
/// one-year re-reserving loop shares the state across replicate sets).
pub fn bootstrap_frb_with(
    state: &FrbState,
    rs: &ResidualSet,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    let n = state.n;
    let (reserves, failed) = run_replicates(
        opts.replicates,
        opts.seed,
        opts.exec,
        |v: &f64| v.is_finite(),
        |_, rng| {
            let r_star = resample_residuals(rs, None, rng)?;
            let y_star = pseudo_history(&r_star, &state.mu);
            let theta_b = frb_solve(state, &y_star)?;
            Ok(glm::reserve_from_theta(n, &theta_b))
        },
    )?;
    Ok(BootstrapResult {
        reserves,
        method: BootstrapMethod::Frb,
        residual_variant: rs.variant(),
        replicates: opts.replicates,
        seed: opts.seed,
        failed,
    })
}

/// Run any of the five engines with a consistent residual pipeline.
pub fn bootstrap(
    tri: &Triangle,
    method: BootstrapMethod,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    match method {
        BootstrapMethod::Tcl => {
            let fit = glm::fit_poisson(tri)?;
            let rs = classical_residuals(&fit, tri, opts.residual_variant)?;
            bootstrap_classical(tri, Estimator::Classical, &rs, opts)
        }
        BootstrapMethod::Cb => {
            let fit = robust::fit_robust(tri, opts.huber_c, None)?;
            let rs = robust_residuals(&fit, tri, opts.residual_variant)?;
            bootstrap_classical(tri, Estimator::Robust, &rs, opts)
        }
        BootstrapMethod::Wb => bootstrap_winsorized(tri, opts),
        BootstrapMethod::Ifb => bootstrap_ifb(tri, opts),
        BootstrapMethod::Frb => bootstrap_frb(tri, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residuals::pearson;
    use crate::robust::{expected_psi, fit_robust, huber_psi};
    use crate::triangle::{cell_index, cell_order, num_params, CsvLayout};

    fn load(path: &str) -> Triangle {
        let text = std::fs::read_to_string(path).expect("test data file");
        Triangle::parse_csv(&text, CsvLayout::Incremental).expect("parse test triangle")
    }

    fn taylor_ashe() -> Triangle {
        load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/taylor_ashe.csv"))
    }

    fn benchmark_sim() -> Triangle {
        load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/benchmark_sim.csv"))
    }

    /// A noiseless multiplicative triangle: exact Poisson means, so the GLM
    /// reproduces it perfectly and the robust fit sits in a smooth regime.
    fn smooth_triangle(n: usize) -> Triangle {
        let lambda0 = 10000.0;
        let eta1: f64 = 0.3;
        let eta2 = 0.05;
        let rows: Vec<Vec<f64>> = (1..=n)
            .map(|i| {
                (1..=n + 1 - i)
                    .map(|j| {
                        lambda0
                            * (1.0 + (i as f64 - 1.0) * eta2)
                            * (2.0 * (j as f64 - 1.0) / n as f64 * eta1.ln()).exp()
                    })
                    .collect()
            })
            .collect();
        Triangle::from_rows(&rows).unwrap()
    }

    fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    #[test]
    fn quantile_interpolates_order_statistics() {
        let q = quantile(&[10.0, 20.0, 30.0, 40.0], 0.25).unwrap();
        assert!((q - 17.5).abs() < 1e-12, "hand-evaluated: {q} vs 17.5");
        let v: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        assert!((quantile(&v, 0.5).unwrap() - 50.5).abs() < 1e-12);
        assert_eq!(quantile(&[7.0; 9], 0.83).unwrap(), 7.0, "constant sample");
        assert!(quantile(&[], 0.5).is_err(), "empty sample");
        assert!(quantile(&[1.0], 0.0).is_err(), "level at the boundary");
        assert!(quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn quantile_is_monotone_and_bounded() {
        let v = [3.0, -1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let min = -1.0;
        let max = 9.0;
        let mut last = min;
        for step in 1..20 {
            let p = step as f64 / 20.0;
            let q = quantile(&v, p).unwrap();
            assert!(q >= last - 1e-12, "quantile must be monotone in p");
            assert!((min..=max).contains(&q), "quantile within sample range");
            last = q;
        }
    }

    #[test]
    fn resample_draws_from_the_pool_only() {
        // Distinct non-corner values; corners are pinned at zero, so any
        // zero draw would reveal a corner leak.
        let n = 3;
        let y = vec![110.0, 90.0, 70.0, 120.0, 80.0, 100.0];
        let mu = vec![100.0; 6];
        let rs = pearson(&y, &mu).unwrap();
        let pool: Vec<f64> = rs.pool();
        assert_eq!(pool.len(), 4);
        let mut rng = rng_for(7, 0);
        for _ in 0..50 {
            let draws = resample_residuals(&rs, None, &mut rng).unwrap();
            assert_eq!(draws.len(), 6, "one draw per observed cell");
            for d in &draws {
                assert!(pool.contains(d), "draw {d} must come from the pool");
                assert_ne!(*d, 0.0, "corner residuals must never be drawn");
            }
        }
        // Corner positions receive drawn values.
        let draws = resample_residuals(&rs, None, &mut rng).unwrap();
        assert_ne!(draws[cell_index(n, 1, n)], 0.0);
        assert_ne!(draws[cell_index(n, n, 1)], 0.0);
    }

    #[test]
    fn resample_degenerate_pool_yields_constant_draws() {
        let y = vec![110.0, 110.0, 110.0, 110.0, 110.0, 110.0];
        let mu = vec![100.0; 6];
        let rs = pearson(&y, &mu).unwrap();
        let mut rng = rng_for(3, 0);
        let draws = resample_residuals(&rs, None, &mut rng).unwrap();
        assert!(draws.iter().all(|&d| d == 1.0), "all draws equal the pool value");
    }

    #[test]
    fn resample_is_reproducible_per_stream() {
        let tri = taylor_ashe();
        let fit = glm::fit_poisson(&tri).unwrap();
        let rs = classical_residuals(&fit, &tri, ResidualVariant::Raw).unwrap();
        let a = resample_residuals(&rs, None, &mut rng_for(11, 4)).unwrap();
        let b = resample_residuals(&rs, None, &mut rng_for(11, 4)).unwrap();
        let c = resample_residuals(&rs, None, &mut rng_for(11, 5)).unwrap();
        assert_eq!(a, b, "same seed and stream must reproduce the draws");
        assert_ne!(a, c, "different streams must differ");
    }

    #[test]
    fn weighted_resample_respects_zero_probabilities() {
        let y = vec![110.0, 90.0, 70.0, 120.0, 80.0, 100.0];
        let mu = vec![100.0; 6];
        let rs = pearson(&y, &mu).unwrap();
        // Allow only cells (1,2) and (2,2) — indices 1 and 4.
        let mut probs = vec![0.0; 6];
        probs[1] = 0.5;
        probs[4] = 0.5;
        let allowed = [rs.values()[1], rs.values()[4]];
        let mut rng = rng_for(5, 0);
        for _ in 0..30 {
            let draws = resample_residuals(&rs, Some(&probs), &mut rng).unwrap();
            for d in draws {
                assert!(allowed.contains(&d), "zero-probability cell was drawn: {d}");
            }
        }
        // Nonzero probability on a corner is rejected.
        let mut bad = vec![0.0; 6];
        bad[2] = 1.0; // cell (1,3) is a corner for n = 3
        assert!(resample_residuals(&rs, Some(&bad), &mut rng).is_err());
    }

    #[test]
    fn pseudo_history_backtransforms() {
        let y = pseudo_history(&[0.0, -1.0, -3.0], &[9.0, 4.0, 4.0]);
        assert_eq!(y[0], 9.0, "zero residual reproduces the mean");
        assert_eq!(y[1], 2.0, "4 - 1*2");
        assert_eq!(y[2], -2.0, "negative pseudo-data are allowed");
    }

    #[test]
    fn winsorize_matches_hand_example() {
        let mut v = vec![-3.0, -1.0, 0.0, 1.0, 3.0];
        winsorize_values(&mut v, 0.2).unwrap();
        assert_eq!(v, vec![-1.0, -1.0, 0.0, 1.0, 1.0], "hand-evaluated");
        // Tiny fractions leave the sample untouched.
        let mut w = vec![5.0, -2.0, 7.0];
        winsorize_values(&mut w, 0.01).unwrap();
        assert_eq!(w, vec![5.0, -2.0, 7.0]);
        assert!(winsorize_values(&mut w, 0.0).is_err());
        assert!(winsorize_values(&mut w, 0.5).is_err());
    }

    #[test]
    fn winsorized_pool_bounds_are_order_statistics() {
        let tri = taylor_ashe();
        let fit = glm::fit_poisson(&tri).unwrap();
        let rs = classical_residuals(&fit, &tri, ResidualVariant::Raw).unwrap();
        let rsw = winsorize(&rs, 0.10).unwrap();
        let mut sorted = rs.pool();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let m = sorted.len();
        let k = (0.10 * m as f64).floor() as usize;
        assert!(k >= 1, "fraction 0.10 must clip something on {m} cells");
        let pool = rsw.pool();
        let lo = pool.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pool.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, sorted[k], "pool minimum is the k+1-th order statistic");
        assert_eq!(hi, sorted[m - 1 - k], "pool maximum mirrors it");
        // Corners stay pinned and flagged.
        let n = tri.n();
        assert_eq!(rsw.values()[cell_index(n, 1, n)], 0.0);
        assert_eq!(rsw.values()[cell_index(n, n, 1)], 0.0);
        assert_eq!(rsw.pool().len(), rs.pool().len());
        // Interior values are untouched.
        let touched = rs
            .pool()
            .iter()
            .zip(pool.iter())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(touched, 2 * k, "exactly k values clipped in each tail");
    }

    #[test]
    fn influence_weight_hand_value_and_shape() {
        // resif = c + 30 with d = 30, gamma = 10:
        // [1 + 900/9000]^(-5.5) = 1.1^(-5.5).
        let w = influence_weight(50.0, 20.0, 30.0, 10.0);
        let hand = 1.1f64.powf(-5.5);
        assert!((w - hand).abs() < 1e-12);
        assert!((hand - 0.592).abs() < 5e-4, "published shape point");
        // Full weight up to the cutoff, non-increasing past it.
        assert_eq!(influence_weight(19.9, 20.0, 30.0, 10.0), 1.0);
        assert_eq!(influence_weight(20.0, 20.0, 30.0, 10.0), 1.0);
        let mut last = 1.0;
        for step in 0..50 {
            let x = 20.0 + step as f64;
            let w = influence_weight(x, 20.0, 30.0, 10.0);
            assert!(w <= last + 1e-15, "weight must be non-increasing");
            assert!(w > 0.0);
            last = w;
        }
    }

    #[test]
    fn ifb_weights_are_uniform_when_nothing_stands_out() {
        // y == mu gives all-zero RESIF: every cell at the cutoff, uniform
        // probabilities over the pool.
        let tri = smooth_triangle(6);
        let fit = fit_robust(&tri, 1.345, None).unwrap();
        let w = ifb_weights(&fit, 30.0, 10.0, 0.90).unwrap();
        let n = tri.n();
        let pool_cells = tri.num_cells() - 2;
        let total: f64 = w.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "probabilities sum to one");
        for (k, (i, j)) in cell_order(n).enumerate() {
            if crate::triangle::is_corner(n, i, j) {
                assert_eq!(w.probs()[k], 0.0, "corner probability");
            } else {
                assert!(
                    (w.probs()[k] - 1.0 / pool_cells as f64).abs() < 1e-6,
                    "probability at ({i}, {j}) should be uniform, got {}",
                    w.probs()[k]
                );
            }
        }
    }

    #[test]
    fn ifb_probs_shrink_with_resif() {
        let tri = taylor_ashe();
        let fit = fit_robust(&tri, 300.0, None).unwrap();
        let w = ifb_weights(&fit, 30.0, 10.0, 0.90).unwrap();
        assert!((w.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Monotone: sort non-corner cells by RESIF; probabilities must be
        // non-increasing along that order.
        let n = tri.n();
        let flags: Vec<bool> = cell_order(n)
            .map(|(i, j)| crate::triangle::is_corner(n, i, j))
            .collect();
        let mut cells: Vec<usize> = (0..tri.num_cells()).filter(|&k| !flags[k]).collect();
        cells.sort_by(|&a, &b| w.resif()[a].total_cmp(&w.resif()[b]));
        let mut last = f64::INFINITY;
        for &k in &cells {
            assert!(
                w.probs()[k] <= last + 1e-15,
                "probabilities must not increase with RESIF"
            );
            last = w.probs()[k];
        }
        // Cells at or below the cutoff share the maximal probability.
        let pmax = w.probs().iter().cloned().fold(0.0, f64::max);
        for &k in &cells {
            if w.resif()[k] <= w.c() {
                assert!((w.probs()[k] - pmax).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tcl_zero_residuals_return_the_point_reserve() {
        let tri = taylor_ashe();
        let fit = glm::fit_poisson(&tri).unwrap();
        let zero_rs = pearson(fit.mu(), fit.mu()).unwrap();
        let opts = BootstrapOptions {
            replicates: 1,
            seed: 9,
            ..BootstrapOptions::default()
        };
        let run = bootstrap_classical(&tri, Estimator::Classical, &zero_rs, &opts).unwrap();
        assert_eq!(run.failed(), 0);
        let point = fit.reserve();
        let got = run.reserves()[0];
        assert!(
            ((got - point) / point).abs() < 1e-6,
            "zero residuals must reproduce the point reserve: {got} vs {point}"
        );
    }

    #[test]
    fn tcl_mean_tracks_the_point_reserve() {
        let tri = taylor_ashe();
        let fit = glm::fit_poisson(&tri).unwrap();
        let opts = BootstrapOptions {
            replicates: 2000,
            seed: 42,
            ..BootstrapOptions::default()
        };
        let run = bootstrap(&tri, BootstrapMethod::Tcl, &opts).unwrap();
        assert!(run.failed() * 20 <= opts.replicates, "failure budget");
        let rel = (run.mean() - fit.reserve()).abs() / fit.reserve();
        assert!(
            rel < 0.05,
            "bootstrap mean {:.0} within 5% of point reserve {:.0}",
            run.mean(),
            fit.reserve()
        );
    }

    #[test]
    fn classical_refit_matches_the_quasi_refit_where_both_exist() {
        // The engine refits classical pseudo-histories through the
        // development-factor closed form; whenever the quasi-likelihood
        // refit converges, both solve the same score equations and must
        // agree on the reserve.
        let tri = taylor_ashe();
        let fit = glm::fit_poisson(&tri).unwrap();
        let rs = classical_residuals(&fit, &tri, ResidualVariant::England).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut compared = 0;
        while compared < 25 {
            let r_star = resample_residuals(&rs, None, &mut rng).unwrap();
            let y_star = pseudo_history(&r_star, fit.mu());
            let Ok(quasi) = glm::fit_quasi(tri.n(), &y_star, Some(fit.theta())) else {
                continue; // no quasi root: only the closed form is defined
            };
            let via_glm = glm::reserve_from_theta(tri.n(), &quasi.theta);
            let via_factors = glm::chain_ladder_reserve(tri.n(), &y_star).unwrap();
            assert!(
                ((via_glm - via_factors) / via_glm).abs() < 1e-8,
                "refits disagree: quasi {via_glm} vs factors {via_factors}"
            );
            compared += 1;
        }
    }

    #[test]
    fn replicates_are_identical_across_thread_counts() {
        let tri = benchmark_sim();
        for method in [BootstrapMethod::Tcl, BootstrapMethod::Frb] {
            let base = BootstrapOptions {
                replicates: 48,
                seed: 1234,
                ..BootstrapOptions::default()
            };
            let seq = bootstrap(
                &tri,
                method,
                &BootstrapOptions {
                    exec: ExecOptions::sequential(),
                    ..base
                },
            )
            .unwrap();
            let par = bootstrap(
                &tri,
                method,
                &BootstrapOptions {
                    exec: ExecOptions::with_threads(2),
                    ..base
                },
            )
            .unwrap();
            let seq_bits: Vec<u64> = seq.reserves().iter().map(|v| v.to_bits()).collect();
            let par_bits: Vec<u64> = par.reserves().iter().map(|v| v.to_bits()).collect();
            assert_eq!(
                seq_bits, par_bits,
                "{method} replicates must be bit-identical across thread counts"
            );
        }
    }

    #[test]
    fn different_seeds_give_different_replicates() {
        let tri = benchmark_sim();
        let a = bootstrap(
            &tri,
            BootstrapMethod::Tcl,
            &BootstrapOptions {
                replicates: 8,
                seed: 1,
                ..BootstrapOptions::default()
            },
        )
        .unwrap();
        let b = bootstrap(
            &tri,
            BootstrapMethod::Tcl,
            &BootstrapOptions {
                replicates: 8,
                seed: 2,
                ..BootstrapOptions::default()
            },
        )
        .unwrap();
        assert_ne!(a.reserves(), b.reserves());
    }

    #[test]
    fn hopeless_pseudo_data_abort_with_excess_failures() {
        // Residuals so negative that every pseudo-history cumulates
        // negative, so the development factors are undefined and every
        // refit fails.
        let tri = taylor_ashe();
        let fit = glm::fit_poisson(&tri).unwrap();
        let broken: Vec<f64> = fit.mu().iter().map(|_| -1.0e6).collect();
        let rs = pearson(&broken, fit.mu()).unwrap();
        let opts = BootstrapOptions {
            replicates: 20,
            seed: 3,
            ..BootstrapOptions::default()
        };
        let err = bootstrap_classical(&tri, Estimator::Classical, &rs, &opts).unwrap_err();
        match err {
            Error::ExcessFailures { failed, total } => {
                assert_eq!(total, 20);
                assert!(failed > 1, "most replicates must fail, got {failed}");
            }
            other => panic!("expected ExcessFailures, got {other}"),
        }
    }

    #[test]
    fn frb_gradient_matches_finite_differences() {
        let tri = smooth_triangle(6);
        let c = 1.345;
        let fit = fit_robust(&tri, c, None).unwrap();
        let state = frb_prepare(&fit).unwrap();
        let n = tri.n();
        let p = num_params(n);
        let dm = DesignMatrix::new(n);
        let x = dm.matrix();
        let y = tri.values();

        // Oracle: the estimating equations with exact expectations,
        // evaluated at arbitrary theta.
        let psi_n = |theta: &[f64]| -> DVector<f64> {
            let eta = x * DVector::from_column_slice(theta);
            let mut coef = DVector::zeros(y.len());
            for k in 0..y.len() {
                let m = eta[k].exp();
                let s = m.sqrt();
                let r = (y[k] - m) / s;
                coef[k] = (huber_psi(r, c) - expected_psi(m, c)) * s;
            }
            x.transpose() * coef
        };

        let theta = fit.theta();
        let mut worst: f64 = 0.0;
        for l in 0..p {
            // The exact expectation is piecewise in theta (its clipping
            // bounds cross integers), and the analytic gradient smooths
            // those pieces away. A step wide enough to span many integer
            // crossings makes the centered difference measure the smoothed
            // slope instead of one piece's local jitter.
            let h = 1e-2;
            let mut up = theta.to_vec();
            up[l] += h;
            let mut dn = theta.to_vec();
            dn[l] -= h;
            let fd = (psi_n(&up) - psi_n(&dn)) / (2.0 * h);
            let col = state.grad().column(l);
            let denom = fd.norm().max(1e-8);
            let err = (DVector::from_column_slice(col.as_slice()) - &fd).norm() / denom;
            worst = worst.max(err);
        }
        assert!(
            worst < 1e-3,
            "smoothed gradient must track finite differences, worst column error {worst:.2e}"
        );
    }

    #[test]
    fn frb_gradient_has_the_classical_limit() {
        // With an enormous tuning constant nothing clips and the gradient
        // collapses to the classical curvature -X'WX.
        let tri = smooth_triangle(5);
        let fit = fit_robust(&tri, 1.0e6, None).unwrap();
        let state = frb_prepare(&fit).unwrap();
        let dm = DesignMatrix::new(tri.n());
        let x = dm.matrix();
        let mut xtw = x.transpose();
        for k in 0..fit.mu().len() {
            for row in 0..xtw.nrows() {
                xtw[(row, k)] *= fit.mu()[k];
            }
        }
        let classical = -(&xtw * x);
        let diff = (state.grad() - &classical).norm() / classical.norm();
        assert!(
            diff < 1e-6,
            "c -> inf gradient must approach -X'WX, relative gap {diff:.2e}"
        );
    }

    #[test]
    fn frb_gradient_is_negative_definite_on_clean_data() {
        let tri = benchmark_sim();
        let fit = fit_robust(&tri, 1.345, None).unwrap();
        let state = frb_prepare(&fit).unwrap();
        let sym = -(state.grad() + state.grad().transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        let min = eig.eigenvalues.min();
        assert!(
            min > 0.0,
            "-grad must be positive definite on clean data, smallest eigenvalue {min:.3e}"
        );
        assert!(state.condition().is_finite() && state.condition() >= 1.0);
    }

    #[test]
    fn frb_factorization_reproduces_the_gradient() {
        let tri = benchmark_sim();
        let fit = fit_robust(&tri, 1.345, None).unwrap();
        let state = frb_prepare(&fit).unwrap();
        let p = state.grad().nrows();
        let mut rng = rng_for(99, 0);
        for _ in 0..5 {
            let x = DVector::from_iterator(p, (0..p).map(|_| rng.gen_range(-1.0..1.0)));
            let b = state.grad() * &x;
            let back = state.factorization.solve(&b).expect("solvable");
            let rel = (&back - &x).norm() / x.norm();
            assert!(rel < 1e-10, "solve must invert the gradient, error {rel:.2e}");
        }
    }

    #[test]
    fn frb_identity_resample_is_a_fixed_point() {
        let tri = benchmark_sim();
        let fit = fit_robust(&tri, 1.345, None).unwrap();
        let state = frb_prepare(&fit).unwrap();
        // Feeding the original data back in reproduces the point estimate:
        // the estimating equations are already solved there.
        let theta_b = frb_solve(&state, tri.values()).unwrap();
        let sup = theta_b
            .iter()
            .zip(fit.theta())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            sup < 1e-4,
            "identity pseudo-history must return theta_hat, moved {sup:.2e}"
        );
        // All-zero residuals (pseudo-history equal to the fitted means) are
        // not an exact root — the Fisher-consistency centering stays on —
        // but land very close.
        let theta_z = frb_solve(&state, fit.mu()).unwrap();
        let reserve_z = glm::reserve_from_theta(tri.n(), &theta_z);
        let rel = (reserve_z - fit.reserve()).abs() / fit.reserve();
        assert!(
            rel < 5e-3,
            "zero-residual reserve must stay within 0.5%, moved {rel:.2e}"
        );
    }

    #[test]
    fn frb_and_cb_quantiles_agree_on_clean_data() {
        let tri = benchmark_sim();
        let opts = BootstrapOptions {
            replicates: 2000,
            seed: 7,
            ..BootstrapOptions::default()
        };
        let frb = bootstrap(&tri, BootstrapMethod::Frb, &opts).unwrap();
        let cb = bootstrap(&tri, BootstrapMethod::Cb, &opts).unwrap();
        for p in [0.75, 0.90, 0.95] {
            let qf = frb.quantile(p).unwrap();
            let qc = cb.quantile(p).unwrap();
            let rel = (qf - qc).abs() / qc;
            assert!(
                rel < 0.05,
                "FRB and CB {p} quantiles must agree within 5%: {qf:.0} vs {qc:.0}"
            );
        }
    }

    #[test]
    fn wb_spread_is_tighter_than_cb() {
        let tri = benchmark_sim();
        let opts = BootstrapOptions {
            replicates: 600,
            seed: 13,
            ..BootstrapOptions::default()
        };
        let cb = bootstrap(&tri, BootstrapMethod::Cb, &opts).unwrap();
        let wb = bootstrap(&tri, BootstrapMethod::Wb, &opts).unwrap();
        assert!(
            wb.std_dev() < cb.std_dev(),
            "winsorized pool must shrink the spread: {} vs {}",
            wb.std_dev(),
            cb.std_dev()
        );
        assert_eq!(wb.method(), BootstrapMethod::Wb);
    }

    #[test]
    fn ifb_runs_and_keeps_replicate_accounting() {
        let tri = benchmark_sim();
        let opts = BootstrapOptions {
            replicates: 200,
            seed: 21,
            ..BootstrapOptions::default()
        };
        let run = bootstrap(&tri, BootstrapMethod::Ifb, &opts).unwrap();
        assert_eq!(run.method(), BootstrapMethod::Ifb);
        assert_eq!(run.reserves().len() + run.failed(), 200);
        assert!(run.reserves().iter().all(|r| r.is_finite() && *r > 0.0));
        let q = run.quantile(0.995).unwrap();
        assert!(q > run.mean(), "upper quantile above the mean");
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            BootstrapMethod::Tcl,
            BootstrapMethod::Cb,
            BootstrapMethod::Wb,
            BootstrapMethod::Ifb,
            BootstrapMethod::Frb,
        ] {
            let back: BootstrapMethod = m.to_string().parse().unwrap();
            assert_eq!(back, m);
        }
        assert!("jackknife".parse::<BootstrapMethod>().is_err());
    }
}
