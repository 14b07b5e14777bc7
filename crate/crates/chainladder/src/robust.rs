//! Huber-weighted robust Poisson chain-ladder estimation.
//!
//! The robust estimator solves the centered estimating equations
//!
//! ```text
//! sum_ij (psi_c(r_ij) - E[psi_c(r_ij)]) w(x_ij) sqrt(mu_ij) x_ij = 0
//! ```
//!
//! with Pearson residuals `r_ij = (y_ij - mu_ij) / sqrt(mu_ij)` and the
//! Huber function `psi_c`. The centering term `E[psi_c]` makes the
//! estimator Fisher-consistent at the Poisson model; it is evaluated with
//! exact Poisson tail probabilities. As `c -> inf` the equations reduce to
//! the classical score `X'(y - mu) = 0`, so the classical fit is both the
//! starting point and the limiting case.

use nalgebra::{DMatrix, DVector};

use crate::dist::{normal_sf, poisson_cdf, poisson_pmf, poisson_sf};
use crate::glm;
use crate::triangle::{cell_order, DesignMatrix, Triangle};
use crate::{Error, Result};

/// Conventional 95%-efficiency Huber tuning constant.
pub const DEFAULT_HUBER_C: f64 = 1.345;

/// Default robustness-weight threshold below which a cell is flagged.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.10;

/// Iteration cap for the robust Newton loop (looser than IRLS because the
/// weight matrix is only an expected-information approximation).
const MAX_ITERATIONS: usize = 200;

/// Sup-norm parameter step below which the solver is considered settled.
const STEP_TOL: f64 = 1e-10;

/// Above this mean the exact tail sums are replaced by their normal limits;
/// the switch error is below 1e-4 while avoiding incomplete-gamma
/// evaluations with astronomically large shape parameters (reachable only
/// through divergent trial steps).
const BIG_MU: f64 = 1e9;

/// Tuning constants this large clip nothing on any reachable data, so the
/// moments are exactly the unclipped Pearson moments (0 and 1).
pub(crate) const BIG_C: f64 = 1e8;

/// The Huber function: identity inside `[-c, c]`, clipped outside.
pub fn huber_psi(r: f64, c: f64) -> f64 {
    r.clamp(-c, c)
}

/// `E[psi_c(r)]` and `E[psi_c(r) r]` for `r = (Y - mu)/sqrt(mu)`,
/// `Y ~ Poisson(mu)`.
///
/// Writing `j1 = floor(mu - c sqrt(mu))` and `j2 = floor(mu + c sqrt(mu))`
/// for the clipping boundaries, summation by parts of the Poisson pmf gives
///
/// ```text
/// E[psi]   = c (P(Y >= j2+1) - P(Y <= j1)) + sqrt(mu) (p(j1) - p(j2))
/// E[psi r] = c sqrt(mu) (p(j1) + p(j2))
///          + mu (p(j1-1) - p(j1) - p(j2-1) + p(j2))
///          + P(Y <= j2-1) - P(Y <= j1-1)
/// ```
///
/// The middle line of `E[psi r]` is evaluated through the recurrence
/// `p(j-1) = p(j) j / mu` as `p(j1)(j1 - mu) - p(j2)(j2 - mu)`; the naive
/// difference of two exponentiated pmf values loses all its accuracy once
/// `mu` multiplies it back up. Negative indices contribute nothing (the pmf
/// and CDF vanish there), which covers the `mu - c sqrt(mu) < 0` clamp
/// automatically.
pub(crate) fn huber_moments(mu: f64, c: f64) -> (f64, f64) {
    debug_assert!(mu > 0.0, "huber_moments needs a positive mean");
    debug_assert!(c > 0.0, "huber_moments needs a positive tuning constant");
    if c >= BIG_C {
        return (0.0, 1.0);
    }
    if mu > BIG_MU {
        // Normal limit: E[psi_c(Z)] = 0 and E[psi_c(Z) Z] = 2 Phi(c) - 1.
        return (0.0, 1.0 - 2.0 * normal_sf(c));
    }
    let s = mu.sqrt();
    let j1 = (mu - c * s).floor() as i64;
    let j2 = (mu + c * s).floor() as i64;
    let p_j1 = poisson_pmf(j1, mu);
    let p_j2 = poisson_pmf(j2, mu);
    let e_psi = c * (poisson_sf(j2 + 1, mu) - poisson_cdf(j1, mu)) + s * (p_j1 - p_j2);
    let e_psi_r = c * s * (p_j1 + p_j2)
        + p_j1 * (j1 as f64 - mu)
        - p_j2 * (j2 as f64 - mu)
        + (poisson_cdf(j2 - 1, mu) - poisson_cdf(j1 - 1, mu));
    (e_psi, e_psi_r)
}

/// Derivative of `E[psi_c]` with respect to the linear predictor, on the
/// piece between integer crossings of `mu -+ c sqrt(mu)`.
///
/// Termwise differentiation of the closed form produces three O(sqrt(mu))
/// pieces that cancel; carrying the cancellation out symbolically leaves
///
/// ```text
/// d E[psi]/d eta = sqrt(mu) (p(j1)(1/2 - f1) - p(j2)(1/2 - f2))
/// ```
///
/// with `f_l` the fractional parts of `mu -+ c sqrt(mu)`. Used by the
/// exact-Jacobian Newton fallback; the fast bootstrap gradient has its own
/// smoothed version.
pub(crate) fn expected_psi_deta(mu: f64, c: f64) -> f64 {
    debug_assert!(mu > 0.0 && c > 0.0);
    if c >= BIG_C || mu > BIG_MU {
        return 0.0;
    }
    let s = mu.sqrt();
    let lo = mu - c * s;
    let hi = mu + c * s;
    let j1 = lo.floor();
    let j2 = hi.floor();
    let p_j1 = poisson_pmf(j1 as i64, mu);
    let p_j2 = poisson_pmf(j2 as i64, mu);
    s * (p_j1 * (0.5 - (lo - j1)) - p_j2 * (0.5 - (hi - j2)))
}

/// Fisher-consistency correction `E[psi_c(r)]`; tends to 0 as `mu -> inf`
/// (the Poisson skewness vanishes) and as `c -> inf` (nothing is clipped).
pub fn expected_psi(mu: f64, c: f64) -> f64 {
    huber_moments(mu, c).0
}

/// Score covariance `E[psi_c(r) r]`; lies in `(0, 1]` and increases to 1 as
/// `c -> inf`. This is the per-cell factor of the expected-information
/// matrix `B` used by the Newton solver and the robust hat matrix.
pub fn expected_psi_times_score(mu: f64, c: f64) -> f64 {
    huber_moments(mu, c).1
}

// ---- Solver --------------------------------------------------------------

pub(crate) struct RobustSolution {
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub iterations: usize,
}

fn score_vector(
    x: &DMatrix<f64>,
    y: &[f64],
    x_weights: &[f64],
    mu: &DVector<f64>,
    c: f64,
) -> DVector<f64> {
    let mut d = DVector::zeros(x.nrows());
    for k in 0..x.nrows() {
        let m = mu[k];
        let s = m.sqrt();
        let r = (y[k] - m) / s;
        let (e_psi, _) = huber_moments(m, c);
        d[k] = x_weights[k] * (huber_psi(r, c) - e_psi) * s;
    }
    x.transpose() * d
}

/// Natural size of the estimating equations: each cell contributes at most
/// `2 c w sqrt(mu)` to any component.
fn score_scale(x_weights: &[f64], mu: &DVector<f64>, c: f64) -> f64 {
    let total: f64 = x_weights
        .iter()
        .zip(mu.iter())
        .map(|(&w, &m)| w * m.sqrt())
        .sum();
    1.0 + c * total
}

/// Linear system used for the Newton direction.
#[derive(Clone, Copy, PartialEq)]
enum StageKind {
    /// Expected-information weights `B_kk = w_k mu_k E[psi_c(r_k) r_k]`:
    /// the weighted-least-squares map, cheap and stable near the model.
    Expected,
    /// Exact piecewise Jacobian of the estimating equations. The direction
    /// `-J^(-1) psi` strictly decreases `|psi|_2` wherever `J` is regular,
    /// which rescues configurations where heavy clipping turns the
    /// expected-information direction uphill.
    ExactJacobian,
}

/// Iteration budget for an expected-information stage; it either converges
/// quickly or creeps, and creeping is the exact-Jacobian stage's cue.
const EXPECTED_ITERATIONS: usize = 40;

/// Outcome of one Newton stage: where it stopped and whether the
/// estimating equations hold there.
struct StageResult {
    theta: Vec<f64>,
    mu: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// One damped Newton stage at a fixed tuning constant. Stops early when no
/// step size decreases the estimating-equation norm; `converged` reports
/// whether the equations hold at the exit point, so callers can chain a
/// different strategy from there instead of spinning.
fn newton_stage(
    x: &DMatrix<f64>,
    y: &[f64],
    x_weights: &[f64],
    start: &[f64],
    c: f64,
    kind: StageKind,
    max_iterations: usize,
) -> Result<StageResult> {
    let p = x.ncols();
    let nrows = x.nrows();
    assert_eq!(y.len(), nrows, "observation vector has wrong length");
    assert_eq!(x_weights.len(), nrows, "weight vector has wrong length");
    assert_eq!(start.len(), p, "starting point has wrong length");

    let mut theta = start.to_vec();
    let mut mu: DVector<f64> = glm::linear_predictor(x, &theta).map(f64::exp);
    let mut score = score_vector(x, y, x_weights, &mu, c);
    let mut norm = score.norm();

    let mut iterations = 0;
    for it in 1..=max_iterations {
        iterations = it;
        if score.amax() <= 1e-12 * score_scale(x_weights, &mu, c) {
            break;
        }
        // Per-cell coefficient of x_k x_k' in the direction matrix.
        let mut cx = x.clone();
        for r in 0..nrows {
            let m = mu[r];
            let coeff = match kind {
                StageKind::Expected => {
                    let (_, e_psi_r) = huber_moments(m, c);
                    x_weights[r] * m * e_psi_r
                }
                StageKind::ExactJacobian => {
                    let s = m.sqrt();
                    let r_k = (y[r] - m) / s;
                    let (e_psi, _) = huber_moments(m, c);
                    let clipped = r_k.abs() > c;
                    let d_psi = if clipped { 0.0 } else { -0.5 * (y[r] + m) };
                    // Negated so both kinds solve a system with the same
                    // orientation as the weighted-least-squares map.
                    -x_weights[r]
                        * (d_psi - expected_psi_deta(m, c) * s
                            + 0.5 * (huber_psi(r_k, c) - e_psi) * s)
                }
            };
            for col in 0..p {
                cx[(r, col)] *= coeff;
            }
        }
        let m = x.transpose() * cx;
        let delta = glm::solve_spd(&m, &score)?;

        // The expected-information map needs room to move non-monotonically:
        // its score norm rises transiently while clipped cells reorganize,
        // and insisting on strict decrease strands the iteration on ridges
        // between basins. Step-halving therefore engages only when a step
        // would grow the norm beyond a stability factor (or overflow the
        // linear predictor), which still damps genuine divergence and
        // breaks oscillating cycles. The exact-Jacobian direction is a true
        // descent direction for the squared score norm, so there a strictly
        // monotone line search is principled and keeps the stage local.
        let growth_cap = match kind {
            StageKind::Expected => 2.0 * norm,
            StageKind::ExactJacobian => norm,
        };
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..=20 {
            let mut candidate = theta.clone();
            for k in 0..p {
                candidate[k] += s * delta[k];
                if k > 0 {
                    candidate[k] = candidate[k].max(glm::PARAM_FLOOR);
                }
            }
            let eta_c = glm::linear_predictor(x, &candidate);
            if eta_c.amax() > glm::ETA_LIMIT {
                s *= 0.5;
                continue;
            }
            let mu_c = eta_c.map(f64::exp);
            let score_c = score_vector(x, y, x_weights, &mu_c, c);
            let norm_c = score_c.norm();
            if norm_c.is_finite() && norm_c <= growth_cap {
                accepted = Some((candidate, mu_c, score_c, norm_c));
                break;
            }
            s *= 0.5;
        }
        let Some((candidate, mu_c, score_c, norm_c)) = accepted else {
            break; // no step size helps; report where we stopped
        };
        let step = candidate
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = candidate;
        mu = mu_c;
        score = score_c;
        norm = norm_c;
        if step < STEP_TOL {
            break;
        }
    }

    // The stage converged only if the estimating equations hold at a
    // non-degenerate fit. A cell's score contribution is (psi - E psi) *
    // w * sqrt(mu) * x, so driving mu towards zero silently deletes the
    // cell: boundary configurations that "remove" awkward observations
    // that way satisfy any score tolerance. Reject solutions where cells
    // with collapsed means carry material data mass; a genuine robust fit
    // downweights through the psi clamp at a bounded mean instead.
    let tol = 1e-8 * score_scale(x_weights, &mu, c);
    let data_mass: f64 = x_weights
        .iter()
        .zip(y.iter())
        .map(|(&w, &v)| w * v.abs())
        .sum();
    let mean_abs = data_mass / nrows as f64;
    let collapsed_mass: f64 = (0..nrows)
        .filter(|&k| mu[k] < 1e-12 * mean_abs)
        .map(|k| x_weights[k] * y[k].abs())
        .sum();
    let converged = score.amax() <= tol
        && mu.iter().all(|v| v.is_finite())
        && collapsed_mass <= 0.01 * data_mass;
    Ok(StageResult {
        theta,
        mu: mu.as_slice().to_vec(),
        iterations,
        converged,
    })
}

/// Huber's winsorize-and-refit start: alternately clamp the data to
/// `mu ± c sqrt(mu)` and refit a weighted classical GLM to the clamped
/// pseudo-data. Every half-step is an IRLS on bounded observations, so the
/// alternation is extremely stable even when the initial fit leaves most
/// cells clipped; its fixed point solves the uncentered robust equations,
/// which lies well inside the centered Newton map's contraction region.
fn winsorized_start(
    x: &DMatrix<f64>,
    y: &[f64],
    x_weights: &[f64],
    start: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    let mut theta = start.to_vec();
    for _ in 0..100 {
        let mu: DVector<f64> = glm::linear_predictor(x, &theta).map(f64::exp);
        let yw: Vec<f64> = y
            .iter()
            .zip(mu.iter())
            .map(|(&yk, &mk)| {
                let s = mk.sqrt();
                yk.clamp(mk - c * s, mk + c * s)
            })
            .collect();
        let refit = weighted_quasi_irls(x, &yw, x_weights, &theta)?;
        let step = refit
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = refit;
        if step < 1e-8 {
            break;
        }
    }
    Ok(theta)
}

/// Weighted classical IRLS for `sum_k w_k (y_k - mu_k) x_k = 0` on
/// real-valued pseudo-data, used by the winsorized start.
fn weighted_quasi_irls(
    x: &DMatrix<f64>,
    y: &[f64],
    x_weights: &[f64],
    start: &[f64],
) -> Result<Vec<f64>> {
    let p = x.ncols();
    let nrows = x.nrows();
    let mut theta = start.to_vec();
    for _ in 0..60 {
        let mu: DVector<f64> = glm::linear_predictor(x, &theta).map(f64::exp);
        let resid = DVector::from_iterator(
            nrows,
            (0..nrows).map(|k| x_weights[k] * (y[k] - mu[k])),
        );
        let score = x.transpose() * resid;
        let mut wx = x.clone();
        for k in 0..nrows {
            let w = x_weights[k] * mu[k];
            for col in 0..p {
                wx[(k, col)] *= w;
            }
        }
        let m = x.transpose() * wx;
        let delta = glm::solve_spd(&m, &score)?;
        let mut s = 1.0;
        let mut moved = 0.0;
        for _ in 0..=20 {
            let mut candidate = theta.clone();
            for k in 0..p {
                candidate[k] += s * delta[k];
                if k > 0 {
                    candidate[k] = candidate[k].max(glm::PARAM_FLOOR);
                }
            }
            if glm::linear_predictor(x, &candidate).amax() > glm::ETA_LIMIT {
                s *= 0.5;
                continue;
            }
            moved = candidate
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            theta = candidate;
            break;
        }
        if moved < 1e-10 {
            break;
        }
    }
    Ok(theta)
}

/// Expected-information stage with exact-Jacobian rescue chained from
/// wherever the first stage stopped.
fn newton_stage_with_rescue(
    x: &DMatrix<f64>,
    y: &[f64],
    x_weights: &[f64],
    start: &[f64],
    c: f64,
) -> Result<StageResult> {
    let expected = newton_stage(x, y, x_weights, start, c, StageKind::Expected, EXPECTED_ITERATIONS)?;
    if expected.converged {
        return Ok(expected);
    }
    let mut rescue = newton_stage(
        x,
        y,
        x_weights,
        &expected.theta,
        c,
        StageKind::ExactJacobian,
        MAX_ITERATIONS,
    )?;
    rescue.iterations += expected.iterations;
    Ok(rescue)
}

/// Stage budget for the tuning-constant continuation.
const MAX_STAGES: usize = 60;

/// Solve the robust estimating equations at tuning constant `c`.
///
/// Tries a direct solve first (which succeeds whenever the start is close,
/// the usual case for bootstrap refits). If heavy contamination puts the
/// solution far away, it falls back to continuation in the tuning
/// constant: first solve at a `c` so large that nothing clips (where the
/// start is essentially the solution), then walk down towards the target,
/// bisecting geometrically whenever a stage refuses to converge.
pub(crate) fn robust_newton(
    x: &DMatrix<f64>,
    y: &[f64],
    x_weights: &[f64],
    start: &[f64],
    c: f64,
    context: &str,
) -> Result<RobustSolution> {
    // Direct attempt with the expected-information map only: warm starts
    // (clean data, bootstrap refits) converge here in a handful of steps.
    // The exact-Jacobian rescue is deliberately excluded this far from a
    // known solution because its line search can descend into a breakdown
    // root in the wrong basin; continuation below stays on the main branch.
    let direct = newton_stage(x, y, x_weights, start, c, StageKind::Expected, MAX_ITERATIONS)?;
    let mut total_iterations = direct.iterations;
    if direct.converged {
        return Ok(RobustSolution {
            theta: direct.theta,
            mu: direct.mu,
            iterations: total_iterations,
        });
    }

    // The direct attempt fails when the start leaves many cells clipped:
    // their true score slope is near zero while the expected information
    // assumes an unclipped share, so the map creeps. Restart from the
    // winsorize-and-refit fixed point, which already treats the outliers
    // as clamped and puts only genuinely outlying cells beyond the bend.
    let w_start = winsorized_start(x, y, x_weights, start, c)?;
    let from_w = newton_stage(x, y, x_weights, &w_start, c, StageKind::Expected, MAX_ITERATIONS)?;
    total_iterations += from_w.iterations;
    if from_w.converged {
        return Ok(RobustSolution {
            theta: from_w.theta,
            mu: from_w.mu,
            iterations: total_iterations,
        });
    }
    let polish = newton_stage(
        x,
        y,
        x_weights,
        &from_w.theta,
        c,
        StageKind::ExactJacobian,
        MAX_ITERATIONS,
    )?;
    total_iterations += polish.iterations;
    if polish.converged {
        return Ok(RobustSolution {
            theta: polish.theta,
            mu: polish.mu,
            iterations: total_iterations,
        });
    }

    // Residual scale at the start dictates where clipping begins.
    let mu0: DVector<f64> = glm::linear_predictor(x, start).map(f64::exp);
    let r_max = y
        .iter()
        .zip(mu0.iter())
        .map(|(&yk, &mk)| (yk - mk).abs() / mk.sqrt())
        .fold(0.0, f64::max);
    let c_start = (2.0 * r_max).max(4.0 * c);

    let first = newton_stage_with_rescue(x, y, x_weights, start, c_start)?;
    total_iterations += first.iterations;
    if !first.converged {
        return Err(Error::NonConvergence {
            context: context.to_string(),
            iterations: total_iterations,
        });
    }
    let mut theta = first.theta;
    let mut mu = first.mu;
    let mut c_current = c_start;
    let mut targets = vec![c];
    let mut stages = 0;
    while let Some(&next) = targets.last() {
        stages += 1;
        if stages > MAX_STAGES {
            return Err(Error::NonConvergence {
                context: context.to_string(),
                iterations: total_iterations,
            });
        }
        let stage = newton_stage_with_rescue(x, y, x_weights, &theta, next)?;
        total_iterations += stage.iterations;
        if stage.converged {
            theta = stage.theta;
            mu = stage.mu;
            c_current = next;
            targets.pop();
        } else {
            // Geometric midpoint between the last success and the goal.
            let mid = (0.5 * (c_current.ln() + next.ln())).exp();
            if mid <= next * 1.0001 {
                return Err(Error::NonConvergence {
                    context: context.to_string(),
                    iterations: total_iterations,
                });
            }
            targets.push(mid);
        }
    }
    Ok(RobustSolution {
        theta,
        mu,
        iterations: total_iterations,
    })
}

/// Robust refit for bootstrap pseudo-histories: same estimating
/// equations, arbitrary real-valued observations, warm-started from the
/// coefficients that generated the pseudo-data.
pub(crate) fn fit_robust_quasi(
    n: usize,
    y: &[f64],
    start: &[f64],
    c: f64,
) -> Result<RobustSolution> {
    let dm = DesignMatrix::new(n);
    let x_weights = vec![1.0; y.len()];
    robust_newton(dm.matrix(), y, &x_weights, start, c, "robust refit")
}

// ---- Fitted model --------------------------------------------------------

/// A fitted robust Poisson chain-ladder model.
#[derive(Debug, Clone)]
pub struct RobustFit {
    n: usize,
    c: f64,
    theta: Vec<f64>,
    mu: Vec<f64>,
    x_weights: Vec<f64>,
    residuals: Vec<f64>,
    rob_weights: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl RobustFit {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Huber tuning constant used for the fit.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Coefficients in the order intercept, `alpha_2..alpha_n`, `beta_2..beta_n`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Fitted means over the observed cells, row-major.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Per-cell design weights `w(x_ij)` (all one unless supplied).
    pub fn x_weights(&self) -> &[f64] {
        &self.x_weights
    }

    /// Pearson residuals `(y - mu)/sqrt(mu)` against the robust fit.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Robustness weights `psi_c(r)/r`: exactly 1 on unclipped cells,
    /// `c/|r|` on clipped ones.
    pub fn rob_weights(&self) -> &[f64] {
        &self.rob_weights
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Predicted mean for any cell of the square.
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        crate::triangle::eta(&self.theta, self.n, i, j).exp()
    }

    /// Robust reserve: predicted means summed over the future cells.
    pub fn reserve(&self) -> f64 {
        glm::reserve_from_theta(self.n, &self.theta)
    }

    /// Diagonal of the expected-information weight matrix
    /// `B_kk = w_k mu_k E[psi_c(r_k) r_k]`.
    pub fn b_diag(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.x_weights)
            .map(|(&m, &w)| w * m * expected_psi_times_score(m, self.c))
            .collect()
    }

    /// Robust hat matrix `X (X'BX)^(-1) X'B`, an oblique projection onto the
    /// column space of the design (idempotent, trace = number of
    /// identifiable parameters).
    pub fn hat_matrix(&self) -> Result<DMatrix<f64>> {
        let dm = DesignMatrix::new(self.n);
        let z = self.hat_half(dm.matrix())?;
        Ok(dm.matrix() * z)
    }

    /// Diagonal of the robust hat matrix.
    pub fn hat_diag(&self) -> Result<Vec<f64>> {
        let dm = DesignMatrix::new(self.n);
        let x = dm.matrix();
        let z = self.hat_half(x)?;
        Ok((0..x.nrows())
            .map(|k| x.row(k).iter().zip(z.column(k).iter()).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `(X'BX)^(-1) X'B`, the shared factor of the hat computations.
    fn hat_half(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let b = self.b_diag();
        let mut xtb = x.transpose();
        for k in 0..x.nrows() {
            for r in 0..xtb.nrows() {
                xtb[(r, k)] *= b[k];
            }
        }
        let m = &xtb * x;
        glm::solve_spd_matrix(&m, &xtb)
    }
}

/// Fit the robust Poisson chain-ladder model.
///
/// Starts from the classical fit (which is also the `c -> inf` limit) and
/// iterates the damped Newton scheme on the centered estimating equations.
/// `x_weights` optionally downweights cells a priori; `None` means all one.
pub fn fit_robust(tri: &Triangle, c: f64, x_weights: Option<&[f64]>) -> Result<RobustFit> {
    if !(c > 0.0) {
        return Err(Error::Validation(format!(
            "Huber tuning constant must be positive, got {c}"
        )));
    }
    let n = tri.n();
    let xw = match x_weights {
        Some(w) => {
            if w.len() != tri.num_cells() {
                return Err(Error::Validation(format!(
                    "x_weights has length {}, expected {}",
                    w.len(),
                    tri.num_cells()
                )));
            }
            if !w.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::Validation(
                    "x_weights must be finite and non-negative".to_string(),
                ));
            }
            w.to_vec()
        }
        None => vec![1.0; tri.num_cells()],
    };
    let classical = glm::fit_poisson(tri)?;
    let dm = DesignMatrix::new(n);
    let sol = robust_newton(
        dm.matrix(),
        tri.values(),
        &xw,
        classical.theta(),
        c,
        "robust fit",
    )?;
    let residuals: Vec<f64> = tri
        .values()
        .iter()
        .zip(&sol.mu)
        .map(|(&y, &m)| (y - m) / m.sqrt())
        .collect();
    let rob_weights: Vec<f64> = residuals
        .iter()
        .map(|&r| if r.abs() <= c { 1.0 } else { c / r.abs() })
        .collect();
    Ok(RobustFit {
        n,
        c,
        theta: sol.theta,
        mu: sol.mu,
        x_weights: xw,
        residuals,
        rob_weights,
        iterations: sol.iterations,
        converged: true,
    })
}

/// Cells whose robustness weight falls below `threshold`, most suspicious
/// (lowest weight) first.
pub fn flag_outliers(fit: &RobustFit, threshold: f64) -> Vec<(usize, usize)> {
    let mut flagged: Vec<((usize, usize), f64)> = cell_order(fit.n())
        .zip(fit.rob_weights().iter())
        .filter(|&(_, &w)| w < threshold)
        .map(|(cell, &w)| (cell, w))
        .collect();
    flagged.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    flagged.into_iter().map(|(cell, _)| cell).collect()
}
