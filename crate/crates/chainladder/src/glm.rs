//! The overdispersed Poisson chain-ladder model.
//!
//! `log mu_ij = tau + alpha_i + beta_j` fitted by iteratively reweighted
//! least squares. The maximum likelihood reserve coincides with the
//! deterministic development-factor reserve, which gives an exact
//! cross-check used throughout the test-suite.
//!
//! [`fit_quasi`] solves the same score equations `X' (y - mu) = 0` for
//! arbitrary real-valued observations; bootstrap pseudo-histories can
//! contain negative cells and only the score equations (not a likelihood)
//! are meaningful there.

use nalgebra::{DMatrix, DVector};

use crate::triangle::{
    cell_index, cell_order, num_params, DesignMatrix, FullSquare, Triangle,
};
use crate::{Error, Result};

/// Lower bound for accident/development effects. A parameter pinned at the
/// floor corresponds to fitted means of `exp(tau + FLOOR)`, numerically
/// zero on any realistic scale; this keeps triangles with all-zero rows or
/// columns (where the MLE diverges to `-inf`) inside the well-posed limit
/// the chain ladder produces for them.
pub(crate) const PARAM_FLOOR: f64 = -40.0;

/// Iteration cap for the IRLS loop.
const MAX_ITERATIONS: usize = 100;

/// Largest sane linear predictor; steps are halved beyond this to keep
/// `exp` finite while diverging fits run into the iteration cap.
pub(crate) const ETA_LIMIT: f64 = 300.0;

// ---- Development factors -------------------------------------------------

/// Chain-ladder development factors `f_2..f_n`.
#[derive(Debug, Clone)]
pub struct DevFactors {
    n: usize,
    factors: Vec<f64>,
}

impl DevFactors {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Factor `f_j` for `j` in `2..=n`.
    pub fn factor(&self, j: usize) -> f64 {
        self.factors[j - 2]
    }

    /// All factors in order `f_2..f_n`.
    pub fn factors(&self) -> &[f64] {
        &self.factors
    }
}

/// Volume-weighted development factors:
/// `f_j = sum_{i <= n+1-j} C_ij / sum_{i <= n+1-j} C_i,j-1`.
pub fn dev_factors(tri: &Triangle) -> Result<DevFactors> {
    let n = tri.n();
    let cum = tri.cumulative();
    let mut factors = Vec::with_capacity(n - 1);
    for j in 2..=n {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 1..=n + 1 - j {
            num += cum[cell_index(n, i, j)];
            den += cum[cell_index(n, i, j - 1)];
        }
        if den <= 0.0 {
            return Err(Error::Validation(format!(
                "development factor f_{j} has non-positive denominator {den}"
            )));
        }
        factors.push(num / den);
    }
    Ok(DevFactors { n, factors })
}

/// Complete the square with development factors: future cumulatives are
/// `C_{i,n+1-i} * f_{n+2-i} * ... * f_j`, then differenced back to
/// incremental amounts.
pub fn complete_square_factors(tri: &Triangle, df: &DevFactors) -> FullSquare {
    let n = tri.n();
    let cum = tri.cumulative();
    let mut cells = vec![0.0; n * n];
    for (i, j) in cell_order(n) {
        cells[(i - 1) * n + (j - 1)] = tri.value(i, j);
    }
    for i in 2..=n {
        let mut prev = cum[cell_index(n, i, n + 1 - i)];
        for j in n + 2 - i..=n {
            let next = prev * df.factor(j);
            cells[(i - 1) * n + (j - 1)] = next - prev;
            prev = next;
        }
    }
    FullSquare::from_values(n, cells).expect("completed square is well-formed")
}

// ---- Poisson GLM ---------------------------------------------------------

/// A fitted Poisson chain-ladder model.
#[derive(Debug, Clone)]
pub struct GlmFit {
    n: usize,
    theta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
    iterations: usize,
}

impl GlmFit {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Coefficients in the order intercept, `alpha_2..alpha_n`, `beta_2..beta_n`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Fitted means over the observed cells, row-major.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn deviance(&self) -> f64 {
        self.deviance
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Predicted mean for any cell of the square.
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        crate::triangle::eta(&self.theta, self.n, i, j).exp()
    }

    /// Reserve implied by the fitted model: the sum of predicted means over
    /// the future cells.
    pub fn reserve(&self) -> f64 {
        reserve_from_theta(self.n, &self.theta)
    }

    /// Diagonal of the hat matrix `W^(1/2) X (X'WX)^(-1) X' W^(1/2)`.
    pub fn hat_diag(&self) -> Vec<f64> {
        let q = self.weighted_q();
        (0..q.nrows()).map(|r| q.row(r).norm_squared()).collect()
    }

    /// Full hat matrix; `N x N` with `N` the number of observed cells.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        let q = self.weighted_q();
        &q * q.transpose()
    }

    /// Thin Q factor of `W^(1/2) X`; the hat matrix is `Q Q'`, which keeps
    /// it symmetric and idempotent to machine precision by construction.
    fn weighted_q(&self) -> DMatrix<f64> {
        let dm = DesignMatrix::new(self.n);
        let mut a = dm.matrix().clone();
        for r in 0..a.nrows() {
            let w = self.mu[r].sqrt();
            for c in 0..a.ncols() {
                a[(r, c)] *= w;
            }
        }
        let qr = a.qr();
        qr.q()
    }
}

/// Total predicted amount over the future cells `i + j > n + 1`.
pub fn reserve_from_theta(n: usize, theta: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 2..=n {
        for j in n + 2 - i..=n {
            total += crate::triangle::eta(theta, n, i, j).exp();
        }
    }
    total
}

/// Development-factor completion of a raw cell vector: total and per-row
/// future amounts plus the first fitted anti-diagonal.
#[derive(Debug, Clone)]
pub(crate) struct ChainLadderCompletion {
    /// Total future amount over the lower triangle.
    pub reserve: f64,
    /// Future amount of each accident year `i = 1..=n` (year 1 has none).
    pub row_reserves: Vec<f64>,
    /// Fitted first future increments `(i, n + 2 - i)` for `i = 2..=n`.
    pub first_diagonal: Vec<f64>,
}

/// Complete a raw cell vector by development factors: cumulate, estimate
/// volume-weighted factors, and project every open row to ultimate.
///
/// This solves the same score equations as the quasi-Poisson refit and
/// produces the identical completion whenever that refit has a solution,
/// but it stays defined for histories with negative column totals
/// (downward development), which the log link cannot represent.
pub(crate) fn chain_ladder_completion(n: usize, values: &[f64]) -> Result<ChainLadderCompletion> {
    if values.len() != crate::triangle::num_cells(n) {
        return Err(Error::Validation(format!(
            "expected {} cells for a triangle of dimension {n}, got {}",
            crate::triangle::num_cells(n),
            values.len()
        )));
    }
    let cum = crate::triangle::cumulate(n, values);
    let mut factors = Vec::with_capacity(n.saturating_sub(1));
    for j in 2..=n {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 1..=n + 1 - j {
            num += cum[cell_index(n, i, j)];
            den += cum[cell_index(n, i, j - 1)];
        }
        if den <= 0.0 {
            return Err(Error::Validation(format!(
                "development factor f_{j} has non-positive denominator {den}"
            )));
        }
        factors.push(num / den);
    }
    let mut reserve = 0.0;
    let mut row_reserves = vec![0.0; n];
    let mut first_diagonal = Vec::with_capacity(n.saturating_sub(1));
    for i in 2..=n {
        let latest = cum[cell_index(n, i, n + 1 - i)];
        let mut ultimate = latest;
        for j in n + 2 - i..=n {
            ultimate *= factors[j - 2];
            if j == n + 2 - i {
                first_diagonal.push(ultimate - latest);
            }
        }
        row_reserves[i - 1] = ultimate - latest;
        reserve += ultimate - latest;
    }
    Ok(ChainLadderCompletion {
        reserve,
        row_reserves,
        first_diagonal,
    })
}

/// Classical chain-ladder reserve of a raw cell vector, by development
/// factors; see [`chain_ladder_completion`].  Bootstrap engines use it to
/// refit resampled pseudo-histories on the classical path.
pub fn chain_ladder_reserve(n: usize, values: &[f64]) -> Result<f64> {
    chain_ladder_completion(n, values).map(|c| c.reserve)
}

/// Fit the Poisson chain-ladder model by IRLS.
///
/// Converges when the relative deviance change drops below `1e-12` and the
/// applied parameter step below `1e-10` (sup-norm), capped at 100
/// iterations; the score equations are verified at the end either way.
pub fn fit_poisson(tri: &Triangle) -> Result<GlmFit> {
    if tri.total() <= 0.0 {
        return Err(Error::Validation(
            "cannot fit an all-zero triangle".to_string(),
        ));
    }
    let n = tri.n();
    let dm = DesignMatrix::new(n);
    let start = starting_point(tri);
    let sol = irls(dm.matrix(), tri.values(), &start, true, "poisson fit")?;
    Ok(GlmFit {
        n,
        theta: sol.theta,
        mu: sol.mu,
        deviance: sol.deviance,
        iterations: sol.iterations,
    })
}

/// A quasi-likelihood refit: same design and score equations, arbitrary
/// real-valued observations, no deviance tracking.
#[derive(Debug, Clone)]
pub struct QuasiFit {
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub iterations: usize,
}

/// Solve `X'(y - mu) = 0` over the observed triangle cells.
///
/// `start` should be the coefficients of the fit that produced the
/// pseudo-data; the refit then usually converges in a handful of steps.
pub fn fit_quasi(n: usize, y: &[f64], start: Option<&[f64]>) -> Result<QuasiFit> {
    let cells: Vec<(usize, usize)> = cell_order(n).collect();
    fit_quasi_cells(n, &cells, y, start)
}

/// [`fit_quasi`] over an explicit cell list (the one-year re-reserving step
/// appends a simulated diagonal to the observed cells).
pub fn fit_quasi_cells(
    n: usize,
    cells: &[(usize, usize)],
    y: &[f64],
    start: Option<&[f64]>,
) -> Result<QuasiFit> {
    if y.len() != cells.len() {
        return Err(Error::Validation(format!(
            "observation vector length {} does not match cell list length {}",
            y.len(),
            cells.len()
        )));
    }
    let dm = DesignMatrix::for_cells(n, cells);
    let default_start;
    let start = match start {
        Some(s) => s,
        None => {
            let mean = (y.iter().sum::<f64>() / y.len() as f64).max(1e-8);
            default_start = {
                let mut s = vec![0.0; num_params(n)];
                s[0] = mean.ln();
                s
            };
            &default_start
        }
    };
    let sol = irls(dm.matrix(), y, start, false, "quasi refit")?;
    Ok(QuasiFit {
        theta: sol.theta,
        mu: sol.mu,
        iterations: sol.iterations,
    })
}

/// Starting point from the development-factor solution: the chain-ladder
/// completion is multiplicative, so its logs solve the model exactly
/// whenever every development proportion is positive. Degenerate rows or
/// columns start at the parameter floor.
fn starting_point(tri: &Triangle) -> Vec<f64> {
    let n = tri.n();
    let p = num_params(n);
    let mut theta = vec![0.0; p];
    let fallback_tau = (tri.total() / tri.num_cells() as f64).max(1e-8).ln();
    let Ok(df) = dev_factors(tri) else {
        theta[0] = fallback_tau;
        return theta;
    };
    // Fraction of the ultimate paid through development year j.
    let mut d = vec![1.0; n + 1];
    for j in (1..n).rev() {
        d[j] = d[j + 1] / df.factor(j + 1);
    }
    let latest = tri.latest_diagonal();
    let ultimates: Vec<f64> = (1..=n).map(|i| latest[i - 1] / d[n + 1 - i]).collect();
    let pi: Vec<f64> = (1..=n)
        .map(|j| if j == 1 { d[1] } else { d[j] - d[j - 1] })
        .collect();
    if ultimates[0] <= 0.0 || pi[0] <= 0.0 {
        theta[0] = fallback_tau;
        return theta;
    }
    theta[0] = (ultimates[0] * pi[0]).ln();
    for i in 2..=n {
        theta[i - 1] = if ultimates[i - 1] > 0.0 {
            (ultimates[i - 1] / ultimates[0]).ln().max(PARAM_FLOOR)
        } else {
            PARAM_FLOOR
        };
    }
    for j in 2..=n {
        theta[n - 1 + j - 1] = if pi[j - 1] > 0.0 {
            (pi[j - 1] / pi[0]).ln().max(PARAM_FLOOR)
        } else {
            PARAM_FLOOR
        };
    }
    theta
}

struct IrlsSolution {
    theta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
    iterations: usize,
}

/// Poisson deviance `2 sum(y ln(y / mu) - (y - mu))`, defined for `y >= 0`.
fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            let log_term = if yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
            2.0 * (log_term - (yi - mi))
        })
        .sum()
}

pub(crate) fn linear_predictor(x: &DMatrix<f64>, theta: &[f64]) -> DVector<f64> {
    x * DVector::from_column_slice(theta)
}

/// Solve the symmetric system `M s = b` through an SVD with a relative
/// singular value cutoff. Directions the data cannot identify (all-zero
/// rows or columns drive their weight to zero) get a zero step instead of
/// blowing up.
pub(crate) fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::Singular("normal equations are zero".to_string()));
    }
    svd.solve(b, sigma_max * 1e-13)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// [`solve_spd`] with a matrix right-hand side (used to assemble hat
/// matrices column-block at a time).
pub(crate) fn solve_spd_matrix(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::Singular("normal equations are zero".to_string()));
    }
    svd.solve(b, sigma_max * 1e-13)
        .map_err(|e| Error::Singular(e.to_string()))
}

fn irls(
    x: &DMatrix<f64>,
    y: &[f64],
    start: &[f64],
    with_deviance: bool,
    context: &str,
) -> Result<IrlsSolution> {
    let p = x.ncols();
    assert_eq!(start.len(), p, "starting point has wrong length");
    let yv = DVector::from_column_slice(y);
    let score_tol = 1e-8 * (1.0 + y.iter().map(|v| v.abs()).sum::<f64>());

    let mut theta = start.to_vec();
    let mut eta = linear_predictor(x, &theta);
    let mut mu = eta.map(f64::exp);
    let mut deviance = if with_deviance {
        poisson_deviance(y, mu.as_slice())
    } else {
        f64::NAN
    };

    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let score = x.transpose() * (&yv - &mu);
        // Normal equations of the weighted least squares step, W = diag(mu).
        let mut wx = x.clone();
        for r in 0..wx.nrows() {
            let w = mu[r];
            for c in 0..p {
                wx[(r, c)] *= w;
            }
        }
        let m = x.transpose() * wx;
        let mut delta = solve_spd(&m, &score)?;

        // Guard rails: cap the raw step, then halve until the predictor
        // stays in exp-safe range. Inactive near a solution.
        let max_step = delta.amax();
        if max_step > 20.0 {
            delta *= 20.0 / max_step;
        }
        let mut scale = 1.0;
        let mut candidate;
        loop {
            candidate = theta.clone();
            for k in 0..p {
                candidate[k] += scale * delta[k];
                if k > 0 {
                    candidate[k] = candidate[k].max(PARAM_FLOOR);
                }
            }
            let eta_c = linear_predictor(x, &candidate);
            if eta_c.amax() <= ETA_LIMIT || scale < 1e-8 {
                eta = eta_c;
                break;
            }
            scale *= 0.5;
        }

        let step_size = candidate
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = candidate;
        mu = eta.map(f64::exp);

        if with_deviance {
            let new_deviance = poisson_deviance(y, mu.as_slice());
            let dev_change = (new_deviance - deviance).abs();
            let dev_ok = dev_change < 1e-12 * (1.0 + new_deviance.abs());
            deviance = new_deviance;
            if dev_ok && step_size < 1e-10 {
                converged = true;
                break;
            }
        } else if step_size < 1e-10 {
            converged = true;
            break;
        }
    }

    // Whatever the step criteria said, the fit only counts if the score
    // equations hold on the data scale.
    let score = x.transpose() * (&yv - &mu);
    if !converged || score.amax() > score_tol || !mu.iter().all(|v| v.is_finite()) {
        return Err(Error::NonConvergence {
            context: context.to_string(),
            iterations,
        });
    }
    Ok(IrlsSolution {
        theta,
        mu: mu.as_slice().to_vec(),
        deviance,
        iterations,
    })
}

/// Complete the square from a GLM fit: observed cells stay as they are,
/// future cells take their predicted means.
pub fn complete_square_glm(tri: &Triangle, fit: &GlmFit) -> FullSquare {
    let n = tri.n();
    let mut cells = vec![0.0; n * n];
    for (i, j) in cell_order(n) {
        cells[(i - 1) * n + (j - 1)] = tri.value(i, j);
    }
    for i in 2..=n {
        for j in n + 2 - i..=n {
            cells[(i - 1) * n + (j - 1)] = fit.predict(i, j);
        }
    }
    FullSquare::from_values(n, cells).expect("completed square is well-formed")
}
