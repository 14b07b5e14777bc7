//! Pearson residuals and their small-sample adjustments.
//!
//! Three adjustment variants are offered on top of the raw Pearson
//! residuals: a global degrees-of-freedom factor, a per-cell hat-diagonal
//! standardization, and a first-order mean/variance correction. The corner
//! cells `(1, n)` and `(n, 1)` carry the only observation of their row and
//! column parameter, so a classical fit reproduces them exactly; their
//! residuals are pinned to zero and flagged so that resampling pools can
//! skip them regardless of the chosen variant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::GlmFit;
use crate::robust::RobustFit;
use crate::triangle::{cell_order, is_corner, num_cells, num_params, Triangle};

/// Which adjustment pipeline produced a residual set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualVariant {
    /// Raw Pearson residuals `(y - mu) / sqrt(mu)`.
    Raw,
    /// Global factor `sqrt(N / (N - p))`.
    England,
    /// Per-cell standardization by `sqrt(1 - h_kk)`.
    Pinheiro,
    /// First-order mean and variance correction `(r - E[r]) / sqrt(1 - h_kk)`.
    Cordeiro,
}

impl std::fmt::Display for ResidualVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ResidualVariant::Raw => "raw",
            ResidualVariant::England => "england",
            ResidualVariant::Pinheiro => "pinheiro",
            ResidualVariant::Cordeiro => "cordeiro",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for ResidualVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ResidualVariant::Raw),
            "england" => Ok(ResidualVariant::England),
            "pinheiro" => Ok(ResidualVariant::Pinheiro),
            "cordeiro" => Ok(ResidualVariant::Cordeiro),
            other => Err(Error::Validation(format!(
                "unknown residual variant '{other}' (expected raw, england, pinheiro, or cordeiro)"
            ))),
        }
    }
}

/// Residuals over the observed cells in row-major cell order.
#[derive(Clone, Debug)]
pub struct ResidualSet {
    n: usize,
    values: Vec<f64>,
    variant: ResidualVariant,
    corner_excluded: Vec<bool>,
}

impl ResidualSet {
    /// Triangle dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Residual values, row-major; corners are zero.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Which pipeline produced these values.
    pub fn variant(&self) -> ResidualVariant {
        self.variant
    }

    /// Per-cell flags marking the corner cells `(1, n)` and `(n, 1)`.
    pub fn corner_excluded(&self) -> &[bool] {
        &self.corner_excluded
    }

    /// The resampling pool: every residual except the two corners.
    pub fn pool(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.corner_excluded)
            .filter(|(_, &corner)| !corner)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Indices (into row-major cell order) of the pool cells.
    pub fn pool_indices(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&k| !self.corner_excluded[k])
            .collect()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, variant: ResidualVariant) -> ResidualSet {
        ResidualSet {
            n: self.n,
            values,
            variant,
            corner_excluded: self.corner_excluded.clone(),
        }
    }
}

/// Recover the triangle dimension from a row-major cell count.
fn dimension_for(len: usize) -> Result<usize> {
    let mut n = 1;
    while num_cells(n) < len {
        n += 1;
    }
    if num_cells(n) != len || len == 0 {
        return Err(Error::Validation(format!(
            "{len} cells do not form a run-off triangle"
        )));
    }
    Ok(n)
}

fn corner_flags(n: usize) -> Vec<bool> {
    cell_order(n).map(|(i, j)| is_corner(n, i, j)).collect()
}

/// Raw Pearson residuals `(y - mu) / sqrt(mu)` with corners pinned to zero.
pub fn pearson(y: &[f64], mu: &[f64]) -> Result<ResidualSet> {
    if y.len() != mu.len() {
        return Err(Error::Validation(format!(
            "observation and mean vectors differ in length ({} vs {})",
            y.len(),
            mu.len()
        )));
    }
    let n = dimension_for(y.len())?;
    if let Some(bad) = mu.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::Validation(format!(
            "Pearson residuals require positive means, got {bad}"
        )));
    }
    let corner_excluded = corner_flags(n);
    let values = y
        .iter()
        .zip(mu.iter())
        .zip(&corner_excluded)
        .map(|((&yk, &mk), &corner)| if corner { 0.0 } else { (yk - mk) / mk.sqrt() })
        .collect();
    Ok(ResidualSet {
        n,
        values,
        variant: ResidualVariant::Raw,
        corner_excluded,
    })
}

/// Global small-sample factor `sqrt(N / (N - p))`.
pub fn adjust_england(rs: &ResidualSet, n_obs: usize, p: usize) -> Result<ResidualSet> {
    if n_obs <= p {
        return Err(Error::Validation(format!(
            "degrees-of-freedom factor needs N > p, got N = {n_obs}, p = {p}"
        )));
    }
    let factor = (n_obs as f64 / (n_obs - p) as f64).sqrt();
    let values = rs.values.iter().map(|&r| factor * r).collect();
    Ok(rs.with_values(values, ResidualVariant::England))
}

/// Per-cell standardization `r / sqrt(1 - h_kk)`.
pub fn adjust_pinheiro(rs: &ResidualSet, hat_diag: &[f64]) -> Result<ResidualSet> {
    if hat_diag.len() != rs.values.len() {
        return Err(Error::Validation(format!(
            "hat diagonal has length {}, expected {}",
            hat_diag.len(),
            rs.values.len()
        )));
    }
    let mut values = Vec::with_capacity(rs.values.len());
    for (k, (&r, &h)) in rs.values.iter().zip(hat_diag).enumerate() {
        if rs.corner_excluded[k] {
            values.push(0.0);
        } else if h >= 1.0 {
            return Err(Error::Validation(format!(
                "hat diagonal {h} at cell index {k} leaves no residual variance"
            )));
        } else {
            values.push(r / (1.0 - h).sqrt());
        }
    }
    Ok(rs.with_values(values, ResidualVariant::Pinheiro))
}

/// First-order mean/variance correction `(r - E[r]) / sqrt(Var[r])` with
/// `E[r] = -1/2 (I - H) d`, `d_k = h_kk / sqrt(w_kk)`, and
/// `Var[r] = diag(I - H)`. Passing the robust fit's hat matrix and means
/// yields the robust variant of the correction.
pub fn adjust_cordeiro(rs: &ResidualSet, h: &DMatrix<f64>, w_diag: &[f64]) -> Result<ResidualSet> {
    let len = rs.values.len();
    if h.nrows() != len || h.ncols() != len {
        return Err(Error::Validation(format!(
            "hat matrix is {}x{}, expected {len}x{len}",
            h.nrows(),
            h.ncols()
        )));
    }
    if w_diag.len() != len {
        return Err(Error::Validation(format!(
            "variance diagonal has length {}, expected {len}",
            w_diag.len()
        )));
    }
    if let Some(bad) = w_diag.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::Validation(format!(
            "variance diagonal must be positive, got {bad}"
        )));
    }
    let d: Vec<f64> = (0..len).map(|k| h[(k, k)] / w_diag[k].sqrt()).collect();
    let mut values = Vec::with_capacity(len);
    for k in 0..len {
        if rs.corner_excluded[k] {
            values.push(0.0);
            continue;
        }
        let var = 1.0 - h[(k, k)];
        if !(var > 0.0) {
            return Err(Error::Validation(format!(
                "non-positive residual variance {var} at cell index {k}"
            )));
        }
        let hd: f64 = (0..len).map(|l| h[(k, l)] * d[l]).sum();
        let expectation = -0.5 * (d[k] - hd);
        values.push((rs.values[k] - expectation) / var.sqrt());
    }
    Ok(rs.with_values(values, ResidualVariant::Cordeiro))
}

/// Residuals of a classical fit under the requested variant.
pub fn classical_residuals(
    fit: &GlmFit,
    tri: &Triangle,
    variant: ResidualVariant,
) -> Result<ResidualSet> {
    if fit.n() != tri.n() {
        return Err(Error::Validation(format!(
            "fit is for n = {}, triangle has n = {}",
            fit.n(),
            tri.n()
        )));
    }
    let raw = pearson(tri.values(), fit.mu())?;
    match variant {
        ResidualVariant::Raw => Ok(raw),
        ResidualVariant::England => {
            adjust_england(&raw, num_cells(tri.n()), num_params(tri.n()))
        }
        ResidualVariant::Pinheiro => adjust_pinheiro(&raw, &fit.hat_diag()),
        ResidualVariant::Cordeiro => adjust_cordeiro(&raw, &fit.hat_matrix(), fit.mu()),
    }
}

/// Residuals of a robust fit under the requested variant; the hat-based
/// adjustments use the robust hat matrix.
pub fn robust_residuals(
    fit: &RobustFit,
    tri: &Triangle,
    variant: ResidualVariant,
) -> Result<ResidualSet> {
    if fit.n() != tri.n() {
        return Err(Error::Validation(format!(
            "fit is for n = {}, triangle has n = {}",
            fit.n(),
            tri.n()
        )));
    }
    let raw = pearson(tri.values(), fit.mu())?;
    match variant {
        ResidualVariant::Raw => Ok(raw),
        ResidualVariant::England => {
            adjust_england(&raw, num_cells(tri.n()), num_params(tri.n()))
        }
        ResidualVariant::Pinheiro => adjust_pinheiro(&raw, &fit.hat_diag()?),
        ResidualVariant::Cordeiro => adjust_cordeiro(&raw, &fit.hat_matrix()?, fit.mu()),
    }
}
