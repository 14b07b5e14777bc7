//! Run-off triangles, the full square of payments, and the log-linear
//! design matrix shared by the classical and robust estimators.
//!
//! A triangle with `n` accident years stores the incremental amounts
//! `y[i][j]` for accident year `i` and development year `j` (both 1-based)
//! with `i + j <= n + 1`. Cells are kept in row-major order, i.e. row 1
//! first, each row scanned left to right; every vector of per-cell values in
//! this crate (observations, fitted means, residuals, leverages) follows the
//! same order.

use nalgebra::DMatrix;

use crate::{Error, Result};

// ---- Cell indexing -------------------------------------------------------

/// Number of observed cells of an `n`-year triangle: `n (n + 1) / 2`.
pub fn num_cells(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-major iterator over the observed cells `(i, j)`, 1-based.
pub fn cell_order(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=n).flat_map(move |i| (1..=n + 1 - i).map(move |j| (i, j)))
}

/// Position of cell `(i, j)` in row-major order.
///
/// Row `i` starts after the `i - 1` previous rows, which hold
/// `n + (n-1) + ... + (n-i+2)` cells.
pub fn cell_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= 1 && j >= 1 && i + j <= n + 1, "cell out of triangle");
    let before = (i - 1) * (2 * n + 2 - i) / 2;
    before + (j - 1)
}

/// The two cells that are the only observation of their row or column
/// parameter: `(1, n)` and `(n, 1)`.
///
/// Any fit reproduces them (almost) exactly, so their residuals carry no
/// resampling information and they are excluded from every residual pool.
pub fn is_corner(n: usize, i: usize, j: usize) -> bool {
    (i == 1 && j == n) || (i == n && j == 1)
}

/// Cumulate row-major incremental values: `C[i][j] = sum_{k<=j} y[i][k]`.
pub fn cumulate(n: usize, values: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), num_cells(n), "value vector does not match n");
    let mut out = values.to_vec();
    for i in 1..=n {
        for j in 2..=n + 1 - i {
            out[cell_index(n, i, j)] += out[cell_index(n, i, j - 1)];
        }
    }
    out
}

/// Inverse of [`cumulate`]: first differences along each row.
pub fn decumulate(n: usize, values: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), num_cells(n), "value vector does not match n");
    let mut out = values.to_vec();
    for i in 1..=n {
        for j in (2..=n + 1 - i).rev() {
            out[cell_index(n, i, j)] -= out[cell_index(n, i, j - 1)];
        }
    }
    out
}

// ---- Triangle ------------------------------------------------------------

/// Layout of a triangle CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    /// Cells hold incremental payments (the native representation).
    Incremental,
    /// Cells hold cumulative payments; rows must be non-decreasing.
    Cumulative,
}

/// An incremental run-off triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    n: usize,
    cells: Vec<f64>,
}

impl Triangle {
    /// Build a triangle from per-row incremental values. Row `i` (0-based
    /// here) must hold `n - i` entries; all values must be finite and
    /// non-negative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "a triangle needs at least 2 accident years, got {n}"
            )));
        }
        let mut cells = Vec::with_capacity(num_cells(n));
        for (idx, row) in rows.iter().enumerate() {
            let expect = n - idx;
            if row.len() != expect {
                return Err(Error::Validation(format!(
                    "row {} must have {} cells, got {}",
                    idx + 1,
                    expect,
                    row.len()
                )));
            }
            cells.extend_from_slice(row);
        }
        Self::from_values(n, cells)
    }

    /// Build a triangle from a row-major cell vector.
    pub fn from_values(n: usize, cells: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!(
                "a triangle needs at least 2 accident years, got {n}"
            )));
        }
        if cells.len() != num_cells(n) {
            return Err(Error::Validation(format!(
                "expected {} cells for n = {}, got {}",
                num_cells(n),
                n,
                cells.len()
            )));
        }
        for (k, &v) in cells.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!("cell {k} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::Validation(format!(
                    "cell {k} is negative ({v}); incremental triangles must be non-negative"
                )));
            }
        }
        Ok(Triangle { n, cells })
    }

    /// Parse a bare CSV triangle: one line per accident year, each line one
    /// cell shorter than the previous, no header. Trailing empty fields
    /// (from trailing commas) are ignored.
    pub fn parse_csv(text: &str, layout: CsvLayout) -> Result<Self> {
        let rows = parse_number_rows(text)?;
        let n = rows.len();
        if n < 2 {
            return Err(Error::Parse(format!(
                "expected at least 2 data rows, got {n}"
            )));
        }
        for (idx, row) in rows.iter().enumerate() {
            if row.len() != n - idx {
                return Err(Error::Parse(format!(
                    "line {}: expected {} values, got {}",
                    idx + 1,
                    n - idx,
                    row.len()
                )));
            }
        }
        match layout {
            CsvLayout::Incremental => Self::from_rows(&rows),
            CsvLayout::Cumulative => {
                for (idx, row) in rows.iter().enumerate() {
                    for w in row.windows(2) {
                        if w[1] < w[0] {
                            return Err(Error::Parse(format!(
                                "line {}: cumulative values decrease ({} after {})",
                                idx + 1,
                                w[1],
                                w[0]
                            )));
                        }
                    }
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Self::from_values(n, decumulate(n, &flat))
            }
        }
    }

    /// Serialize as incremental CSV. Values round-trip exactly through
    /// [`Triangle::parse_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 1..=self.n {
            let row: Vec<String> = (1..=self.n + 1 - i)
                .map(|j| format!("{}", self.value(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Number of accident years.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of observed cells.
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Row-major incremental cell values.
    pub fn values(&self) -> &[f64] {
        &self.cells
    }

    /// Incremental value of cell `(i, j)`, 1-based.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.cells[cell_index(self.n, i, j)]
    }

    /// Replace the value of cell `(i, j)`.
    pub fn set_value(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Validation(format!(
                "replacement value for cell ({i}, {j}) must be finite and non-negative, got {v}"
            )));
        }
        let idx = cell_index(self.n, i, j);
        self.cells[idx] = v;
        Ok(())
    }

    /// Cumulative payments in the same row-major layout.
    pub fn cumulative(&self) -> Vec<f64> {
        cumulate(self.n, &self.cells)
    }

    /// The latest known cumulative amount per accident year,
    /// `C[i][n - i + 1]` for `i = 1..=n`.
    pub fn latest_diagonal(&self) -> Vec<f64> {
        let cum = self.cumulative();
        (1..=self.n)
            .map(|i| cum[cell_index(self.n, i, self.n + 1 - i)])
            .collect()
    }

    /// Sum of all observed cells.
    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }
}

// ---- Full square ---------------------------------------------------------

/// A completed `n x n` square of incremental payments: the observed upper
/// triangle plus (predicted or simulated) future cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FullSquare {
    n: usize,
    cells: Vec<f64>,
}

impl FullSquare {
    /// Build from a row-major `n * n` cell vector.
    pub fn from_values(n: usize, cells: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!(
                "a square needs at least 2 accident years, got {n}"
            )));
        }
        if cells.len() != n * n {
            return Err(Error::Validation(format!(
                "expected {} cells for n = {}, got {}",
                n * n,
                n,
                cells.len()
            )));
        }
        if let Some(k) = cells.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("cell {k} is not finite")));
        }
        Ok(FullSquare { n, cells })
    }

    /// Parse an `n x n` CSV of incremental payments (no header).
    pub fn parse_csv(text: &str) -> Result<Self> {
        let rows = parse_number_rows(text)?;
        let n = rows.len();
        for (idx, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "line {}: expected {} values, got {}",
                    idx + 1,
                    n,
                    row.len()
                )));
            }
        }
        Self::from_values(n, rows.into_iter().flatten().collect())
    }

    /// Serialize as CSV, one accident year per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 1..=self.n {
            let row: Vec<String> = (1..=self.n)
                .map(|j| format!("{}", self.value(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Value of cell `(i, j)`, 1-based, `i, j <= n`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.cells[(i - 1) * self.n + (j - 1)]
    }

    /// Row-major `n * n` cell values.
    pub fn values(&self) -> &[f64] {
        &self.cells
    }

    /// Extract the observed upper triangle (`i + j <= n + 1`).
    pub fn upper_triangle(&self) -> Result<Triangle> {
        let cells: Vec<f64> = cell_order(self.n)
            .map(|(i, j)| self.value(i, j))
            .collect();
        Triangle::from_values(self.n, cells)
    }

    /// Sum of the future cells (`i + j > n + 1`): the true outstanding
    /// amount when the square holds simulated ground truth.
    pub fn lower_sum(&self) -> f64 {
        let mut total = 0.0;
        for i in 2..=self.n {
            for j in (self.n + 2 - i)..=self.n {
                total += self.value(i, j);
            }
        }
        total
    }
}

/// Parse lines of comma-separated numbers, ignoring blank lines and
/// trailing empty fields.
fn parse_number_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        while fields.last().is_some_and(|f| f.is_empty()) {
            fields.pop();
        }
        let mut row = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}, field {}: cannot parse {:?} as a number",
                    lineno + 1,
                    col + 1,
                    field
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---- Design matrix -------------------------------------------------------

/// Number of parameters of the log-linear model: intercept, `n - 1` accident
/// year effects and `n - 1` development year effects.
pub fn num_params(n: usize) -> usize {
    2 * n - 1
}

/// Design row for cell `(i, j)` of the square (also valid for future cells):
/// `log mu_ij = tau + alpha_i + beta_j` with `alpha_1 = beta_1 = 0`.
///
/// Column order: intercept, `alpha_2..alpha_n`, `beta_2..beta_n`.
pub fn design_row(n: usize, i: usize, j: usize) -> Vec<f64> {
    debug_assert!((1..=n).contains(&i) && (1..=n).contains(&j));
    let mut row = vec![0.0; num_params(n)];
    row[0] = 1.0;
    if i >= 2 {
        row[i - 1] = 1.0;
    }
    if j >= 2 {
        row[n - 1 + j - 1] = 1.0;
    }
    row
}

/// Linear predictor `tau + alpha_i + beta_j` for cell `(i, j)`.
pub fn eta(theta: &[f64], n: usize, i: usize, j: usize) -> f64 {
    debug_assert_eq!(theta.len(), num_params(n));
    let mut e = theta[0];
    if i >= 2 {
        e += theta[i - 1];
    }
    if j >= 2 {
        e += theta[n - 1 + j - 1];
    }
    e
}

/// The dense design matrix over the observed cells in row-major cell order.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n: usize,
    x: DMatrix<f64>,
}

impl DesignMatrix {
    /// Design matrix of the observed triangle: `num_cells(n)` rows and
    /// `2n - 1` columns, full column rank.
    pub fn new(n: usize) -> Self {
        let rows: Vec<Vec<f64>> = cell_order(n).map(|(i, j)| design_row(n, i, j)).collect();
        Self::from_cells(n, &rows)
    }

    /// Design matrix over an explicit cell list (used for the extended
    /// history when re-reserving after one simulated diagonal).
    pub fn for_cells(n: usize, cells: &[(usize, usize)]) -> Self {
        let rows: Vec<Vec<f64>> = cells.iter().map(|&(i, j)| design_row(n, i, j)).collect();
        Self::from_cells(n, &rows)
    }

    fn from_cells(n: usize, rows: &[Vec<f64>]) -> Self {
        let p = num_params(n);
        let x = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
        DesignMatrix { n, x }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of observation rows.
    pub fn num_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Number of model parameters (`2n - 1`).
    pub fn num_params(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_ashe() -> Triangle {
        let text = include_str!("../../../data/taylor_ashe.csv");
        Triangle::parse_csv(text, CsvLayout::Incremental).expect("fixture parses")
    }

    #[test]
    fn cell_indexing_is_row_major() {
        let order: Vec<(usize, usize)> = cell_order(4).collect();
        assert_eq!(order[0], (1, 1));
        assert_eq!(order[3], (1, 4));
        assert_eq!(order[4], (2, 1));
        assert_eq!(order.len(), num_cells(4));
        for (k, (i, j)) in order.iter().enumerate() {
            assert_eq!(cell_index(4, *i, *j), k, "index mismatch at ({i}, {j})");
        }
    }

    #[test]
    fn corner_cells_are_first_row_last_and_last_row_first() {
        assert!(is_corner(10, 1, 10));
        assert!(is_corner(10, 10, 1));
        assert!(!is_corner(10, 1, 1));
        assert!(!is_corner(10, 2, 9));
        assert_eq!(cell_order(10).filter(|&(i, j)| is_corner(10, i, j)).count(), 2);
    }

    #[test]
    fn cumulate_matches_hand_summed_first_row() {
        let tri = taylor_ashe();
        let cum = tri.cumulative();
        // First row summed by hand from the incremental values.
        assert_eq!(cum[cell_index(10, 1, 1)], 357848.0);
        assert_eq!(cum[cell_index(10, 1, 2)], 1124788.0);
        assert_eq!(cum[cell_index(10, 1, 10)], 3901463.0);
        // Last accident year has a single cell.
        assert_eq!(cum[cell_index(10, 10, 1)], 344014.0);
    }

    #[test]
    fn decumulate_inverts_cumulate() {
        let tri = taylor_ashe();
        let cum = cumulate(tri.n(), tri.values());
        let back = decumulate(tri.n(), &cum);
        assert_eq!(back, tri.values());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let tri = taylor_ashe();
        let text = tri.to_csv();
        let again = Triangle::parse_csv(&text, CsvLayout::Incremental).unwrap();
        assert_eq!(again, tri);
    }

    #[test]
    fn cumulative_csv_parses_to_same_triangle() {
        let tri = taylor_ashe();
        let cum = tri.cumulative();
        let mut text = String::new();
        for i in 1..=tri.n() {
            let row: Vec<String> = (1..=tri.n() + 1 - i)
                .map(|j| format!("{}", cum[cell_index(tri.n(), i, j)]))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let parsed = Triangle::parse_csv(&text, CsvLayout::Cumulative).unwrap();
        assert_eq!(parsed, tri);
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(matches!(
            Triangle::parse_csv("1,2\n3\nx", CsvLayout::Incremental),
            Err(Error::Parse(_))
        ));
        // Ragged shape: second row must be one shorter than the first.
        assert!(Triangle::parse_csv("1,2,3\n4\n5", CsvLayout::Incremental).is_err());
        // Negative incremental cell.
        assert!(Triangle::parse_csv("1,-2\n3", CsvLayout::Incremental).is_err());
        // Decreasing cumulative row.
        assert!(Triangle::parse_csv("5,4\n3", CsvLayout::Cumulative).is_err());
        // Single row is not a triangle.
        assert!(Triangle::parse_csv("1", CsvLayout::Incremental).is_err());
    }

    #[test]
    fn trailing_commas_and_blank_lines_are_tolerated() {
        let tri = Triangle::parse_csv("10,5,\n20\n\n", CsvLayout::Incremental).unwrap();
        assert_eq!(tri.n(), 2);
        assert_eq!(tri.value(1, 2), 5.0);
        assert_eq!(tri.value(2, 1), 20.0);
    }

    #[test]
    fn latest_diagonal_reads_the_hypotenuse() {
        let tri = taylor_ashe();
        let diag = tri.latest_diagonal();
        assert_eq!(diag.len(), 10);
        assert_eq!(diag[0], 3901463.0);
        assert_eq!(diag[9], 344014.0);
    }

    #[test]
    fn schedule_p_square_matches_its_triangle_and_true_reserve() {
        let square =
            FullSquare::parse_csv(include_str!("../../../data/schedule_p_square.csv")).unwrap();
        let tri = Triangle::parse_csv(
            include_str!("../../../data/schedule_p.csv"),
            CsvLayout::Incremental,
        )
        .unwrap();
        assert_eq!(square.upper_triangle().unwrap(), tri);
        // The future cells of this dataset sum to a known outstanding amount.
        assert_eq!(square.lower_sum(), 1812.0);
    }

    #[test]
    fn design_matrix_has_expected_shape_and_entries() {
        let dm = DesignMatrix::new(10);
        assert_eq!(dm.num_rows(), 55);
        assert_eq!(dm.num_params(), 19);
        for (r, (i, j)) in cell_order(10).enumerate() {
            let row = dm.matrix().row(r);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let expect = 1 + usize::from(i >= 2) + usize::from(j >= 2);
            assert_eq!(ones, expect, "row for cell ({i}, {j})");
            assert_eq!(row[0], 1.0, "intercept column must be all ones");
        }
    }

    /// Column rank by plain Gaussian elimination with partial pivoting,
    /// independent of any linear algebra library.
    fn rank_by_elimination(m: &DMatrix<f64>) -> usize {
        let mut a: Vec<Vec<f64>> = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect();
        let (rows, cols) = (a.len(), a[0].len());
        let mut rank = 0;
        for col in 0..cols {
            let pivot = (rank..rows).max_by(|&x, &y| {
                a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap()
            });
            let Some(p) = pivot else { break };
            if a[p][col].abs() < 1e-9 {
                continue;
            }
            a.swap(rank, p);
            for r in 0..rows {
                if r != rank && a[r][col].abs() > 0.0 {
                    let factor = a[r][col] / a[rank][col];
                    for c in col..cols {
                        a[r][c] -= factor * a[rank][c];
                    }
                }
            }
            rank += 1;
            if rank == rows {
                break;
            }
        }
        rank
    }

    #[test]
    fn design_matrix_has_full_column_rank() {
        for n in [2, 5, 10] {
            let dm = DesignMatrix::new(n);
            assert_eq!(
                rank_by_elimination(dm.matrix()),
                num_params(n),
                "design for n = {n} must have full column rank"
            );
        }
    }

    #[test]
    fn eta_matches_design_row_inner_product() {
        let n = 7;
        let p = num_params(n);
        // A deterministic but non-trivial parameter vector.
        let theta: Vec<f64> = (0..p).map(|k| (k as f64 * 0.37).sin()).collect();
        for i in 1..=n {
            for j in 1..=n {
                let row = design_row(n, i, j);
                let dot: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
                assert!(
                    (dot - eta(&theta, n, i, j)).abs() < 1e-12,
                    "eta disagrees with design row at ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn full_square_round_trips_through_csv() {
        let square =
            FullSquare::parse_csv(include_str!("../../../data/schedule_p_square.csv")).unwrap();
        let again = FullSquare::parse_csv(&square.to_csv()).unwrap();
        assert_eq!(again, square);
    }
}
