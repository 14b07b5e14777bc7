//! Synthetic run-off squares, contamination injection and the coverage
//! study.
//!
//! Three generating models produce complete `n x n` squares of incremental
//! claims, so that the upper triangle can be handed to the estimators while
//! the lower triangle keeps the *true* outstanding amount:
//!
//! * **benchmark** — each cell is one Poisson draw whose mean follows a
//!   multiplicative surface: a base level `lambda0`, linear accident-year
//!   growth `eta2`, and exponential development decay tuned so that the
//!   column at development period `n/2 + 1` is a fraction `eta1` of the
//!   first column;
//! * **schiegl** — a collective model per cell: a Poisson claim count with
//!   the same surface (here `lambda0` is a count scale) and Gamma claim
//!   severities with mean `r`;
//! * **kaishev** — a collective model per accident year: a Poisson claim
//!   count with mean `lambda0 (1 + (i-1) eta2)`, Gamma severities, and a
//!   random development-year allocation of each claim through a
//!   `Beta(beta_a, beta_b)` draw binned uniformly into `1..=n`.
//!
//! [`contaminate`] scales selected observed cells by a factor, mimicking
//! isolated outliers. [`coverage_study`] ties everything together: generate
//! a square, contaminate its observed triangle, bootstrap it with each
//! requested engine, and record how often the true reserve falls below the
//! bootstrap quantile at each level.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap, run_replicates, BootstrapMethod, BootstrapOptions};
use crate::error::{Error, Result};
use crate::exec::ExecOptions;
use crate::triangle::FullSquare;

/// Which generating model to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    Benchmark,
    Schiegl,
    Kaishev,
}

impl std::fmt::Display for SimModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SimModel::Benchmark => "benchmark",
            SimModel::Schiegl => "schiegl",
            SimModel::Kaishev => "kaishev",
        };
        f.write_str(name)
    }
}

/// One contaminated cell: observed cell `(i, j)` is multiplied by `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub i: usize,
    pub j: usize,
    pub factor: f64,
}

/// First published contamination setting: cells `(2,3)` and `(3,2)` scaled
/// by five.
pub fn contamination_setting_1() -> Vec<Contamination> {
    vec![
        Contamination { i: 2, j: 3, factor: 5.0 },
        Contamination { i: 3, j: 2, factor: 5.0 },
    ]
}

/// Second published contamination setting: cells `(2,3)` and `(4,1)` scaled
/// by two and a half.
pub fn contamination_setting_2() -> Vec<Contamination> {
    vec![
        Contamination { i: 2, j: 3, factor: 2.5 },
        Contamination { i: 4, j: 1, factor: 2.5 },
    ]
}

/// Generator configuration, loadable from TOML (all fields optional, with
/// the benchmark defaults below).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Generating model.
    pub model: SimModel,
    /// Square size (accident and development years).
    pub n: usize,
    /// Base level: expected first-cell amount (benchmark) or count scale
    /// (collective models).
    pub lambda0: f64,
    /// Development decay: the column at period `n/2 + 1` has `eta1` times
    /// the first column's mean; must lie in `(0, 1)`.
    pub eta1: f64,
    /// Linear accident-year growth rate.
    pub eta2: f64,
    /// Gamma severity mean (shape `r`, scale 1) for the collective models.
    pub r: f64,
    /// Beta shape parameters of the kaishev development allocation.
    pub beta_a: f64,
    pub beta_b: f64,
    /// Observed cells to scale after generation.
    pub contamination: Vec<Contamination>,
    /// Generation seed (the CLI's default; the coverage study manages its
    /// own per-dataset seeds).
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            model: SimModel::Benchmark,
            n: 10,
            lambda0: 10_000.0,
            eta1: 0.3,
            eta2: 0.05,
            r: 2_000.0,
            beta_a: 1.0,
            beta_b: 1.6,
            contamination: Vec::new(),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Published benchmark parameterization (Poisson amounts, mean 10,000
    /// in the first cell).
    pub fn benchmark() -> Self {
        SimConfig::default()
    }

    /// Collective-model preset: `lambda0` becomes a claim-count scale,
    /// chosen as `10000 / r = 5` so the expected first-cell amount stays
    /// 10,000.
    pub fn schiegl() -> Self {
        SimConfig {
            model: SimModel::Schiegl,
            lambda0: 5.0,
            ..SimConfig::default()
        }
    }

    /// Collective-model preset with per-accident-year counts and random
    /// development allocation; same count scale as [`SimConfig::schiegl`].
    pub fn kaishev() -> Self {
        SimConfig {
            model: SimModel::Kaishev,
            lambda0: 5.0,
            ..SimConfig::default()
        }
    }

    /// Expected cell value of the multiplicative surface:
    /// `lambda0 (1 + (i-1) eta2) exp(2 (j-1) / n * log eta1)`.
    pub fn cell_mean(&self, i: usize, j: usize) -> f64 {
        self.lambda0
            * (1.0 + (i as f64 - 1.0) * self.eta2)
            * (2.0 * (j as f64 - 1.0) / self.n as f64 * self.eta1.ln()).exp()
    }

    /// Expected claim count of accident year `i` in the kaishev model:
    /// `lambda0 (1 + (i-1) eta2)`.
    pub fn row_mean(&self, i: usize) -> f64 {
        self.lambda0 * (1.0 + (i as f64 - 1.0) * self.eta2)
    }

    /// Check all parameter ranges and contamination locations.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Validation(format!(
                "simulated square needs n >= 2, got {}",
                self.n
            )));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        if !(self.eta1 > 0.0 && self.eta1 < 1.0) {
            return Err(Error::Validation(format!(
                "eta1 must lie in (0, 1), got {}",
                self.eta1
            )));
        }
        if !(self.eta2 >= 0.0 && self.eta2.is_finite()) {
            return Err(Error::Validation(format!(
                "eta2 must be non-negative, got {}",
                self.eta2
            )));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Validation(format!(
                "severity mean r must be positive, got {}",
                self.r
            )));
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0) {
            return Err(Error::Validation(format!(
                "Beta shapes must be positive, got ({}, {})",
                self.beta_a, self.beta_b
            )));
        }
        for c in &self.contamination {
            if c.i < 1 || c.j < 1 || c.i + c.j > self.n + 1 {
                return Err(Error::Validation(format!(
                    "contamination cell ({}, {}) lies outside the observed triangle",
                    c.i, c.j
                )));
            }
            if !c.factor.is_finite() {
                return Err(Error::Validation(format!(
                    "contamination factor for ({}, {}) must be finite, got {}",
                    c.i, c.j, c.factor
                )));
            }
        }
        Ok(())
    }

    /// Parse a configuration from TOML text; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<SimConfig> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn poisson(mean: f64) -> Result<Poisson<f64>> {
    Poisson::new(mean).map_err(|e| Error::Validation(format!("Poisson mean {mean}: {e}")))
}

fn gamma(mean: f64) -> Result<Gamma<f64>> {
    Gamma::new(mean, 1.0).map_err(|e| Error::Validation(format!("Gamma shape {mean}: {e}")))
}

/// Benchmark model: independent Poisson draws with the surface means.
pub fn gen_benchmark(cfg: &SimConfig, rng: &mut impl Rng) -> Result<FullSquare> {
    cfg.validate()?;
    let n = cfg.n;
    let mut values = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            values.push(poisson(cfg.cell_mean(i, j))?.sample(rng));
        }
    }
    FullSquare::from_values(n, values)
}

/// Schiegl model: per cell, a Poisson count of claims (surface means, count
/// scale `lambda0`) and the sum of that many Gamma severities.
pub fn gen_schiegl(cfg: &SimConfig, rng: &mut impl Rng) -> Result<FullSquare> {
    cfg.validate()?;
    let n = cfg.n;
    let severity = gamma(cfg.r)?;
    let mut values = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            let count = poisson(cfg.cell_mean(i, j))?.sample(rng) as u64;
            let mut total = 0.0;
            for _ in 0..count {
                total += severity.sample(rng);
            }
            values.push(total);
        }
    }
    FullSquare::from_values(n, values)
}

/// Development-year bin of an allocation draw `u` in `[0, 1]`: uniform-width
/// binning `min(n, floor(n u) + 1)`.
pub(crate) fn development_bin(n: usize, u: f64) -> usize {
    ((u * n as f64).floor() as usize + 1).min(n)
}

/// Kaishev model: per accident year, a Poisson number of claims with mean
/// `lambda0 (1 + (i-1) eta2)`; each claim takes a Gamma severity and lands
/// in the development year drawn through `Beta(beta_a, beta_b)`.
///
/// Unlike the cell-independent models, the whole-year claim counts couple
/// the cells of a row, so repeated draws genuinely move the reserve.
pub fn gen_kaishev(cfg: &SimConfig, rng: &mut impl Rng) -> Result<FullSquare> {
    cfg.validate()?;
    let n = cfg.n;
    let severity = gamma(cfg.r)?;
    let allocation = Beta::new(cfg.beta_a, cfg.beta_b)
        .map_err(|e| Error::Validation(format!("Beta({}, {}): {e}", cfg.beta_a, cfg.beta_b)))?;
    let mut values = vec![0.0; n * n];
    for i in 1..=n {
        let count = poisson(cfg.row_mean(i))?.sample(rng) as u64;
        for _ in 0..count {
            let z = severity.sample(rng);
            let j = development_bin(n, allocation.sample(rng));
            values[(i - 1) * n + (j - 1)] += z;
        }
    }
    FullSquare::from_values(n, values)
}

/// Draw one full square from the configured model. Contamination is *not*
/// applied here; see [`contaminate`].
pub fn generate(cfg: &SimConfig, rng: &mut impl Rng) -> Result<FullSquare> {
    match cfg.model {
        SimModel::Benchmark => gen_benchmark(cfg, rng),
        SimModel::Schiegl => gen_schiegl(cfg, rng),
        SimModel::Kaishev => gen_kaishev(cfg, rng),
    }
}

/// Scale the listed observed cells of a square, leaving everything else
/// untouched. Cells must lie in the upper triangle (`i + j <= n + 1`).
pub fn contaminate(square: &FullSquare, cells: &[Contamination]) -> Result<FullSquare> {
    let n = square.n();
    let mut values = square.values().to_vec();
    for c in cells {
        if c.i < 1 || c.j < 1 || c.i + c.j > n + 1 {
            return Err(Error::Validation(format!(
                "contamination cell ({}, {}) lies outside the observed triangle",
                c.i, c.j
            )));
        }
        values[(c.i - 1) * n + (c.j - 1)] *= c.factor;
    }
    FullSquare::from_values(n, values)
}

/// Options of the coverage study.
#[derive(Clone, Debug)]
pub struct CoverageOptions {
    /// Number of generated datasets.
    pub datasets: usize,
    /// Quantile levels evaluated, each in `(0, 1)`.
    pub levels: Vec<f64>,
    /// Master seed: dataset `d` draws its square from stream `d` and then
    /// its engine seed from the same stream.
    pub seed: u64,
    /// Thread preference for the dataset loop. Engine runs inside each
    /// dataset are forced sequential, so datasets parallelize without
    /// nested thread pools and results stay thread-count independent.
    pub exec: ExecOptions,
    /// Engine template: replicate count, residual variant and tuning
    /// constants. Its `seed` and `exec` fields are overridden per dataset.
    pub engine: BootstrapOptions,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions {
            datasets: 500,
            levels: vec![0.75, 0.90, 0.95, 0.995],
            seed: 0,
            exec: ExecOptions::default(),
            engine: BootstrapOptions::default(),
        }
    }
}

/// Coverage of one bootstrap method across the generated datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodCoverage {
    pub method: BootstrapMethod,
    /// Datasets where the engine produced a distribution.
    pub evaluated: usize,
    /// Datasets dropped for this method (engine error).
    pub failed: usize,
    /// Percentage of evaluated datasets whose true reserve fell at or
    /// below the bootstrap quantile; parallel to the table's `levels`.
    pub coverage_pct: Vec<f64>,
}

/// Result table of a coverage study.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageTable {
    pub model: SimModel,
    pub contamination: Vec<Contamination>,
    pub levels: Vec<f64>,
    pub n_datasets: usize,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<MethodCoverage>,
}

impl CoverageTable {
    /// Coverage percentage for one method and level, if present.
    pub fn coverage(&self, method: BootstrapMethod, level: f64) -> Option<f64> {
        let k = self.levels.iter().position(|&l| (l - level).abs() < 1e-12)?;
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.coverage_pct[k])
    }

    /// Render the table as CSV with one row per (method, level).
    pub fn to_csv(&self) -> String {
        let label = if self.contamination.is_empty() {
            "clean".to_string()
        } else {
            self.contamination
                .iter()
                .map(|c| format!("({},{})x{}", c.i, c.j, c.factor))
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut out = String::from("model,contamination,method,level,coverage_pct,n_datasets,B\n");
        for m in &self.methods {
            for (k, &level) in self.levels.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{:.2},{},{}\n",
                    self.model, label, m.method, level, m.coverage_pct[k], self.n_datasets,
                    self.replicates
                ));
            }
        }
        out
    }
}

struct DatasetOutcome {
    /// Per requested method: whether the true reserve fell at or below the
    /// bootstrap quantile, per level; `None` when the engine failed.
    hits: Vec<Option<Vec<bool>>>,
}

/// Generate `datasets` squares from `cfg`, contaminate their observed
/// triangles per `cfg.contamination`, bootstrap each triangle with every
/// requested method, and tabulate how often the true reserve (the clean
/// square's lower triangle) falls at or below the bootstrap quantile.
pub fn coverage_study(
    cfg: &SimConfig,
    methods: &[BootstrapMethod],
    opts: &CoverageOptions,
) -> Result<CoverageTable> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::Validation(
            "coverage study needs at least one bootstrap method".to_string(),
        ));
    }
    if opts.datasets == 0 {
        return Err(Error::Validation(
            "coverage study needs at least one dataset".to_string(),
        ));
    }
    for &level in &opts.levels {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Validation(format!(
                "quantile level must lie in (0, 1), got {level}"
            )));
        }
    }

    let (outcomes, dropped) = run_replicates(
        opts.datasets,
        opts.seed,
        opts.exec,
        |_: &DatasetOutcome| true,
        |_, rng| {
            let square = generate(cfg, rng)?;
            let true_reserve = square.lower_sum();
            let engine_seed: u64 = rng.gen();
            let observed = contaminate(&square, &cfg.contamination)?;
            let tri = observed.upper_triangle()?;
            let mut hits = Vec::with_capacity(methods.len());
            for &method in methods {
                let engine = BootstrapOptions {
                    seed: engine_seed,
                    exec: ExecOptions::sequential(),
                    ..opts.engine
                };
                match bootstrap(&tri, method, &engine) {
                    Ok(run) => {
                        let mut per_level = Vec::with_capacity(opts.levels.len());
                        for &level in &opts.levels {
                            per_level.push(true_reserve <= run.quantile(level)?);
                        }
                        hits.push(Some(per_level));
                    }
                    Err(_) => hits.push(None),
                }
            }
            Ok(DatasetOutcome { hits })
        },
    )?;

    let mut table_methods = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let mut evaluated = 0usize;
        let mut failed = dropped;
        let mut counts = vec![0usize; opts.levels.len()];
        for outcome in &outcomes {
            match &outcome.hits[mi] {
                Some(per_level) => {
                    evaluated += 1;
                    for (k, &hit) in per_level.iter().enumerate() {
                        if hit {
                            counts[k] += 1;
                        }
                    }
                }
                None => failed += 1,
            }
        }
        let coverage_pct = counts
            .iter()
            .map(|&c| {
                if evaluated > 0 {
                    100.0 * c as f64 / evaluated as f64
                } else {
                    f64::NAN
                }
            })
            .collect();
        table_methods.push(MethodCoverage {
            method,
            evaluated,
            failed,
            coverage_pct,
        });
    }
    Ok(CoverageTable {
        model: cfg.model,
        contamination: cfg.contamination.clone(),
        levels: opts.levels.clone(),
        n_datasets: opts.datasets,
        replicates: opts.engine.replicates,
        seed: opts.seed,
        methods: table_methods,
    })
}
