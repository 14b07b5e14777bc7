//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use chainladder::bootstrap::BootstrapMethod;
use chainladder::residuals::ResidualVariant;
use chainladder::robust::{DEFAULT_FLAG_THRESHOLD, DEFAULT_HUBER_C};

fn parse_method(s: &str) -> Result<BootstrapMethod, String> {
    s.parse().map_err(|e: chainladder::Error| e.to_string())
}

fn parse_residuals(s: &str) -> Result<ResidualVariant, String> {
    s.parse().map_err(|e: chainladder::Error| e.to_string())
}

#[derive(Parser)]
#[command(
    name = "chainladder",
    version,
    about = "Classical and robust chain-ladder reserving with bootstrap prediction intervals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Point estimates: classical and robust reserves, completed squares,
    /// robustness weights and flagged outliers.
    Reserve(ReserveArgs),
    /// Bootstrap the predictive distribution of the total reserve.
    Bootstrap(BootstrapArgs),
    /// Bootstrap the one-year claims development result.
    Cdr(CdrArgs),
    /// Draw a synthetic run-off square from a simulation config.
    Simulate(SimulateArgs),
    /// Coverage study of bootstrap quantiles over simulated datasets.
    Coverage(CoverageArgs),
    /// Residual and robustness-weight diagnostic tables.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
pub struct ReserveArgs {
    /// Incremental run-off triangle CSV (one accident year per line).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving the report, tables and manifest.
    #[arg(long)]
    pub output: PathBuf,
    /// Huber tuning constant of the robust estimator.
    #[arg(long, default_value_t = DEFAULT_HUBER_C)]
    pub huber_c: f64,
    /// Robustness weight below which a cell is flagged as an outlier.
    #[arg(long, default_value_t = DEFAULT_FLAG_THRESHOLD)]
    pub flag_threshold: f64,
}

#[derive(Args)]
pub struct BootstrapArgs {
    /// Incremental run-off triangle CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving the report, replicate files and manifest.
    #[arg(long)]
    pub output: PathBuf,
    /// Bootstrap engine: tcl, cb, wb, ifb or frb.
    #[arg(long, value_parser = parse_method)]
    pub method: BootstrapMethod,
    /// Residual adjustment: raw, england, pinheiro or cordeiro.
    #[arg(long, default_value = "cordeiro", value_parser = parse_residuals)]
    pub residuals: ResidualVariant,
    /// Number of bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    /// Random seed; replicate b draws from stream b of this seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quantile levels reported, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.75, 0.9, 0.95, 0.995])]
    pub levels: Vec<f64>,
    /// Huber tuning constant (wb, ifb, frb).
    #[arg(long, default_value_t = DEFAULT_HUBER_C)]
    pub huber_c: f64,
    /// Tail fraction winsorized on each side (wb).
    #[arg(long, default_value_t = 0.10)]
    pub winsor_fraction: f64,
    /// Influence-weight scale (ifb).
    #[arg(long, default_value_t = 30.0)]
    pub ifb_d: f64,
    /// Influence-weight decay (ifb).
    #[arg(long, default_value_t = 10.0)]
    pub ifb_gamma: f64,
    /// Quantile of the influence measure used as its cutoff (ifb).
    #[arg(long, default_value_t = 0.9)]
    pub ifb_quantile: f64,
    /// Worker threads; defaults to the machine parallelism
    /// (CHAINLADDER_THREADS overrides the default).
    #[arg(long)]
    pub threads: Option<usize>,
    /// replicates.csv of a previous run; adds its quantiles as a reference
    /// column to qq.csv.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args)]
pub struct CdrArgs {
    /// Incremental run-off triangle CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving the report, replicate files and manifest.
    #[arg(long)]
    pub output: PathBuf,
    /// Bootstrap engine: tcl or frb.
    #[arg(long, value_parser = parse_method)]
    pub method: BootstrapMethod,
    /// Residual adjustment: raw, england, pinheiro or cordeiro.
    #[arg(long, default_value = "cordeiro", value_parser = parse_residuals)]
    pub residuals: ResidualVariant,
    /// Number of bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quantile levels reported, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.75, 0.9, 0.95, 0.995])]
    pub levels: Vec<f64>,
    /// Huber tuning constant (frb).
    #[arg(long, default_value_t = DEFAULT_HUBER_C)]
    pub huber_c: f64,
    /// Worker threads; defaults to the machine parallelism
    /// (CHAINLADDER_THREADS overrides the default).
    #[arg(long)]
    pub threads: Option<usize>,
    /// replicates.csv of a previous run; adds its quantiles as a reference
    /// column to qq.csv.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Simulation config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving the square, triangle and manifest.
    #[arg(long)]
    pub output: PathBuf,
    /// Override the config's generation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct CoverageArgs {
    /// Simulation config (TOML), including any contamination.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving the coverage CSV and manifest.
    #[arg(long)]
    pub output: PathBuf,
    /// Bootstrap engines evaluated, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_method,
          default_values = ["tcl", "cb", "wb", "ifb", "frb"])]
    pub methods: Vec<BootstrapMethod>,
    /// Number of generated datasets.
    #[arg(long, default_value_t = 500)]
    pub datasets: usize,
    /// Bootstrap replicates per dataset.
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    /// Quantile levels evaluated, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.75, 0.9, 0.95, 0.995])]
    pub levels: Vec<f64>,
    /// Master seed; dataset d derives its generator and engine seeds from
    /// stream d.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Residual adjustment for the engines.
    #[arg(long, default_value = "cordeiro", value_parser = parse_residuals)]
    pub residuals: ResidualVariant,
    /// Huber tuning constant (wb, ifb, frb).
    #[arg(long, default_value_t = DEFAULT_HUBER_C)]
    pub huber_c: f64,
    /// Tail fraction winsorized on each side (wb).
    #[arg(long, default_value_t = 0.10)]
    pub winsor_fraction: f64,
    /// Influence-weight scale (ifb).
    #[arg(long, default_value_t = 30.0)]
    pub ifb_d: f64,
    /// Influence-weight decay (ifb).
    #[arg(long, default_value_t = 10.0)]
    pub ifb_gamma: f64,
    /// Quantile of the influence measure used as its cutoff (ifb).
    #[arg(long, default_value_t = 0.9)]
    pub ifb_quantile: f64,
    /// Worker threads for the dataset loop; defaults to the machine
    /// parallelism (CHAINLADDER_THREADS overrides the default).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Incremental run-off triangle CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving the residual and weight tables.
    #[arg(long)]
    pub output: PathBuf,
    /// Huber tuning constant of the robust fit.
    #[arg(long, default_value_t = DEFAULT_HUBER_C)]
    pub huber_c: f64,
    /// Robustness weight below which a cell is flagged as an outlier.
    #[arg(long, default_value_t = DEFAULT_FLAG_THRESHOLD)]
    pub flag_threshold: f64,
}
