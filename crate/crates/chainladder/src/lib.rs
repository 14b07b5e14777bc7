//! Claims reserving for run-off triangles with classical and robust
//! chain-ladder estimators and bootstrap prediction intervals.
//!
//! The crate is organised around a small pipeline:
//!
//! * [`triangle`] — run-off triangle containers, CSV parsing and the
//!   log-linear design matrix shared by every estimator.
//! * [`glm`] — the overdispersed Poisson chain-ladder model: maximum
//!   likelihood fit, development factors, square completion and reserves.
//! * [`robust`] — a Huber-type robust alternative to the classical fit,
//!   with per-cell robustness weights and outlier flagging.
//! * [`residuals`] — Pearson residuals and their bias adjustments, the raw
//!   material for every resampling scheme.
//! * [`bootstrap`] — the bootstrap engines (classical, winsorized,
//!   influence-function weighted, fast-and-robust) and quantile summaries.
//! * [`cdr`] — one-year-ahead claims development results obtained by
//!   re-reserving each bootstrap replicate after one simulated diagonal.
//! * [`simulate`] — triangle generators, contamination helpers and the
//!   coverage study harness used to validate the engines end to end.
//!
//! All engines are deterministic: every replicate derives its RNG stream
//! from the run seed and the replicate index only, so results do not depend
//! on thread scheduling. With the default `parallel` feature replicates run
//! on a rayon pool; without it the same code runs sequentially.

pub mod bootstrap;
pub mod cdr;
pub mod dist;
pub mod glm;
pub mod residuals;
pub mod robust;
pub mod simulate;
pub mod triangle;

mod error;
mod exec;

pub use error::{Error, Result};
pub use exec::ExecOptions;
