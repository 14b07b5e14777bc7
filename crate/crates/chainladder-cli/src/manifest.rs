//! Run manifests: every command records what it ran, on what input, with
//! which fully resolved configuration. Re-running the recorded command on
//! the recorded input reproduces the data outputs byte for byte; only the
//! timing field varies between runs.

use std::path::Path;

use serde::Serialize;

use chainladder::Result;

use crate::util::write_file;

#[derive(Serialize)]
pub struct InputInfo {
    /// Path as given on the command line.
    pub path: String,
    /// SHA-256 digest of the input file's bytes.
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    /// Full argument vector after the binary name.
    pub command: Vec<String>,
    /// The primary input file (triangle or simulation config).
    pub input: InputInfo,
    /// Fully resolved configuration with every default materialized.
    pub config: serde_json::Value,
    /// Seed governing all randomness of the run (0 for deterministic
    /// commands).
    pub seed: u64,
    /// Tool version that produced the outputs.
    pub version: String,
    /// Wall-clock duration of the run; informational only.
    pub timing_seconds: f64,
}

impl RunManifest {
    pub fn new(
        argv: &[String],
        input_path: &Path,
        input_bytes: &[u8],
        config: serde_json::Value,
        seed: u64,
    ) -> Self {
        RunManifest {
            command: argv.to_vec(),
            input: InputInfo {
                path: input_path.display().to_string(),
                sha256: crate::util::sha256_hex(input_bytes),
            },
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timing_seconds: 0.0,
        }
    }

    /// Serialize into `<dir>/manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .expect("manifest serialization cannot fail");
        write_file(dir, "manifest.json", &(json + "\n"))
    }
}
