//! Small shared helpers: hashing, file output, thread resolution, and the
//! plot-data CSV builders.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use chainladder::bootstrap::quantile;
use chainladder::{Error, ExecOptions, Result};

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Thread preference: explicit flag, else the CHAINLADDER_THREADS
/// environment variable, else the machine default. Results are identical
/// for every choice; only wall-clock time changes.
pub fn resolve_exec(threads: Option<usize>) -> ExecOptions {
    let resolved = threads.or_else(|| {
        std::env::var("CHAINLADDER_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    match resolved {
        Some(k) => ExecOptions::with_threads(k),
        None => ExecOptions::default(),
    }
}

/// Write `contents` to `<dir>/<name>`, creating the directory first.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Write a JSON value to `<dir>/<name>`, pretty-printed with a trailing
/// newline. Numbers serialize at full round-trip precision.
pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("JSON serialization cannot fail");
    write_file(dir, name, &(json + "\n"))
}

/// Equal-width histogram bins as `bin_low,bin_high,count` rows, ready for
/// bar plotting.
pub fn histogram_csv(values: &[f64], bins: usize) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    if values.is_empty() {
        return out;
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        out.push_str(&format!("{min},{max},{}\n", values.len()));
        return out;
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - min) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    for (k, &count) in counts.iter().enumerate() {
        let low = min + k as f64 * width;
        let high = min + (k + 1) as f64 * width;
        out.push_str(&format!("{low},{high},{count}\n"));
    }
    out
}

/// Replicate quantiles at the percent grid `0.01..=0.99` as QQ plot data;
/// with a reference sample, pairs each quantile with the reference run's
/// quantile at the same probability.
pub fn qq_csv(values: &[f64], reference: Option<&[f64]>) -> Result<String> {
    let mut out = String::from(match reference {
        Some(_) => "p,quantile,reference_quantile\n",
        None => "p,quantile\n",
    });
    for k in 1..=99 {
        let p = k as f64 / 100.0;
        let q = quantile(values, p)?;
        match reference {
            Some(r) => out.push_str(&format!("{p},{q},{}\n", quantile(r, p)?)),
            None => out.push_str(&format!("{p},{q}\n")),
        }
    }
    Ok(out)
}

/// Read the value column (second field) of a replicates.csv produced by a
/// previous bootstrap or cdr run.
pub fn read_replicates_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(1).ok_or_else(|| {
            Error::Parse(format!(
                "{}: line {}: expected at least two comma-separated fields",
                path.display(),
                lineno + 1
            ))
        })?;
        let v: f64 = field.trim().parse().map_err(|_| {
            Error::Parse(format!(
                "{}: line {}: cannot parse {:?} as a number",
                path.display(),
                lineno + 1,
                field
            ))
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no replicate values found",
            path.display()
        )));
    }
    Ok(values)
}
