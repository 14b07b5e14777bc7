//! The six subcommand implementations. Each one reads its input, runs the
//! corresponding library pipeline, writes machine outputs plus a manifest
//! into the output directory, and prints a short human summary.

use std::fs;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use chainladder::bootstrap::{bootstrap, BootstrapOptions, IfbParams};
use chainladder::cdr::bootstrap_cdr;
use chainladder::glm;
use chainladder::residuals::{classical_residuals, ResidualVariant};
use chainladder::robust;
use chainladder::simulate::{contaminate, coverage_study, generate, CoverageOptions, SimConfig};
use chainladder::triangle::{cell_index, cell_order, CsvLayout, FullSquare, Triangle};
use chainladder::Result;

use crate::args::*;
use crate::manifest::RunManifest;
use crate::util::{
    histogram_csv, qq_csv, read_replicates_csv, resolve_exec, write_file, write_json,
};

/// Completed square of a robust fit: observed cells kept, future cells
/// filled with the fitted means.
fn robust_completion(tri: &Triangle, fit: &robust::RobustFit) -> FullSquare {
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

pub fn cmd_reserve(args: &ReserveArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.input)?;
    let tri = Triangle::parse_csv(&text, CsvLayout::Incremental)?;

    let classical = glm::fit_poisson(&tri)?;
    let robust_fit = robust::fit_robust(&tri, args.huber_c, None)?;
    let flagged = robust::flag_outliers(&robust_fit, args.flag_threshold);

    let classical_reserve = classical.reserve();
    let robust_reserve = robust_fit.reserve();
    let discrepancy_pct = 100.0 * (classical_reserve - robust_reserve) / classical_reserve;

    let n = tri.n();
    let mut weights = String::from("i,j,weight\n");
    for (i, j) in cell_order(n) {
        weights.push_str(&format!(
            "{i},{j},{}\n",
            robust_fit.rob_weights()[cell_index(n, i, j)]
        ));
    }
    write_file(&args.output, "weights.csv", &weights)?;
    write_file(
        &args.output,
        "completed_classical.csv",
        &glm::complete_square_glm(&tri, &classical).to_csv(),
    )?;
    write_file(
        &args.output,
        "completed_robust.csv",
        &robust_completion(&tri, &robust_fit).to_csv(),
    )?;

    let flagged_json: Vec<serde_json::Value> = flagged
        .iter()
        .map(|&(i, j)| {
            json!({
                "i": i,
                "j": j,
                "weight": robust_fit.rob_weights()[cell_index(n, i, j)],
            })
        })
        .collect();
    let config = json!({
        "huber_c": args.huber_c,
        "flag_threshold": args.flag_threshold,
    });
    write_json(
        &args.output,
        "report.json",
        &json!({
            "classical_reserve": classical_reserve,
            "robust_reserve": robust_reserve,
            "discrepancy_pct": discrepancy_pct,
            "huber_c": args.huber_c,
            "classical_iterations": classical.iterations(),
            "robust_iterations": robust_fit.iterations(),
            "flagged": flagged_json,
        }),
    )?;

    println!("classical reserve  {classical_reserve:>14.0}");
    println!("robust reserve     {robust_reserve:>14.0}   (c = {})", args.huber_c);
    println!("discrepancy        {discrepancy_pct:>13.2}%");
    if flagged.is_empty() {
        println!("no cells flagged at weight < {}", args.flag_threshold);
    } else {
        let cells: Vec<String> = flagged
            .iter()
            .map(|&(i, j)| {
                format!("({i},{j}) {:.2}", robust_fit.rob_weights()[cell_index(n, i, j)])
            })
            .collect();
        println!("flagged cells      {}", cells.join(", "));
    }

    let mut manifest = RunManifest::new(argv, &args.input, text.as_bytes(), config, 0);
    manifest.timing_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.output)
}

/// Shared tail of the bootstrap and cdr commands: replicate vector,
/// histogram and QQ plot data, quantile report, summary line.
#[allow(clippy::too_many_arguments)]
fn write_distribution_outputs(
    args_output: &std::path::Path,
    replicates_csv: String,
    values: &[f64],
    reference: Option<&[f64]>,
    levels: &[f64],
    report_head: serde_json::Value,
    label: &str,
) -> Result<()> {
    write_file(args_output, "replicates.csv", &replicates_csv)?;
    write_file(args_output, "histogram.csv", &histogram_csv(values, 50))?;
    write_file(args_output, "qq.csv", &qq_csv(values, reference)?)?;

    let mut report = report_head;
    let mut quantiles = Vec::with_capacity(levels.len());
    println!("{label}");
    for &level in levels {
        let q = chainladder::bootstrap::quantile(values, level)?;
        quantiles.push(json!({"level": level, "value": q}));
        println!("  {:>5.1}%  {q:>14.0}", 100.0 * level);
    }
    report["quantiles"] = serde_json::Value::Array(quantiles);
    write_json(args_output, "report.json", &report)
}

pub fn cmd_bootstrap(args: &BootstrapArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.input)?;
    let tri = Triangle::parse_csv(&text, CsvLayout::Incremental)?;
    let reference = match &args.reference {
        Some(path) => Some(read_replicates_csv(path)?),
        None => None,
    };

    let opts = BootstrapOptions {
        replicates: args.replicates,
        seed: args.seed,
        residual_variant: args.residuals,
        huber_c: args.huber_c,
        winsor_fraction: args.winsor_fraction,
        ifb: IfbParams {
            d: args.ifb_d,
            gamma: args.ifb_gamma,
            quantile_level: args.ifb_quantile,
        },
        exec: resolve_exec(args.threads),
    };
    let run = bootstrap(&tri, args.method, &opts)?;

    let mut replicates = String::from("replicate,reserve\n");
    for (k, r) in run.reserves().iter().enumerate() {
        replicates.push_str(&format!("{k},{r}\n"));
    }
    let config = json!({
        "method": args.method.to_string(),
        "residuals": args.residuals.to_string(),
        "replicates": args.replicates,
        "seed": args.seed,
        "levels": args.levels,
        "huber_c": args.huber_c,
        "winsor_fraction": args.winsor_fraction,
        "ifb_d": args.ifb_d,
        "ifb_gamma": args.ifb_gamma,
        "ifb_quantile": args.ifb_quantile,
        "threads": args.threads,
    });
    write_distribution_outputs(
        &args.output,
        replicates,
        run.reserves(),
        reference.as_deref(),
        &args.levels,
        json!({
            "method": args.method.to_string(),
            "residuals": args.residuals.to_string(),
            "replicates": args.replicates,
            "failed": run.failed(),
            "seed": args.seed,
            "mean": run.mean(),
            "std_dev": run.std_dev(),
        }),
        &format!(
            "{} bootstrap reserve, B = {}, {} failed",
            args.method,
            args.replicates,
            run.failed()
        ),
    )?;

    let mut manifest = RunManifest::new(argv, &args.input, text.as_bytes(), config, args.seed);
    manifest.timing_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.output)
}

pub fn cmd_cdr(args: &CdrArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.input)?;
    let tri = Triangle::parse_csv(&text, CsvLayout::Incremental)?;
    let reference = match &args.reference {
        Some(path) => Some(read_replicates_csv(path)?),
        None => None,
    };

    let opts = BootstrapOptions {
        replicates: args.replicates,
        seed: args.seed,
        residual_variant: args.residuals,
        huber_c: args.huber_c,
        exec: resolve_exec(args.threads),
        ..BootstrapOptions::default()
    };
    let run = bootstrap_cdr(&tri, args.method, &opts)?;

    let mut replicates = String::from("replicate,cdr,reserve,ext_reserve,payments\n");
    for (k, cdr) in run.values().iter().enumerate() {
        replicates.push_str(&format!(
            "{k},{cdr},{},{},{}\n",
            run.reserves()[k],
            run.ext_reserves()[k],
            run.payments()[k]
        ));
    }
    let config = json!({
        "method": args.method.to_string(),
        "residuals": args.residuals.to_string(),
        "replicates": args.replicates,
        "seed": args.seed,
        "levels": args.levels,
        "huber_c": args.huber_c,
        "threads": args.threads,
    });
    write_distribution_outputs(
        &args.output,
        replicates,
        run.values(),
        reference.as_deref(),
        &args.levels,
        json!({
            "method": args.method.to_string(),
            "residuals": args.residuals.to_string(),
            "replicates": args.replicates,
            "failed": run.failed(),
            "seed": args.seed,
            "mean": run.mean(),
            "std_dev": run.std_dev(),
        }),
        &format!(
            "{} one-year CDR, B = {}, {} failed",
            args.method,
            args.replicates,
            run.failed()
        ),
    )?;

    let mut manifest = RunManifest::new(argv, &args.input, text.as_bytes(), config, args.seed);
    manifest.timing_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.output)
}

pub fn cmd_simulate(args: &SimulateArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.config)?;
    let mut cfg = SimConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clean = generate(&cfg, &mut rng)?;
    let observed = contaminate(&clean, &cfg.contamination)?;

    write_file(&args.output, "square.csv", &observed.to_csv())?;
    write_file(
        &args.output,
        "triangle.csv",
        &observed.upper_triangle()?.to_csv(),
    )?;
    let true_reserve = clean.lower_sum();
    write_json(
        &args.output,
        "report.json",
        &json!({
            "model": cfg.model.to_string(),
            "n": cfg.n,
            "seed": cfg.seed,
            "contaminated_cells": cfg.contamination.len(),
            "true_reserve": true_reserve,
        }),
    )?;

    println!(
        "{} square, n = {}, seed = {}, true reserve {true_reserve:.0}",
        cfg.model, cfg.n, cfg.seed
    );

    let config = serde_json::to_value(&cfg).expect("config serialization cannot fail");
    let mut manifest = RunManifest::new(argv, &args.config, text.as_bytes(), config, cfg.seed);
    manifest.timing_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.output)
}

pub fn cmd_coverage(args: &CoverageArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.config)?;
    let cfg = SimConfig::from_toml(&text)?;

    let opts = CoverageOptions {
        datasets: args.datasets,
        levels: args.levels.clone(),
        seed: args.seed,
        exec: resolve_exec(args.threads),
        engine: BootstrapOptions {
            replicates: args.replicates,
            residual_variant: args.residuals,
            huber_c: args.huber_c,
            winsor_fraction: args.winsor_fraction,
            ifb: IfbParams {
                d: args.ifb_d,
                gamma: args.ifb_gamma,
                quantile_level: args.ifb_quantile,
            },
            ..BootstrapOptions::default()
        },
    };
    let table = coverage_study(&cfg, &args.methods, &opts)?;

    let csv = table.to_csv();
    write_file(&args.output, "coverage.csv", &csv)?;

    println!(
        "{} coverage, {} datasets x {} replicates",
        table.model, table.n_datasets, table.replicates
    );
    for m in &table.methods {
        let cells: Vec<String> = table
            .levels
            .iter()
            .zip(&m.coverage_pct)
            .map(|(level, pct)| format!("{:.1}%: {pct:.2}", 100.0 * level))
            .collect();
        println!("  {:<4} {}   ({} failed)", m.method.to_string(), cells.join("  "), m.failed);
    }

    let config = json!({
        "sim": serde_json::to_value(&cfg).expect("config serialization cannot fail"),
        "methods": args.methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "datasets": args.datasets,
        "replicates": args.replicates,
        "levels": args.levels,
        "seed": args.seed,
        "residuals": args.residuals.to_string(),
        "huber_c": args.huber_c,
        "winsor_fraction": args.winsor_fraction,
        "ifb_d": args.ifb_d,
        "ifb_gamma": args.ifb_gamma,
        "ifb_quantile": args.ifb_quantile,
        "threads": args.threads,
    });
    let mut manifest = RunManifest::new(argv, &args.config, text.as_bytes(), config, args.seed);
    manifest.timing_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.output)
}

pub fn cmd_diagnose(args: &DiagnoseArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.input)?;
    let tri = Triangle::parse_csv(&text, CsvLayout::Incremental)?;
    let n = tri.n();

    let fit = glm::fit_poisson(&tri)?;
    let variants = [
        ResidualVariant::Raw,
        ResidualVariant::England,
        ResidualVariant::Pinheiro,
        ResidualVariant::Cordeiro,
    ];
    let mut sets = Vec::with_capacity(variants.len());
    for v in variants {
        sets.push(classical_residuals(&fit, &tri, v)?);
    }
    let mut residuals = String::from("i,j,raw,england,pinheiro,cordeiro\n");
    for (k, (i, j)) in cell_order(n).enumerate() {
        let row: Vec<String> = sets.iter().map(|s| s.values()[k].to_string()).collect();
        residuals.push_str(&format!("{i},{j},{}\n", row.join(",")));
    }
    write_file(&args.output, "residuals.csv", &residuals)?;

    let robust_fit = robust::fit_robust(&tri, args.huber_c, None)?;
    let flagged = robust::flag_outliers(&robust_fit, args.flag_threshold);
    let mut weights = String::from("i,j,weight,flagged\n");
    for (i, j) in cell_order(n) {
        let w = robust_fit.rob_weights()[cell_index(n, i, j)];
        weights.push_str(&format!("{i},{j},{w},{}\n", flagged.contains(&(i, j))));
    }
    write_file(&args.output, "weights.csv", &weights)?;

    let flagged_json: Vec<serde_json::Value> = flagged
        .iter()
        .map(|&(i, j)| {
            json!({
                "i": i,
                "j": j,
                "weight": robust_fit.rob_weights()[cell_index(n, i, j)],
            })
        })
        .collect();
    write_json(
        &args.output,
        "report.json",
        &json!({
            "classical_reserve": fit.reserve(),
            "robust_reserve": robust_fit.reserve(),
            "huber_c": args.huber_c,
            "flag_threshold": args.flag_threshold,
            "flagged": flagged_json,
        }),
    )?;

    if flagged.is_empty() {
        println!("no cells flagged at weight < {}", args.flag_threshold);
    } else {
        println!("flagged cells (weight < {}):", args.flag_threshold);
        for &(i, j) in &flagged {
            println!(
                "  ({i},{j})  weight {:.2}",
                robust_fit.rob_weights()[cell_index(n, i, j)]
            );
        }
    }

    let config = json!({
        "huber_c": args.huber_c,
        "flag_threshold": args.flag_threshold,
    });
    let mut manifest = RunManifest::new(argv, &args.input, text.as_bytes(), config, 0);
    manifest.timing_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.output)
}
