//! Command-line front end: train models, compare inference methods, run the
//! gradient-check suite, and merge report files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use spen_core::harness::{
    gradient_suite, merge_reports, run_compare, run_train, write_merged_csv, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "spen", version, about = "Energy-based structured prediction with inference networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured training pipeline; writes checkpoints, the
    /// training log and a report.
    Train(ConfigArgs),
    /// Evaluate inference methods against a trained checkpoint.
    Compare {
        #[command(flatten)]
        common: ConfigArgs,
        /// Parameter checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tune gradient-descent inference per instance against the labels
        /// (evaluation-only; rows are flagged).
        #[arg(long)]
        oracle_gd: Option<bool>,
    },
    /// Run gradient checks over every energy variant and loss.
    Gradcheck {
        /// Maximum relative error tolerated.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Merge run reports into one table (JSON + CSV).
    Report {
        /// Report files (single-run or previously merged).
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Output path stem; writes <out>.json and <out>.csv.
        #[arg(long, default_value = "runs/merged")]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.set("seed", seed.to_string());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let artifacts = run_train(&cfg, &args.out)?;
            println!(
                "checkpoint: {}\nreport: {}",
                artifacts.checkpoint.display(),
                args.out.join("report.json").display()
            );
            for row in &artifacts.report.methods {
                println!(
                    "{}: dev metric {}",
                    row.method,
                    row.metric.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into())
                );
            }
            if artifacts.aborted {
                eprintln!("training aborted on a non-finite loss; partial report written");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { common, checkpoint, oracle_gd } => {
            let cfg = load_config(&common)?;
            let report = run_compare(&cfg, &checkpoint, oracle_gd)?;
            std::fs::create_dir_all(&common.out)?;
            let json_path = common.out.join("compare.json");
            report.save(&json_path)?;
            let csv = report.to_csv();
            std::fs::write(common.out.join("compare.csv"), &csv)?;
            print!("{csv}");
            println!("written: {}", json_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { tol } => {
            let rows = gradient_suite()?;
            let mut failed = 0;
            for row in &rows {
                let ok = row.max_rel_err < tol;
                if !ok {
                    failed += 1;
                }
                println!(
                    "{} {:<28} max relative error {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    row.name,
                    row.max_rel_err
                );
            }
            println!("{} checks, {} failed, tolerance {tol:.1e}", rows.len(), failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report { reports, out } => {
            let merged = merge_reports(&reports)?;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let json_path = out.with_extension("json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&merged)?)?;
            let csv = write_merged_csv(&merged);
            let csv_path = out.with_extension("csv");
            std::fs::write(&csv_path, &csv)?;
            print!("{csv}");
            println!("written: {} and {}", json_path.display(), csv_path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
