//! Command-line front end for the experiment harness: one subcommand per
//! study, plus aggregation and a compiled-constants audit.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use augur::harness::{
    aggregate, run_experiment, validate_constants, ExperimentConfig, OracleKind, RunSummary, Study,
};

#[derive(Parser)]
#[command(
    name = "augur",
    about = "Elicit numeric beliefs from an oracle and measure them against reference ambiguity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the single-shot elicitation study.
    Elicit(RunArgs),
    /// Run the ambiguity-alignment study.
    Align(RunArgs),
    /// Run the sequential-evidence study.
    Sequential(RunArgs),
    /// Run the optimization consequence study.
    Bo(RunArgs),
    /// Rebuild the summary CSVs of an existing run directory.
    Report {
        /// Run directory holding records.jsonl.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Audit the compiled default constants against the reference table.
    ValidateConstants,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single replicate seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Oracle backend: synthetic | synthetic_echo | synthetic_gp | scripted | http.
    #[arg(long)]
    oracle: Option<String>,
    /// Bound on concurrently executing cells.
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Continue an interrupted run, skipping completed cells.
    #[arg(long)]
    resume: bool,
}

fn parse_oracle_kind(name: &str) -> Result<OracleKind> {
    Ok(match name {
        // Bare "synthetic" picks the GP sampler, the richer of the two.
        "synthetic" | "synthetic_gp" => OracleKind::SyntheticGp,
        "synthetic_echo" => OracleKind::SyntheticEcho,
        "scripted" => OracleKind::Scripted,
        "http" => OracleKind::Http,
        other => bail!(
            "unknown oracle '{other}' (expected synthetic, synthetic_echo, synthetic_gp, \
             scripted, or http)"
        ),
    })
}

fn resolve_config(study: Study, args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml_path(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default_for(study),
    };
    config.study = study;
    if let Some(name) = &args.oracle {
        config.oracle.kind = parse_oracle_kind(name)?;
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(n) = args.max_concurrency {
        config.oracle.max_concurrency = n;
    }
    let out = match args.out.clone().or_else(|| config.out_dir.clone()) {
        Some(dir) => dir,
        None => bail!("no output directory: pass --out or set out_dir in the config"),
    };
    Ok((config, out))
}

fn print_summary(study: Study, out: &std::path::Path, summary: RunSummary) {
    println!(
        "{}: {} cells ({} run, {} skipped, {} failed) -> {}",
        study.name(),
        summary.cells_total,
        summary.cells_run,
        summary.cells_skipped,
        summary.cells_failed,
        out.display()
    );
    if summary.cells_failed > 0 {
        println!(
            "note: {} cell(s) recorded an error; see records.jsonl",
            summary.cells_failed
        );
    }
}

fn run_study(study: Study, args: &RunArgs) -> Result<()> {
    let (config, out) = resolve_config(study, args)?;
    let summary = run_experiment(&config, &out, args.resume)
        .with_context(|| format!("running the {} study", study.name()))?;
    print_summary(study, &out, summary);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Elicit(args) => run_study(Study::Elicit, &args),
        Command::Align(args) => run_study(Study::Align, &args),
        Command::Sequential(args) => run_study(Study::Sequential, &args),
        Command::Bo(args) => run_study(Study::Bo, &args),
        Command::Report { dir } => {
            let summary =
                aggregate(&dir).with_context(|| format!("aggregating {}", dir.display()))?;
            println!(
                "aggregated {} record(s) over {} condition(s) ({} failed) -> {}",
                summary.records,
                summary.conditions,
                summary.failed,
                dir.display()
            );
            Ok(())
        }
        Command::ValidateConstants => {
            let report = validate_constants().context("compiled constants drifted")?;
            for check in &report.checks {
                println!("[ok] {:<12} {}", check.name, check.detail);
            }
            println!("{} constants verified.", report.checks.len());
            Ok(())
        }
    }
}
