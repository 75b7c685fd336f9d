use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};

use marginflow::data;
use marginflow::runner::{self, ExperimentConfig, ExperimentReport};
use marginflow::verify::{self, SUITES};

#[derive(Parser)]
#[command(name = "marginflow", version, about = "Steepest-descent optimizers and implicit-bias diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (variant, seed) of a config sequentially.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run all plans in parallel and write per-norm margin aggregates.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a property suite and print a JSON report; `all` runs every suite.
    Verify {
        #[arg(value_parser = suite_parser())]
        suite: String,
    },
    /// Parse an IDX image/label pair and write a balanced even/odd subset cache.
    ParseMnist {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2048)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn suite_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(SUITES.iter().copied().chain(["all"]))
}

fn print_report(report: &ExperimentReport) {
    for r in &report.runs {
        let margins: Vec<String> = r.final_margins.iter().map(|m| format!("{}={:.6}", m.norm, m.values.hard_margin)).collect();
        println!(
            "{} {} seed={} steps={} stop={:?} loss={:.3e} {}",
            r.experiment,
            r.variant,
            r.seed,
            r.steps,
            r.stop,
            r.final_loss,
            margins.join(" ")
        );
        for w in &r.warnings {
            log::warn!("{} {} seed {}: {w}", r.experiment, r.variant, r.seed);
        }
    }
}

fn experiment(config: PathBuf, parallel: bool) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    let report = if parallel { runner::sweep(&cfg)? } else { runner::run(&cfg)? };
    print_report(&report);
    println!("summary: {}", cfg.effective_output_dir().join(format!("{}_summary.json", cfg.name())).display());
    Ok(if report.all_finished() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_verify(suite: &str) -> Result<ExitCode> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut reports = Vec::new();
    for name in names {
        let report = verify::run_suite(name)?;
        log::info!("{name}: {}", if report.passed { "pass" } else { "FAIL" });
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.passed);
    let out = if reports.len() == 1 { serde_json::to_string_pretty(&reports[0])? } else { serde_json::to_string_pretty(&reports)? };
    println!("{out}");
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn parse_mnist(images: PathBuf, labels: PathBuf, out: PathBuf, m: usize, seed: u64) -> Result<ExitCode> {
    let raw = data::parse_idx(&images, &labels)?;
    let subset = data::even_odd_subset(&raw, m, seed)?;
    data::save_cache(&subset, &out)?;
    println!("parsed {} images of {}x{}; wrote {} samples to {}", raw.len(), raw.rows, raw.cols, subset.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => experiment(config, false),
        Command::Sweep { config } => experiment(config, true),
        Command::Verify { suite } => run_verify(&suite),
        Command::ParseMnist { images, labels, out, m, seed } => parse_mnist(images, labels, out, m, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
