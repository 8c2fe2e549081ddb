use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use assetgraph::config::PipelineConfig;
use assetgraph::pipeline::{self, PipelineError, Stage};
use assetgraph::synth::{generate_market, write_market, SynthConfig};

#[derive(Parser)]
#[command(name = "assetgraph", version, about = "Asset trees and grouping coefficients from daily closes")]
struct Cli {
    /// Worker threads; overrides the config file and ASSETGRAPH_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full raw and modified pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic market as CSV files.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate alpha only and write alpha_calibration.json.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_TOLERANCE_UNMET: u8 = 4;

fn fail(err: PipelineError) -> ExitCode {
    eprintln!("{}", err.report());
    ExitCode::from(err.exit_code() as u8)
}

fn load_config(path: &Path, threads: Option<usize>) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::load(path).map_err(|error| PipelineError {
        stage: Stage::Config,
        error,
    })?;
    if threads.is_some() {
        cfg.parallelism = threads;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match load_config(&config, cli.threads) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match pipeline::run_pipeline(&cfg) {
                Ok(summary) => {
                    println!(
                        "wrote {} files for {} windows to {} (alpha {} [{}])",
                        summary.files.len(),
                        summary.n_windows,
                        summary.output.display(),
                        summary.alpha.alpha,
                        summary.alpha.flag
                    );
                    if summary.alpha.tolerance_unmet() {
                        ExitCode::from(EXIT_TOLERANCE_UNMET)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Calibrate { config } => {
            let cfg = match load_config(&config, cli.threads) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match pipeline::run_calibration(&cfg) {
                Ok(report) => {
                    print!("{}", String::from_utf8_lossy(&pipeline::alpha_json(&report)));
                    if report.tolerance_unmet() {
                        ExitCode::from(EXIT_TOLERANCE_UNMET)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Synth { config, out } => {
            let result = SynthConfig::load(&config)
                .map_err(|error| PipelineError {
                    stage: Stage::Config,
                    error,
                })
                .and_then(|cfg| {
                    let market = generate_market(&cfg).map_err(|error| PipelineError {
                        stage: Stage::Ingest,
                        error,
                    })?;
                    write_market(&market, &out).map_err(|error| PipelineError {
                        stage: Stage::Emit,
                        error,
                    })
                });
            match result {
                Ok(()) => {
                    println!("wrote prices.csv, categories.csv and external.csv to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
