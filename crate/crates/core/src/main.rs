use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gsr_core::bench::{
    records_profile, run_benchmark, score_external, write_profile, BenchConfig, Method,
    MethodRunner, Upsampler,
};
use gsr_core::bundle::{read_dataset, write_dataset};
use gsr_core::synth::{gen_dataset, SynthParams};
use gsr_core::Result;

/// Guided super-resolution toolkit and benchmark harness.
#[derive(Parser)]
#[command(name = "gsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or score a benchmark.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Synthetic data generation.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Radial magnitude spectrum of a method's outputs over a dataset.
    Spectrum(SpectrumArgs),
}

#[derive(Subcommand)]
enum BenchAction {
    /// Evaluate the configured methods on the test split.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score external predictions (`<pred>/<id>/`) on the test split.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Value written to the method column.
        #[arg(long, default_value = "external")]
        label: String,
    },
}

#[derive(Subcommand)]
enum SynthAction {
    /// Write `count` synthetic sample bundles.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Patch height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    size: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    alpha: usize,
    #[arg(long, default_value_t = 15)]
    channels: usize,
    /// Make guide channel 0 an exact copy of the target.
    #[arg(long)]
    edge_aligned: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Directory of sample bundles.
    #[arg(long)]
    input: PathBuf,
    /// Upsampling method, or `target` for the ground truth.
    #[arg(long)]
    method: String,
    #[arg(long)]
    out: PathBuf,
    /// Optional benchmark config supplying method parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Bench {
            action: BenchAction::Run { config },
        } => {
            let cfg = BenchConfig::load(&config)?;
            let summary = run_benchmark(&cfg)?;
            println!(
                "{} rows, {} failures; reports in {}",
                summary.rows.len(),
                summary.failures.len(),
                summary.output_dir.display()
            );
            Ok(summary.exit_code() as u8)
        }
        Command::Bench {
            action:
                BenchAction::Score {
                    pred,
                    config,
                    label,
                },
        } => {
            let cfg = BenchConfig::load(&config)?;
            let summary = score_external(&pred, &cfg, &label)?;
            println!(
                "{} scored, {} skipped, {} failures; reports in {}",
                summary.rows.len(),
                summary.skipped.len(),
                summary.failures.len(),
                summary.output_dir.display()
            );
            Ok(summary.exit_code() as u8)
        }
        Command::Synth {
            action: SynthAction::Gen(a),
        } => {
            let mut params = SynthParams {
                seed: a.seed,
                height: a.size[0],
                width: a.size[1],
                alpha: a.alpha,
                guide_channels: a.channels,
                noise_sigma: vec![SynthParams::default().noise_sigma[0]; a.channels],
                ..SynthParams::default()
            };
            if a.edge_aligned {
                params = params.edge_aligned();
            }
            let records = gen_dataset(&params, a.count)?;
            write_dataset(&records, &a.out)?;
            println!("wrote {} samples to {}", records.len(), a.out.display());
            Ok(0)
        }
        Command::Spectrum(a) => {
            let runner = if a.method == "target" {
                None
            } else {
                let method: Method = a.method.parse()?;
                Some(match &a.config {
                    Some(path) => MethodRunner::new(method, &BenchConfig::load(path)?),
                    None => MethodRunner::with_defaults(method),
                })
            };
            let records = read_dataset(&a.input)?;
            let profile = records_profile(&records, runner.as_ref().map(|r| r as &dyn Upsampler))?;
            write_profile(&a.out, &profile)?;
            println!(
                "profile of {} samples written to {}",
                records.len(),
                a.out.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
