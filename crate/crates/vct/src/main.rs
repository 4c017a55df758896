use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vct::commands::{self, ConfigSource, EvalOptions, PlotOptions, SampleOptions, TrainOptions};
use vct::CliError;

#[derive(Parser)]
#[command(name = "vct", version, about = "Variational consistency training on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model into RUN_DIR, or continue one with --resume.
    Train {
        run_dir: PathBuf,
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Overrides `training.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: bool,
        /// Stop after this many iterations without a final checkpoint.
        #[arg(long, value_name = "N")]
        halt_after: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Draw samples from the latest checkpoint.
    Sample {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 2048)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Add fresh data points to the scatter plot.
        #[arg(long)]
        overlay_data: bool,
    },
    /// Evaluate the latest checkpoint; --compare adds a delta table (this - other).
    Eval {
        run_dir: PathBuf,
        /// Number of generated and reference samples.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "OTHER_RUN_DIR")]
        compare: Option<PathBuf>,
    },
    /// Render variance, loss and coupling plots.
    Plot {
        run_dir: PathBuf,
        /// Points in the coupling scatter.
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a shipped preset as TOML.
    Preset { name: String },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { run_dir, config, preset, seed, resume, halt_after, quiet } => {
            let source = match (config, preset) {
                (Some(p), _) => Some(ConfigSource::File(p)),
                (None, Some(n)) => Some(ConfigSource::Preset(n)),
                (None, None) => None,
            };
            let s = commands::train(&TrainOptions {
                run_dir,
                source,
                seed,
                resume,
                halt_after,
                progress: !quiet,
            })?;
            println!(
                "iterations={} finished={} skipped_steps={}",
                s.iterations_done, s.finished, s.skipped_steps
            );
        }
        Command::Sample { run_dir, steps, count, seed, overlay_data } => {
            let path = commands::sample(&SampleOptions { run_dir, steps, count, seed, overlay_data })?;
            println!("{}", path.display());
        }
        Command::Eval { run_dir, count, seed, compare } => {
            let out = commands::eval(&EvalOptions { run_dir, count, seed, compare })?;
            for (k, v) in commands::report_fields(&out.report) {
                println!("{k}={v}");
            }
            for (k, _, _, d) in out.deltas.iter().flatten() {
                println!("delta_{k}={d}");
            }
        }
        Command::Plot { run_dir, count, seed } => {
            for p in commands::plot(&PlotOptions { run_dir, count, seed })? {
                println!("{}", p.display());
            }
        }
        Command::Preset { name } => print!("{}", commands::preset_text(&name)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Argument(first.to_string()).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
