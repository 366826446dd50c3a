//! `versatune` command-line driver.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;

use clap::{Args, Parser, Subcommand};
use commands::{SimulateRequest, StepRequest};
use config::RunConfig;
use error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "versatune",
    version,
    about = "Domain-proportion scheduling for fine-tuning data"
)]
pub struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print the configuration with all defaults resolved, then exit.
    #[arg(long, global = true)]
    pub print_effective_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the knowledge distribution (one input file per iteration).
    Detect(DetectArgs),
    /// Apply one scheduler step to the persisted state.
    Step(StepArgs),
    /// Run the whole schedule over a feedback file.
    Run(RunArgs),
    /// Build the epoch plan and dataset for a manifest.
    Mix(MixArgs),
    /// Compare strategies in the synthetic training world.
    Simulate(SimulateArgs),
    /// Summarize the artifacts in an output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Samples JSONL files, one per iteration.
    #[arg(value_name = "SAMPLES")]
    pub samples: Vec<PathBuf>,
    /// Pre-computed annotation JSONL files, one per iteration.
    #[arg(long, num_args = 1.., value_name = "PATH")]
    pub annotations: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StepArgs {
    /// State file (default: <out>/state.json).
    #[arg(long, value_name = "PATH")]
    pub state: Option<PathBuf>,
    /// Feedback JSONL; its last line is applied.
    #[arg(long, value_name = "PATH")]
    pub feedback: Option<PathBuf>,
    /// One feedback line given inline.
    #[arg(long, value_name = "JSON")]
    pub line: Option<String>,
    /// Detection report used when the state file is absent.
    #[arg(long, value_name = "PATH")]
    pub detection: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Feedback JSONL with one line per step.
    #[arg(long, value_name = "PATH")]
    pub feedback: Option<PathBuf>,
    /// Detection report with the starting distribution.
    #[arg(long, value_name = "PATH")]
    pub detection: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Proportions manifest or detection report.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Overrides the config budget.
    #[arg(long, value_name = "N")]
    pub budget: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// World JSON (default: the built-in six-domain world).
    #[arg(long, value_name = "PATH")]
    pub world: Option<PathBuf>,
    /// Comma-separated strategies, e.g. `versatune,uniform,expansion(medicine)`.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub strategies: Vec<String>,
    /// Scheduler steps per trajectory (default: the config's total_steps).
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
    /// Number of seeds (worlds) to run.
    #[arg(long, value_name = "N")]
    pub seeds: Option<u64>,
    /// Overrides the world's noise scale.
    #[arg(long, value_name = "X")]
    pub noise: Option<f64>,
    /// Also write trajectories.csv.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory to summarize (default: the output directory).
    #[arg(value_name = "DIR")]
    pub dir: Option<PathBuf>,
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    if cli.print_effective_config {
        print!("{}", files::to_pretty(&cfg));
        return Ok(());
    }
    let command = cli
        .command
        .ok_or_else(|| CliError::Usage("a subcommand is required (see --help)".into()))?;
    match command {
        Command::Detect(a) => {
            let r = commands::cmd_detect(&cfg, &a.samples, &a.annotations)?;
            println!(
                "detection: {} iteration(s), max_stddev_pct {:.4}%, written to {}",
                r.per_iteration.len(),
                r.max_stddev_pct,
                cfg.out().join(commands::DETECTION_FILE).display()
            );
        }
        Command::Step(a) => {
            let req = StepRequest {
                state: a.state.as_deref(),
                feedback: a.feedback.as_deref(),
                line: a.line.as_deref(),
                detection: a.detection.as_deref(),
            };
            let s = commands::cmd_step(&cfg, &req)?;
            println!("state at step {}", s.step);
        }
        Command::Run(a) => {
            let s = commands::cmd_run(&cfg, a.feedback.as_deref(), a.detection.as_deref())?;
            println!("schedule completed {} step(s)", s.step);
        }
        Command::Mix(a) => {
            let m = commands::cmd_mix(&cfg, &a.manifest, a.budget)?;
            println!(
                "epoch {}: {} records in {} (plan {})",
                m.step,
                m.lines,
                m.epoch_path.display(),
                m.plan_path.display()
            );
        }
        Command::Simulate(a) => {
            let req = SimulateRequest {
                world: a.world.as_deref(),
                strategies: &a.strategies,
                steps: a.steps,
                seeds: a.seeds,
                noise: a.noise,
                csv: a.csv,
            };
            print!("{}", commands::cmd_simulate(&cfg, &req)?.table);
        }
        Command::Report(a) => print!("{}", commands::cmd_report(&cfg, a.dir.as_deref())?),
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
