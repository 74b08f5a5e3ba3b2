use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gspnet::cli::{
    cmd_compare, cmd_drift_check, cmd_simulate, cmd_stability, cmd_train, RunConfig,
};
use gspnet::error::Result;

#[derive(Parser)]
#[command(
    name = "gspnet",
    version,
    about = "Generalized shortest-path routing for the bridge queuing network",
    after_help = "Results print to stdout; CSV/JSON files land in --out (or [output].dir)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides [sim].seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for result files; overrides [output].dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stdout rendering.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, self.seed, self.out.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Report cuts, min-cut capacity, m, delta_G and the feasible region.
    Stability(Common),
    /// Run the configured policy once; write job records and a summary.
    Simulate(Common),
    /// Learn (beta, gamma) by policy iteration; write the training history.
    Train(Common),
    /// Compare GSP, SSP and OB by normalized average system time.
    Compare {
        #[command(flatten)]
        common: Common,
        /// External baseline mean system time in seconds (e.g. a reference
        /// policy measured elsewhere). Defaults to the best observed mean.
        #[arg(long)]
        baseline_mean: Option<f64>,
    },
    /// Sample the Lyapunov drift and fit a negativity certificate.
    DriftCheck(Common),
}

fn emit<T: serde::Serialize>(format: Format, value: &T, text: String, csv: Option<String>) {
    match format {
        Format::Table => print!("{text}"),
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(value).expect("report serializes")
        ),
        Format::Csv => match csv {
            Some(body) => print!("{body}"),
            None => print!("{text}"),
        },
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Stability(common) => {
            let report = cmd_stability(&common.load()?)?;
            emit(common.format, &report, report.render_text(), None);
        }
        Command::Simulate(common) => {
            let summary = cmd_simulate(&common.load()?)?;
            emit(common.format, &summary, summary.render_text(), None);
        }
        Command::Train(common) => {
            let report = cmd_train(&common.load()?)?;
            emit(common.format, &report, report.render_text(), None);
        }
        Command::Compare { common, baseline_mean } => {
            let table = cmd_compare(&common.load()?, baseline_mean)?;
            emit(
                common.format,
                &table,
                table.render_text(),
                Some(table.render_csv()),
            );
        }
        Command::DriftCheck(common) => {
            let report = cmd_drift_check(&common.load()?)?;
            emit(common.format, &report, report.render_text(), None);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
