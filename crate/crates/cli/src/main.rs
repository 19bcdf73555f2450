use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmn_cli::pipeline::{run_backtest, run_ingest, run_report, run_synth};
use dmn_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "dmn", version, about = "Deep momentum network backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a price file and write features, returns and volatilities.
    Ingest(Overrides),
    /// Generate a synthetic price dataset.
    Synth(Overrides),
    /// Run a strategy and write its reports.
    Backtest(Overrides),
    /// Print the performance tables of one or more backtest directories.
    Report {
        /// Backtest output directories.
        dirs: Vec<PathBuf>,
        /// Directory to report on when none are listed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(flags) => {
            let cfg = RunConfig::resolve(&flags)?;
            let s = run_ingest(&cfg)?;
            println!(
                "ingested {} assets from {} to {}, {} rows dropped; outputs in {}",
                s.n_assets,
                s.first_date.map(|d| d.to_string()).unwrap_or_default(),
                s.last_date.map(|d| d.to_string()).unwrap_or_default(),
                s.dropped_rows,
                cfg.out.display()
            );
        }
        Command::Synth(flags) => {
            let cfg = RunConfig::resolve(&flags)?;
            let path = run_synth(&cfg)?;
            println!(
                "wrote {} assets x {} days to {}",
                cfg.synth.n_assets,
                cfg.synth.n_days,
                path.display()
            );
        }
        Command::Backtest(flags) => {
            let cfg = RunConfig::resolve(&flags)?;
            let outcome = run_backtest(&cfg)?;
            let e = &outcome.evaluation;
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
            println!(
                "{}: sharpe {} (rescaled {}), mean turnover {:.4}, sharpe net of {} bps {}; reports in {}",
                e.label,
                fmt(e.perf_raw.sharpe),
                fmt(e.perf_rescaled.sharpe),
                e.mean_turnover,
                cfg.cost_bps,
                fmt(e.net_sharpe),
                cfg.out.display()
            );
        }
        Command::Report { mut dirs, out } => {
            if dirs.is_empty() {
                dirs.push(out.unwrap_or_else(|| PathBuf::from("out")));
            }
            print!("{}", run_report(&dirs)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.code() as u8)
        }
    }
}
