use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use union_core::econ::{render_deposit_csv, render_deposit_table, reproduce_deposit_table};
use union_core::harness::{run_scenario, sweep, Grid, RunReport, Scenario};
use union_core::protocol::log::EventLog;

/// Environment variable holding the log filter (e.g. `debug`).
const LOG_ENV: &str = "UNION_SIM_LOG";

#[derive(Parser)]
#[command(name = "union-sim", version, about = "Bridge protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and check every invariant on its log.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event log here as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate deposit and timing formulas over a parameter grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Required security deposit per functionary count and fee rate.
    DepositTable {
        /// Fee rates in sats/vB.
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [5, 10, 20, 30])]
        fee_rates: Vec<u64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [10, 25, 50, 100])]
        functionaries: Vec<u64>,
    },
    /// Re-check the invariants of a recorded event log.
    Check { log: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every invariant held.
fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run { scenario, seed, log } => {
            let text = read(&scenario)?;
            let mut s = Scenario::parse(&text).with_context(|| format!("parsing {}", scenario.display()))?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let (report, events) = run_scenario(&s)?;
            if let Some(path) = log {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                events.write_jsonl(file).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", report.render());
            Ok(report.passed())
        }
        Command::Sweep { grid } => {
            let g = Grid::parse(&read(&grid)?).with_context(|| format!("parsing {}", grid.display()))?;
            print!("{}", sweep(&g).render());
            Ok(true)
        }
        Command::DepositTable {
            fee_rates,
            functionaries,
        } => {
            if fee_rates.contains(&0) || functionaries.contains(&0) {
                return Err(anyhow!("fee rates and functionary counts must be positive"));
            }
            let rows = reproduce_deposit_table(&fee_rates, &functionaries);
            print!("{}\n{}", render_deposit_table(&rows), render_deposit_csv(&rows));
            Ok(true)
        }
        Command::Check { log } => {
            let file = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let events = EventLog::read_jsonl(BufReader::new(file))
                .map_err(|(line, msg)| anyhow!("{}:{line}: {msg}", log.display()))?;
            let name = log.file_stem().map_or("log".into(), |s| s.to_string_lossy());
            let report = RunReport::from_log(&name, events.events());
            print!("{}", report.render());
            Ok(report.passed())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
