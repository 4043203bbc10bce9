use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fleet_noise::harness::sweep::{collect_summaries, report_table, sweep, Axis};
use fleet_noise::harness::{emit, run_repeated, RunConfig};
use fleet_noise::Result;

#[derive(Parser)]
#[command(version, about = "Cooperative fleet fusion with edge-side noise estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv, summary.json and bandwidth.csv.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Paper-scale fleet (100 CAVs, 100 normal vehicles).
        #[arg(long)]
        full: bool,
        /// Average the metric series over this many consecutive seeds.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Run every combination of the varied parameters, one subdirectory each.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `name=v1,v2,...`; repeat for more axes.
        #[arg(long = "vary", required = true)]
        vary: Vec<Axis>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Print the improvement-rate table of a run or sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load(config: Option<&PathBuf>, full: bool) -> Result<RunConfig> {
    let cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(if full { cfg.full_scale() } else { cfg })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed, full, repeats } => {
            let mut cfg = load(config.as_ref(), full)?;
            if let Some(seed) = seed {
                cfg.world.seed = seed;
            }
            let run = run_repeated(&cfg, repeats)?;
            emit(&run.series, &run.summary, &run.ledger, run.trace.as_deref(), &out)?;
            print!("{}", report_table(&[(out, run.summary)]));
        }
        Command::Sweep { config, vary, out, full, repeats } => {
            let cfg = load(config.as_ref(), full)?;
            sweep(&cfg, &vary, repeats, &out)?;
            print!("{}", report_table(&collect_summaries(&out)?));
        }
        Command::Report { input } => {
            let rows = collect_summaries(&input)?;
            print!("{}", report_table(&rows));
            let json: Vec<_> = rows.iter().map(|(_, s)| &s.improvement).collect();
            println!("{}", serde_json::to_string_pretty(&json).expect("summaries serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
