use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparse_ard::sparsifiers::Method;
use sparse_ard_cli::config::{self, sweep};
use sparse_ard_cli::table::{format_table, rate_table};
use sparse_ard_cli::{emit_results, run_experiment};

const EXIT_CONFIG: u8 = 2;
const EXIT_TRIAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "sparse-ard", version, about = "Sparse ARD experiments and analytic rate tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Also write wall-clock times to timings.csv.
        #[arg(long)]
        timings: bool,
    },
    /// Print predicted false-positive/false-negative rates for an orthogonal design.
    Rates {
        method: String,
        /// Parameter sweep `low:high:count`.
        #[arg(long)]
        param_grid: String,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        xi: f64,
        /// Space the sweep logarithmically.
        #[arg(long)]
        log: bool,
    },
}

fn parse_grid(s: &str, log: bool) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(format!("expected low:high:count, got `{s}`"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad low `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad high `{hi}`"))?;
    let n: usize = n.parse().map_err(|_| format!("bad count `{n}`"))?;
    if n == 0 {
        return Err("count must be at least 1".into());
    }
    if log && !(lo > 0.0 && hi > 0.0) {
        return Err("log sweep bounds must be positive".into());
    }
    Ok(sweep(lo, hi, n, log))
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, seed, trials, jobs, timings } => {
            let mut plan = match config::load(&config) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("config error in {}: {e}", config.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                plan.seed = s;
            }
            if let Some(t) = trials {
                if t == 0 {
                    eprintln!("config error: --trials must be at least 1");
                    return ExitCode::from(EXIT_CONFIG);
                }
                plan.trials = t;
            }
            let bundle = run_experiment(&plan, jobs);
            if let Err(e) = emit_results(&bundle, &out, timings) {
                eprintln!("cannot write results to {}: {e}", out.display());
                return ExitCode::FAILURE;
            }
            let failed = bundle.failures();
            if failed > 0 {
                eprintln!("{failed} of {} records failed", bundle.records.len());
                return ExitCode::from(EXIT_TRIAL_FAILURE);
            }
            ExitCode::SUCCESS
        }
        Command::Rates { method, param_grid, rho, sigma, xi, log } => {
            let method: Method = match method.parse() {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let grid = match parse_grid(&param_grid, log) {
                Ok(g) => g,
                Err(e) => {
                    eprintln!("--param-grid: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match rate_table(method, &grid, rho, sigma, xi) {
                Ok(rows) => {
                    print!("{}", format_table(&rows));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
    }
}
