use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbo_core::bench::make_grid;
use pbo_core::copeland::{condorcet_winner, ExactPreference};
use pbo_core::harness::{run_experiment, write_results, ExperimentConfig, LandmarkMode, OutputFormat};
use pbo_core::{Benchmark, LandmarkSet, PboError, Policy};
use pbo_service::ServerConfig;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "pbo", version, about = "Preferential Bayesian optimization on duels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated experiments on a benchmark with a simulated oracle.
    Run(RunArgs),
    /// Check that the exact-preference Condorcet winner is the grid minimizer.
    OracleCheck {
        /// Benchmark id, or `all`.
        #[arg(long = "function")]
        function: String,
        #[arg(long, default_value_t = 33)]
        grid: usize,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        addr: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of per-session event logs; sessions live in memory
        /// only when omitted.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Built UI assets to serve under /ui/.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long = "function")]
    function: Benchmark,
    #[arg(long)]
    policy: Policy,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long = "init")]
    n_init: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    features: Option<usize>,
    /// Uniform landmark count; the full grid when omitted.
    #[arg(long)]
    landmarks: Option<usize>,
    /// Use the full-scale replicate counts (100 for random, 5 for cei).
    #[arg(long)]
    full_scale: bool,
    /// Record wall-clock milliseconds per iteration. Breaks byte-identical
    /// reruns.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

impl RunArgs {
    fn config(&self) -> ExperimentConfig {
        let mut c = if self.full_scale {
            ExperimentConfig::full_scale(self.function, self.policy)
        } else {
            ExperimentConfig::new(self.function, self.policy)
        };
        c.budget = self.budget.unwrap_or(c.budget);
        c.n_init = self.n_init.unwrap_or(c.n_init);
        c.grid_per_dim = self.grid.unwrap_or(c.grid_per_dim);
        c.replicates = self.replicates.unwrap_or(c.replicates);
        c.seed = self.seed.unwrap_or(c.seed);
        c.features = self.features.unwrap_or(c.features);
        if let Some(count) = self.landmarks {
            c.landmarks = LandmarkMode::Uniform { count };
        }
        c.record_timing = self.timing;
        c.output = self.out.clone();
        c
    }
}

/// A failure with the code printed in the error line.
struct Failure {
    code: &'static str,
    message: String,
}

impl From<PboError> for Failure {
    fn from(e: PboError) -> Self {
        let code = match e {
            PboError::Io(_) | PboError::Csv(_) | PboError::Json(_) => "io_error",
            PboError::InvalidConfig(_) | PboError::InvalidDomain(_) | PboError::GridOverflow { .. } => {
                "invalid_config"
            }
            _ => "run_failed",
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn run(args: RunArgs) -> Result<Value, Failure> {
    let config = args.config();
    let results = run_experiment(&config)?;
    if let Some(path) = &config.output {
        write_results(&results.records, path, args.format)?;
    }
    let Some(last) = results.final_summary() else {
        return Err(Failure {
            code: "run_failed",
            message: format!("all {} replicates failed: {}", config.replicates, results.failures[0]),
        });
    };
    Ok(json!({
        "function": config.function,
        "policy": config.policy,
        "budget": config.budget,
        "replicates": config.replicates,
        "completed": last.replicates,
        "failures": results.failures.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
        "final_median": last.median,
        "final_mean": last.mean,
        "out": config.output,
    }))
}

fn oracle_check(function: &str, grid_per_dim: usize) -> Result<Value, Failure> {
    let benchmarks = if function == "all" {
        Benchmark::ALL.to_vec()
    } else {
        vec![function.parse::<Benchmark>()?]
    };
    let mut report = Vec::new();
    let mut mismatches = Vec::new();
    for b in benchmarks {
        let domain = b.domain(grid_per_dim)?;
        let grid = make_grid(&domain)?;
        let values = grid.iter().map(|x| b.eval(x)).collect::<Result<Vec<_>, _>>()?;
        let argmin = (0..grid.len()).fold(0, |best, i| if values[i] < values[best] { i } else { best });
        let est = condorcet_winner(&ExactPreference(b), &grid, &LandmarkSet::grid(&domain)?)?;
        let pass = est.winner_index == argmin;
        if !pass {
            mismatches.push(b.id());
        }
        report.push(json!({
            "function": b,
            "winner_index": est.winner_index,
            "argmin_index": argmin,
            "winner": est.winner(),
            "g_winner": values[est.winner_index],
            "g_min": values[argmin],
            "pass": pass,
        }));
    }
    if mismatches.is_empty() {
        Ok(json!({ "checks": report }))
    } else {
        Err(Failure {
            code: "oracle_mismatch",
            message: format!("Condorcet winner differs from the grid minimizer on {}", mismatches.join(", ")),
        })
    }
}

fn serve(addr: IpAddr, port: u16, events: Option<PathBuf>, ui_dir: Option<PathBuf>) -> Result<Value, Failure> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: "io_error",
        message: e.to_string(),
    })?;
    let config = ServerConfig {
        addr: SocketAddr::new(addr, port),
        events_dir: events,
        ui_dir,
    };
    runtime.block_on(pbo_service::serve(config)).map_err(|e| Failure {
        code: "serve_failed",
        message: e.to_string(),
    })?;
    Ok(json!({ "stopped": true }))
}

fn error_line(code: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "code": code, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::OracleCheck { function, grid } => oracle_check(&function, grid),
        Command::Serve {
            addr,
            port,
            events,
            ui_dir,
        } => serve(addr, port, events, ui_dir),
    };
    match outcome {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            error_line(f.code, &f.message);
            ExitCode::FAILURE
        }
    }
}
