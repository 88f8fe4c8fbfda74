mod instance;
mod plan;
mod session;
mod simulate;
mod tableau;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oddstop_core::Execution;

use crate::instance::Instance;

/// Stopping on the last success: plans, simulations and live sessions.
#[derive(Debug, Parser)]
#[command(name = "oddstop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the stopping plan and tableau for an instance.
    Plan(PlanArgs),
    /// Monte Carlo evaluation of the stopping rule for an instance.
    Simulate(SimulateArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Rebuild a session from its event log and print its state.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct Source {
    /// Instance file (JSON, schema 1).
    #[arg(long, conflicts_with = "probs")]
    instance: Option<PathBuf>,
    /// Known success probabilities in treatment order, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    probs: Option<Vec<f64>>,
}

impl Source {
    fn load(&self) -> anyhow::Result<Instance> {
        match (&self.instance, &self.probs) {
            (Some(path), _) => Instance::load(path),
            (None, Some(probs)) => Instance::from_probs(probs.clone()),
            (None, None) => anyhow::bail!("give --instance FILE or --probs P1,P2,..."),
        }
    }
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    source: Source,
    /// Search treatment orders for the highest win probability.
    #[arg(long)]
    best_order: bool,
    /// Largest queue searched exhaustively by --best-order.
    #[arg(long, default_value_t = oddstop_core::odds::DEFAULT_EXHAUSTIVE_LIMIT)]
    max_exhaustive: usize,
    /// Threshold on the estimated chance of a further success (adaptive).
    #[arg(long)]
    alpha: Option<f64>,
    /// Emit JSON instead of the tableau.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExecutionArg {
    Serial,
    Parallel,
}

impl From<ExecutionArg> for Execution {
    fn from(e: ExecutionArg) -> Self {
        match e {
            ExecutionArg::Serial => Execution::Serial,
            ExecutionArg::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    /// Base seed; every replication draws from its own stream of it.
    #[arg(long)]
    seed: u64,
    /// Number of replications.
    #[arg(long, default_value_t = 100_000)]
    reps: u64,
    /// Simulate the best treatment order instead of the given one.
    #[arg(long)]
    best_order: bool,
    /// True internal success probability (adaptive and horizon).
    #[arg(long)]
    true_p: Option<f64>,
    /// Queue lengths for an adaptive sweep at the instance's common h.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sweep: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "parallel")]
    execution: ExecutionArg,
    /// Emit JSON.
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Address to listen on.
    #[arg(long, env = "ODDSTOP_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    /// Directory holding one event log per session.
    #[arg(long, env = "ODDSTOP_DATA_DIR", default_value = "oddstop-data")]
    data_dir: PathBuf,
    /// Require `Authorization: Bearer <token>` on /v1 routes.
    #[arg(long, env = "ODDSTOP_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Event log file (`<id>.jsonl`).
    #[arg(required_unless_present = "session")]
    log: Option<PathBuf>,
    /// Session id, looked up in --data-dir.
    #[arg(long, requires = "data_dir", conflicts_with = "log")]
    session: Option<String>,
    #[arg(long, env = "ODDSTOP_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Emit the session's canonical JSON state.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(args) => plan::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Serve(args) => session::serve(&args),
        Command::Replay(args) => session::replay(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
