use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use psn::agents::{train_expert, AgentError, ExpertBudget};
use psn::assist::{AssistanceLevel, Strategy};
use psn::env::{EnvConfig, EnvKind};
use psn::harness::{format_summary, parse_seeds, run_experiment, summarize_dir, ExperimentConfig};
use psn::zpd::{heatmap_grid, AxisSpec, ZpdCheckpoint};

#[derive(Parser)]
#[command(name = "psn", version, about = "Learning-aware shared autonomy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and save a frozen expert (value iteration on GridTrack, double DQN on MiniLander).
    TrainExpert(TrainExpertArgs),
    /// Run an experiment from a config file.
    Run(RunArgs),
    /// Summarize every records.csv below a directory.
    Summarize {
        dir: PathBuf,
    },
    /// Export a learnability grid over two state dimensions as CSV.
    Heatmap(HeatmapArgs),
    /// Start the real-time session service.
    Serve(ServeArgs),
}

/// Either a built-in environment name or an environment config file.
fn env_config(kind: Option<EnvKind>, file: Option<&Path>) -> Result<EnvConfig, String> {
    match (kind, file) {
        (_, Some(path)) => EnvConfig::load(path).map_err(|e| e.to_string()),
        (Some(kind), None) => Ok(EnvConfig::default_for(kind)),
        (None, None) => Err("give --env or --env-config".into()),
    }
}

#[derive(Args)]
struct TrainExpertArgs {
    #[arg(long, value_parser = parse_env_kind)]
    env: Option<EnvKind>,
    #[arg(long)]
    env_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_episodes: Option<usize>,
    /// Mean greedy return the expert must exceed.
    #[arg(long)]
    bar: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Inclusive range `0..9` or a list `1,4,7`.
    #[arg(long)]
    seeds: Option<String>,
    /// One strategy or a comma-separated list, each run in turn.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    expert: Option<PathBuf>,
    /// Leave the wallclock column empty (byte-comparable output).
    #[arg(long)]
    no_wallclock: bool,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Two state dimension names, e.g. `x,y`.
    #[arg(long, default_value = "x,y")]
    axes: String,
    #[arg(long, default_value_t = 24)]
    resolution: usize,
    /// Environment config for axis ranges; defaults for the checkpoint's environment.
    #[arg(long)]
    env_config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    addr: SocketAddr,
    /// Frames buffered per client before the oldest are dropped.
    #[arg(long, default_value_t = 16)]
    frame_buffer: usize,
}

fn parse_env_kind(s: &str) -> Result<EnvKind, String> {
    s.parse::<EnvKind>().map_err(|e| e.to_string())
}

fn train(args: TrainExpertArgs) -> Result<(), String> {
    let env = env_config(args.env, args.env_config.as_deref())?;
    let mut budget = ExpertBudget::default();
    if let Some(seed) = args.seed {
        budget.seed = seed;
    }
    if let Some(n) = args.max_episodes {
        budget.max_episodes = n;
    }
    if let Some(bar) = args.bar {
        budget.bar = bar;
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    match train_expert(&env, &budget, &args.out) {
        Ok(report) => {
            println!(
                "expert saved to {} after {} episodes, mean greedy return {:.1}",
                report.checkpoint.display(),
                report.episodes,
                report.best_mean_return
            );
            Ok(())
        }
        Err(e @ AgentError::BelowBar { .. }) => Err(format!("expert training missed the bar: {e}")),
        Err(e) => Err(e.to_string()),
    }
}

fn run(args: RunArgs) -> Result<(), String> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s).map_err(|e| e.to_string())?;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = AssistanceLevel::new(a).map_err(|e| e.to_string())?;
    }
    if let Some(n) = args.episodes {
        cfg.total_episodes = n;
    }
    if let Some(n) = args.eval_interval {
        cfg.eval_interval = n;
    }
    if let Some(o) = args.output {
        cfg.output = o;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(e) = args.expert {
        cfg.expert_checkpoint = Some(e);
    }
    if args.no_wallclock {
        cfg.record_wallclock = false;
    }
    let strategies: Vec<Strategy> = match &args.strategy {
        Some(list) => list.split(',').map(|s| s.trim().parse::<Strategy>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?,
        None => vec![cfg.strategy],
    };
    let mut failed = Vec::new();
    for strategy in strategies {
        cfg.strategy = strategy;
        cfg.validate().map_err(|e| e.to_string())?;
        info!("running {strategy} over {} seeds into {}", cfg.seeds.len(), cfg.output.display());
        let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
        for (seed, msg) in &outcome.failures {
            error!("{strategy} seed {seed} aborted: {msg}");
            failed.push(format!("{strategy}/{seed}"));
        }
    }
    let rows = summarize_dir(&cfg.output).map_err(|e| e.to_string())?;
    print!("{}", format_summary(&rows));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("seeds aborted: {}", failed.join(", ")))
    }
}

fn heatmap(args: HeatmapArgs) -> Result<(), String> {
    let ck = ZpdCheckpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let env = match &args.env_config {
        Some(p) => EnvConfig::load(p).map_err(|e| e.to_string())?,
        None => EnvConfig::default_for(ck.env),
    };
    if env.kind() != ck.env {
        return Err(format!("checkpoint is for {}, env config is {}", ck.env.as_str(), env.kind().as_str()));
    }
    let (i, j) = args.axes.split_once(',').ok_or_else(|| format!("--axes wants two names like x,y, got `{}`", args.axes))?;
    let axes = AxisSpec::for_config(&env, (i.trim(), j.trim()), args.resolution).map_err(|e| e.to_string())?;
    let phi = ck.learnability().map_err(|e| e.to_string())?;
    let state_dim = axes.base.dim();
    let grid = heatmap_grid(phi.as_ref(), state_dim, &axes).map_err(|e| e.to_string())?;
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            grid.write_csv(file).map_err(|e| e.to_string())?;
            println!("{} cells written to {}", grid.len(), path.display());
        }
        None => grid.write_csv(std::io::stdout().lock()).map_err(|e| e.to_string())?,
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), String> {
    let opts = psn_server::ServerOptions { frame_buffer: args.frame_buffer };
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(psn_server::serve(args.addr, opts)).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainExpert(a) => train(a),
        Command::Run(a) => run(a),
        Command::Summarize { dir } => summarize_dir(&dir).map(|rows| print!("{}", format_summary(&rows))).map_err(|e| e.to_string()),
        Command::Heatmap(a) => heatmap(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
