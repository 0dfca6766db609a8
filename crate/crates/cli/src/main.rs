use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spinelink_cli::{execute, CliError, Layout, Overrides, RunConfig, ScoreMode, Stage};
use spinelink_proofread::{read_log, AppState, DecisionLog, Session, SessionData, SessionPaths};

#[derive(Parser)]
#[command(name = "spinelink", version, about = "Link detached dendritic spines to their parent shafts")]
struct Cli {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory (default: $SPINELINK_DATA_DIR, then ./spinelink-data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Phantom seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fraction of spines to detach.
    #[arg(long, global = true)]
    fraction: Option<f64>,
    #[arg(long, global = true)]
    fragment_seed: Option<u64>,
    #[arg(long, global = true)]
    train_seed: Option<u64>,
    #[arg(long, global = true)]
    n_trees: Option<usize>,
    #[arg(long, global = true, value_enum)]
    score_mode: Option<Mode>,
    /// Comma-separated K values for the Top-K table.
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Monte Carlo iterations per fraction.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    simulate_seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cv,
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled volume with its manifest and truth.
    Generate,
    /// Detach a fraction of spines from the phantom.
    Fragment,
    /// Candidate shafts and feature table for every orphan spine.
    Features,
    /// Fit the forest on all labeled candidates.
    Train,
    /// Probability per candidate, cross-validated or from the trained model.
    Score,
    /// Spanning-forest assignment and ranked candidates.
    Link,
    /// Top-K and graph f1 report.
    Evaluate,
    /// Fragmentation Monte Carlo curve.
    Simulate,
    /// Every stage in order.
    All {
        /// Skip stages whose inputs, outputs and config are unchanged.
        #[arg(long)]
        resume: bool,
    },
    /// Proofreading HTTP service over the linked data.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Decision log (default: decisions.ndjson in the data directory).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Allowed CORS origin; any origin when absent.
        #[arg(long)]
        origin: Option<String>,
    },
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        data_dir: cli.data_dir.clone(),
        seed: cli.seed,
        fraction: cli.fraction,
        fragment_seed: cli.fragment_seed,
        train_seed: cli.train_seed,
        n_trees: cli.n_trees,
        score_mode: cli.score_mode.map(|m| match m {
            Mode::Cv => ScoreMode::Cv,
            Mode::Model => ScoreMode::Model,
        }),
        ks: cli.ks.clone(),
        iterations: cli.iterations,
        simulate_seed: cli.simulate_seed,
        threads: cli.threads,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn serve(cfg: &RunConfig, addr: SocketAddr, log: Option<PathBuf>, origin: Option<String>) -> Result<(), CliError> {
    let layout = Layout::new(cfg.resolve_data_dir());
    let frag = layout.fragmented();
    let paths = SessionPaths {
        volume: frag.volume,
        manifest: frag.manifest,
        trees: layout.trees(),
        truth: frag.truth.exists().then_some(frag.truth),
    };
    for p in [&paths.volume, &paths.manifest, &paths.trees] {
        if !p.exists() {
            return Err(CliError::data("serve", format!("missing input {}", p.display())));
        }
    }
    let data = SessionData::load(&paths).map_err(|e| CliError::data("serve", e))?;
    let log_path = log.unwrap_or_else(|| layout.decision_log());
    let records = read_log(&log_path).map_err(|e| CliError::data("serve", e))?;
    let session = Session::replay(data, &records).map_err(|e| CliError::data("serve", e))?;
    log::info!("replayed {} decisions from {}", records.len(), log_path.display());
    let writer = DecisionLog::open(&log_path).map_err(|e| CliError::stage("serve", e))?;
    let state = AppState::new(session, Some(writer));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::stage("serve", e))?;
    log::info!("listening on http://{addr}");
    rt.block_on(spinelink_proofread::serve(addr, state, origin.as_deref()))
        .map_err(|e| CliError::stage("serve", e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let stage = match cli.command {
        Command::Generate => Stage::Generate,
        Command::Fragment => Stage::Fragment,
        Command::Features => Stage::Features,
        Command::Train => Stage::Train,
        Command::Score => Stage::Score,
        Command::Link => Stage::Link,
        Command::Evaluate => Stage::Evaluate,
        Command::Simulate => Stage::Simulate,
        Command::All { resume } => {
            let m = execute(&spinelink_cli::PIPELINE, &cfg, resume)?;
            for s in &m.stages {
                log::info!("{}: {} ms{}", s.name, s.wall_ms, if s.resumed { " (resumed)" } else { "" });
            }
            return Ok(());
        }
        Command::Serve { addr, log, origin } => return serve(&cfg, addr, log, origin),
    };
    execute(&[stage], &cfg, false).map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
