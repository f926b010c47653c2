mod commands;
mod config;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "nlmpm", version, about = "Monotonicity imaging of nonlinear inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML), or a results JSON to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve the forward problem for every excitation.
    Forward,
    /// Monotonicity reconstructions of the configured phantom.
    Reconstruct,
    /// Deterministic reconstructions along a decreasing noise sequence.
    Sweep,
    /// Run the property and oracle battery.
    Verify,
    /// Localization table of a depleting sequence.
    DepletingDemo,
}

pub enum Failure {
    Config(Vec<String>),
    Runtime(String),
    Verification(String),
}

impl From<nlmpm::Error> for Failure {
    fn from(e: nlmpm::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config(vec!["--config is required".into()]))?;
    let mut cfg = config::load(path).map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        if let Some(n) = cfg.noise.as_mut() {
            n.seed = seed;
        }
        cfg.verify.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let setup = cfg.setup().map_err(Failure::Config)?;
    std::fs::create_dir_all(&out)?;
    match cli.command {
        Command::Forward => commands::forward(&cfg, &setup, &out),
        Command::Reconstruct => commands::reconstruct(&cfg, &setup, &out),
        Command::Sweep => commands::sweep(&cfg, &setup, &out),
        Command::Verify => verify::run(&cfg, &setup, &out),
        Command::DepletingDemo => commands::depleting_demo(&cfg, &setup, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(errors)) => {
            eprintln!("invalid configuration ({} problem{}):", errors.len(), if errors.len() == 1 { "" } else { "s" });
            for e in &errors {
                eprintln!("  - {e}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(e)) => {
            eprintln!("verification failed: {e}");
            ExitCode::from(3)
        }
    }
}
