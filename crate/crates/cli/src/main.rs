use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iroco_cli::commands::{self, exit_code};
use iroco_cli::config::{resolve, Overrides, Preset, Resolved, Source};
use iroco_core::Result;

/// Synthetic data, filter training, evaluation, and live teleoperation.
#[derive(Parser, Debug)]
#[command(name = "iroco", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML file with [motion], [noise], [train], [workspace], [body], and [data] tables
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed for data generation, training, and filtering
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Timesteps per optimizer update
    #[arg(long, global = true)]
    batch: Option<usize>,
    /// Adam learning rate
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Ensemble members
    #[arg(long, global = true)]
    ensemble: Option<usize>,
    /// Filter window N
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Built-in settings to start from: default or smoke
    #[arg(long, global = true)]
    preset: Option<Preset>,
}

#[derive(Args, Debug)]
struct ModelInput {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Dataset file or directory of .jsonl sessions
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic labeled sessions
    Gen,
    /// Train the filter networks and write a checkpoint and loss CSV
    Train {
        /// Dataset file or directory of .jsonl sessions
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Run the filter over sessions and write filtered states as JSON Lines
    Filter {
        #[command(flatten)]
        input: ModelInput,
    },
    /// Filter sessions and write error reports
    Eval {
        #[command(flatten)]
        input: ModelInput,
        /// Also score the untrained networks
        #[arg(long)]
        baseline: bool,
    },
    /// Serve live teleoperation sessions over WebSocket
    Serve {
        /// Checkpoint written by `train`
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Session tick rate in Hz
        #[arg(long, default_value_t = 50.0)]
        rate: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train { .. } => "train",
            Command::Filter { .. } => "filter",
            Command::Eval { .. } => "eval",
            Command::Serve { .. } => "serve",
        }
    }
}

fn explicit(r: &Resolved, key: &str) -> bool {
    matches!(r.source(key), Source::File | Source::Flag)
}

fn load(r: &Resolved, checkpoint: &std::path::Path) -> Result<commands::Loaded> {
    let c = &r.config.train;
    commands::load(
        checkpoint,
        explicit(r, "train.ensemble_size").then_some(c.ensemble_size),
        explicit(r, "train.window").then_some(c.window),
    )
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let resolved = resolve(&Overrides {
        config: g.config,
        preset: g.preset,
        seed: g.seed,
        out: g.out,
        epochs: g.epochs,
        batch: g.batch,
        lr: g.lr,
        ensemble: g.ensemble,
        window: g.window,
    })?;
    eprint!("{}", resolved.banner(cli.command.name()));
    let cfg = &resolved.config;
    match &cli.command {
        Command::Gen => {
            for p in commands::cmd_gen(cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train { data } => {
            let out = commands::cmd_train(cfg, data)?;
            println!("{}", out.checkpoint.display());
            println!("{}", out.losses.display());
        }
        Command::Filter { input } => {
            let loaded = load(&resolved, &input.checkpoint)?;
            for p in commands::cmd_filter(cfg, &loaded, &input.data)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { input, baseline } => {
            let loaded = load(&resolved, &input.checkpoint)?;
            let out = commands::cmd_eval(cfg, &loaded, &input.data, *baseline)?;
            let r = &out.report;
            println!(
                "wrist {:.2} cm  elbow {:.2} cm  hip {:.2} deg  spread/speed r {}",
                r.wrist_cm.mean,
                r.elbow_cm.mean,
                r.hip_deg.mean,
                r.speed_spread_corr.map_or("n/a".into(), |c| format!("{c:.3}"))
            );
            if let Some(b) = &out.baseline {
                println!("untrained wrist {:.2} cm", b.wrist_cm.mean);
            }
        }
        Command::Serve { checkpoint, addr, rate } => {
            let loaded = load(&resolved, checkpoint)?;
            commands::cmd_serve(cfg, loaded, *addr, *rate)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IROCO_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
