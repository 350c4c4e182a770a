//! Subcommand bodies. Each validates its inputs before doing work and
//! writes its outputs under the configured output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use iroco_core::denkf::{load_checkpoint, save_checkpoint, train, Checkpoint, EpochLosses, FilterModels};
use iroco_core::eval::{write_frames_csv, write_report_json, SessionReport};
use iroco_core::{Error, Result};
use iroco_teleopd::SessionConfig;

use crate::config::RunConfig;
use crate::pipeline::{evaluate, filter_session, generate, load_sessions, write_filtered, write_sessions};

/// Maps an error to the process exit status: 2 for configuration, 4 for
/// numerical failures, 3 for everything touching data or files.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} {} does not exist", path.display()),
        )))
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = prepare_out(cfg)?;
    let sessions = generate(&cfg.data, &cfg.motion, &cfg.noise, &cfg.body, cfg.seed)?;
    let paths = write_sessions(&sessions, out)?;
    log::info!("wrote {} sessions to {}", paths.len(), out.display());
    Ok(paths)
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub losses: PathBuf,
    pub history: Vec<EpochLosses>,
}

pub fn cmd_train(cfg: &RunConfig, data: &Path) -> Result<TrainOutputs> {
    require(data, "dataset")?;
    let out = prepare_out(cfg)?;
    let sessions = load_sessions(data)?;
    log::info!(
        "training on {} sessions ({} frames)",
        sessions.len(),
        sessions.iter().map(Vec::len).sum::<usize>()
    );
    let report = train(&sessions, &cfg.train, |l| {
        log::info!(
            "epoch {:>3}  end2end {:.5}  l_f {:.5}  l_s {:.5}",
            l.epoch,
            l.end2end,
            l.transition,
            l.sensor
        )
    })?;
    let checkpoint = out.join("checkpoint.json");
    save_checkpoint(&Checkpoint::new(&report.models, &cfg.train), &checkpoint)?;
    let losses = out.join("loss.csv");
    report.write_loss_csv(BufWriter::new(File::create(&losses)?))?;
    Ok(TrainOutputs {
        checkpoint,
        losses,
        history: report.losses,
    })
}

/// Checkpoint models and the ensemble size to run them with.
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub models: FilterModels,
    pub members: usize,
}

/// Loads a checkpoint. `ensemble` overrides the stored ensemble size; a
/// `window` that disagrees with the checkpoint is a configuration error.
pub fn load(path: &Path, ensemble: Option<usize>, window: Option<usize>) -> Result<Loaded> {
    require(path, "checkpoint").map_err(|e| Error::Checkpoint(e.to_string()))?;
    let checkpoint = load_checkpoint(path)?;
    if let Some(w) = window.filter(|&w| w != checkpoint.window) {
        return Err(Error::Config(format!(
            "window {w} does not match the checkpoint's window {}",
            checkpoint.window
        )));
    }
    let models = checkpoint.models()?;
    let members = ensemble.unwrap_or(checkpoint.ensemble_size);
    Ok(Loaded {
        checkpoint,
        models,
        members,
    })
}

/// The checkpoint's networks as they were before training: same seed,
/// widths, and input normalizer.
pub fn untrained(ckpt: &Checkpoint) -> Result<FilterModels> {
    let c = &ckpt.config;
    let mut models = FilterModels::new(ckpt.window, c.width_divisor, ckpt.dropout_rate, c.seed)?;
    models.normalizer = ckpt.normalizer.clone();
    Ok(models)
}

pub fn cmd_filter(cfg: &RunConfig, loaded: &Loaded, data: &Path) -> Result<Vec<PathBuf>> {
    require(data, "dataset")?;
    let out = prepare_out(cfg)?;
    let sessions = load_sessions(data)?;
    let mut paths = Vec::with_capacity(sessions.len());
    for (i, frames) in sessions.iter().enumerate() {
        let filtered = filter_session(&loaded.models, frames, loaded.members, cfg.seed.wrapping_add(i as u64))?;
        let path = out.join(format!("filtered_{i:03}.jsonl"));
        write_filtered(&filtered, &path)?;
        paths.push(path);
    }
    log::info!("filtered {} sessions into {}", paths.len(), out.display());
    Ok(paths)
}

fn run_eval(cfg: &RunConfig, models: &FilterModels, members: usize, data: &Path) -> Result<(Vec<iroco_core::eval::ReportFrame>, SessionReport)> {
    let sessions = load_sessions(data)?;
    let filtered = sessions
        .iter()
        .enumerate()
        .map(|(i, frames)| filter_session(models, frames, members, cfg.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&sessions, &filtered, &cfg.body)
}

pub struct EvalOutputs {
    pub report: SessionReport,
    pub baseline: Option<SessionReport>,
}

/// Filters every session and writes per-frame errors and the summary.
/// With `baseline`, the untrained networks are scored the same way.
pub fn cmd_eval(cfg: &RunConfig, loaded: &Loaded, data: &Path, baseline: bool) -> Result<EvalOutputs> {
    require(data, "dataset")?;
    let out = prepare_out(cfg)?;
    let (frames, report) = run_eval(cfg, &loaded.models, loaded.members, data)?;
    write_frames_csv(&frames, BufWriter::new(File::create(out.join("frames.csv"))?))?;
    write_report_json(&report, BufWriter::new(File::create(out.join("report.json"))?))?;
    log::info!(
        "wrist {:.2} cm  elbow {:.2} cm  hip {:.2} deg  speed/spread r {:?}",
        report.wrist_cm.mean,
        report.elbow_cm.mean,
        report.hip_deg.mean,
        report.speed_spread_corr
    );
    let baseline = if baseline {
        let (_, b) = run_eval(cfg, &untrained(&loaded.checkpoint)?, loaded.members, data)?;
        write_report_json(&b, BufWriter::new(File::create(out.join("baseline_report.json"))?))?;
        log::info!("untrained baseline wrist {:.2} cm", b.wrist_cm.mean);
        Some(b)
    } else {
        None
    };
    Ok(EvalOutputs { report, baseline })
}

pub fn cmd_serve(cfg: &RunConfig, loaded: Loaded, addr: SocketAddr, rate: f64) -> Result<()> {
    let session = SessionConfig {
        rate,
        members: loaded.members,
        seed: cfg.seed,
        noise: cfg.noise.clone(),
        workspace: cfg.workspace,
        body: cfg.body,
        ..SessionConfig::default()
    };
    session.validate()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(iroco_teleopd::run(addr, Arc::new(loaded.models), session))?;
    Ok(())
}
