//! Dataset generation, filtering, and evaluation shared by the subcommands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use iroco_core::datamodel::{dataset_read_file, dataset_write_file, LabeledFrame};
use iroco_core::denkf::{DenkFilter, EnsembleModels};
use iroco_core::eval::{evaluate_session, session_report, ReportFrame, SessionReport};
use iroco_core::rotkit::BodyModel;
use iroco_core::synthgen::{gen_session, MotionConfig, NoiseConfig};
use iroco_core::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub sessions: usize,
    /// Seconds per session.
    pub duration: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sessions: 20,
            duration: 60.0,
        }
    }
}

impl DataConfig {
    /// 10k frames at 50 Hz.
    pub fn smoke() -> Self {
        Self {
            sessions: 10,
            duration: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions == 0 || !(self.duration > 0.0) {
            return Err(Error::Config("data needs at least one session of positive duration".into()));
        }
        Ok(())
    }
}

/// Sessions with consecutive seeds starting at `seed`.
pub fn generate(
    data: &DataConfig,
    motion: &MotionConfig,
    noise: &NoiseConfig,
    body: &BodyModel,
    seed: u64,
) -> Result<Vec<Vec<LabeledFrame>>> {
    data.validate()?;
    (0..data.sessions as u64)
        .map(|i| {
            let m = MotionConfig {
                seed: seed.wrapping_add(i),
                duration: data.duration,
                ..motion.clone()
            };
            gen_session(&m, noise, body)
        })
        .collect()
}

pub fn session_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("session_{index:03}.jsonl"))
}

pub fn write_sessions(sessions: &[Vec<LabeledFrame>], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = session_path(dir, i);
            dataset_write_file(s, &p)?;
            Ok(p)
        })
        .collect()
}

/// A single dataset file, or every `.jsonl` file in a directory in name
/// order.
pub fn load_sessions(path: &Path) -> Result<Vec<Vec<LabeledFrame>>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no .jsonl datasets in {}", path.display()),
            )));
        }
        files.iter().map(|f| dataset_read_file(f)).collect()
    } else {
        Ok(vec![dataset_read_file(path)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredFrame {
    pub t: f64,
    /// True while the filter is still filling its window and reports the
    /// sensor-model mean.
    pub warmup: bool,
    pub x: Vec<f64>,
    pub spread: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub innovation_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov_condition: Option<f64>,
    #[serde(skip)]
    pub members: DMatrix<f64>,
}

/// Runs a fresh filter over one session.
pub fn filter_session<M: EnsembleModels + Clone>(
    models: &M,
    frames: &[LabeledFrame],
    members: usize,
    seed: u64,
) -> Result<Vec<FilteredFrame>> {
    let mut filter = DenkFilter::new(models.clone(), members, seed)?;
    frames
        .iter()
        .map(|f| {
            let out = filter.push(&f.obs.to_array())?;
            let spread = iroco_core::denkf::update::spread(&out.members);
            let d = out.diagnostics.as_ref();
            Ok(FilteredFrame {
                t: f.t,
                warmup: d.is_none(),
                x: out.mean.iter().copied().collect(),
                spread: spread.iter().copied().collect(),
                innovation_norm: d.map(|d| d.innovation_norm),
                gain_norm: d.map(|d| d.gain_norm),
                cov_condition: d.map(|d| d.cov_condition),
                members: out.members,
            })
        })
        .collect()
}

pub fn write_filtered(frames: &[FilteredFrame], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for f in frames {
        serde_json::to_writer(&mut w, f).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-frame errors across sessions and their summary.
pub fn evaluate(
    sessions: &[Vec<LabeledFrame>],
    filtered: &[Vec<FilteredFrame>],
    body: &BodyModel,
) -> Result<(Vec<ReportFrame>, SessionReport)> {
    let mut all = Vec::new();
    for (frames, out) in sessions.iter().zip(filtered) {
        let members: Vec<DMatrix<f64>> = out.iter().map(|f| f.members.clone()).collect();
        all.extend(evaluate_session(frames, &members, body)?);
    }
    let report = session_report(&all)?;
    Ok((all, report))
}
