//! Sagittal-plane teleoperation targets.
//!
//! The wrist position is taken in the body-local frame defined by the hip
//! heading, its lateral (X) component is dropped, and the remaining (Y, Z)
//! coordinates are scaled, offset, and clamped into the robot workspace.

use serde::{Deserialize, Serialize};

use crate::datamodel::PoseState;
use crate::error::{Error, Result};
use crate::rotkit::{BodyModel, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workspace {
    pub x_extent: f64,
    pub y_extent: f64,
    pub z_extent: f64,
    /// Center of the workspace box in the robot-base frame.
    pub origin: Vec3,
    /// Scale from human sagittal coordinates to robot coordinates.
    pub gain: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            x_extent: 1.6,
            y_extent: 0.6,
            z_extent: 1.0,
            origin: Vec3::zeros(),
            gain: 1.0,
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.x_extent) && ok(self.y_extent) && ok(self.z_extent)) {
            return Err(Error::Config("workspace extents must be positive".into()));
        }
        if !ok(self.gain) {
            return Err(Error::Config("workspace gain must be positive".into()));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("workspace origin must be finite".into()));
        }
        Ok(())
    }

    pub fn half_extents(&self) -> Vec3 {
        Vec3::new(self.x_extent, self.y_extent, self.z_extent) / 2.0
    }

    pub fn lower(&self) -> Vec3 {
        self.origin - self.half_extents()
    }

    pub fn upper(&self) -> Vec3 {
        self.origin + self.half_extents()
    }

    /// Per-axis clamp into the box, with a flag for every clamped axis.
    pub fn clamp(&self, p: &Vec3) -> (Vec3, [bool; 3]) {
        let (lo, hi) = (self.lower(), self.upper());
        let mut out = *p;
        let mut clamped = [false; 3];
        for i in 0..3 {
            if out[i] < lo[i] {
                out[i] = lo[i];
                clamped[i] = true;
            } else if out[i] > hi[i] {
                out[i] = hi[i];
                clamped[i] = true;
            }
        }
        (out, clamped)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    /// Maps a sagittal-plane point `(y, z)` to a clamped robot target.
    pub fn target(&self, sagittal: (f64, f64)) -> EndEffectorTarget {
        let raw = self.origin + self.gain * Vec3::new(0.0, sagittal.0, sagittal.1);
        let (position, clamped) = self.clamp(&raw);
        EndEffectorTarget { position, clamped }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorTarget {
    pub position: Vec3,
    pub clamped: [bool; 3],
}

/// Body-local wrist position projected onto the sagittal (Y, Z) plane.
pub fn sagittal_wrist(state: &PoseState, body: &BodyModel) -> Result<(f64, f64)> {
    let k = state.kinematics(body)?;
    Ok((k.local.wrist.y, k.local.wrist.z))
}

pub fn ee_target(state: &PoseState, body: &BodyModel, ws: &Workspace) -> Result<EndEffectorTarget> {
    Ok(ws.target(sagittal_wrist(state, body)?))
}

/// Exponential smoothing of sagittal points; `alpha = 1` passes input through.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoother {
    alpha: f64,
    last: Option<(f64, f64)>,
}

impl Smoother {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("smoothing alpha {alpha} outside (0, 1]")));
        }
        Ok(Self { alpha, last: None })
    }

    pub fn push(&mut self, p: (f64, f64)) -> (f64, f64) {
        let out = match self.last {
            None => p,
            Some(prev) => (
                prev.0 + self.alpha * (p.0 - prev.0),
                prev.1 + self.alpha * (p.1 - prev.1),
            ),
        };
        self.last = Some(out);
        out
    }

    pub fn reset(&mut self) {
        self.last = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    /// Pointwise RMSE on the sagittal plane, in meters.
    pub rmse: f64,
    /// Fraction of points within the tolerance of their reference.
    pub completion: f64,
}

/// Compares equal-length, already resampled target and reference traces on
/// the sagittal (Y, Z) plane.
pub fn trace_eval(targets: &[Vec3], reference: &[Vec3], tolerance: f64) -> Result<TraceScore> {
    if targets.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: targets.len(),
            right: reference.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::TooFew(0));
    }
    let mut sq = 0.0;
    let mut hits = 0usize;
    for (a, b) in targets.iter().zip(reference) {
        let d2 = (a.y - b.y).powi(2) + (a.z - b.z).powi(2);
        sq += d2;
        if d2.sqrt() <= tolerance {
            hits += 1;
        }
    }
    let n = targets.len() as f64;
    Ok(TraceScore {
        rmse: (sq / n).sqrt(),
        completion: hits as f64 / n,
    })
}

/// Strokes of a block letter in unit coordinates `(horizontal, vertical)`.
fn letter_strokes(letter: char) -> Option<Vec<(f64, f64)>> {
    let arc = |cx: f64, cy: f64, r: f64, from: f64, to: f64| -> Vec<(f64, f64)> {
        (0..=12)
            .map(|k| {
                let a = from + (to - from) * k as f64 / 12.0;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    };
    use std::f64::consts::FRAC_PI_2;
    let pts = match letter.to_ascii_uppercase() {
        'A' => vec![(0.0, 0.0), (0.5, 1.0), (1.0, 0.0), (0.75, 0.5), (0.25, 0.5)],
        'M' => vec![(0.0, 0.0), (0.0, 1.0), (0.5, 0.4), (1.0, 1.0), (1.0, 0.0)],
        'Z' => vec![(0.0, 1.0), (1.0, 1.0), (0.0, 0.0), (1.0, 0.0)],
        'B' => {
            let mut p = vec![(0.0, 0.0), (0.0, 1.0), (0.5, 1.0)];
            p.extend(arc(0.5, 0.75, 0.25, FRAC_PI_2, -FRAC_PI_2));
            p.push((0.0, 0.5));
            p.push((0.55, 0.5));
            p.extend(arc(0.55, 0.25, 0.25, FRAC_PI_2, -FRAC_PI_2));
            p.push((0.0, 0.0));
            p
        }
        _ => return None,
    };
    Some(pts)
}

/// A letter traced as a single polyline in the sagittal plane, resampled to
/// `samples` points equally spaced by arc length. The letter's horizontal
/// axis maps to Z and its vertical axis to Y; `size` is its height in meters
/// and `center` the box center.
pub fn letter_template(letter: char, samples: usize, size: f64, center: &Vec3) -> Option<Vec<Vec3>> {
    let pts = letter_strokes(letter)?;
    if samples < 2 {
        return None;
    }
    let seg: Vec<f64> = pts
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(samples);
    let mut i = 0;
    let mut acc = 0.0;
    for k in 0..samples {
        let s = total * k as f64 / (samples - 1) as f64;
        while i + 1 < seg.len() && acc + seg[i] < s {
            acc += seg[i];
            i += 1;
        }
        let u = if seg[i] > 0.0 { ((s - acc) / seg[i]).clamp(0.0, 1.0) } else { 0.0 };
        let (h, v) = (
            pts[i].0 + u * (pts[i + 1].0 - pts[i].0),
            pts[i].1 + u * (pts[i + 1].1 - pts[i].1),
        );
        out.push(Vec3::new(center.x, center.y + size * (v - 0.5), center.z + size * (h - 0.5)));
    }
    Some(out)
}
