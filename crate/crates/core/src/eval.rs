//! Pose error metrics and session reports.
//!
//! Member rotations are averaged in 6DRR space and decoded once before
//! forward kinematics. Wrist and elbow errors are world-frame Euclidean
//! distances in centimeters; hip error is the heading angle difference in
//! degrees.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::{layout, LabeledFrame, PoseState, STATE_DIM};
use crate::denkf::update::spread;
use crate::error::{Error, Result};
use crate::rotkit::{wrap_angle, BodyModel, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameError {
    pub wrist_cm: f64,
    pub elbow_cm: f64,
    pub hip_deg: f64,
    /// Std of member wrist positions (root of the summed per-axis variance), cm.
    pub spread_wrist: f64,
    /// Mean per-dimension member std for the upper-arm, lower-arm, and
    /// heading blocks of the state.
    pub spread: [f64; 3],
}

fn hip_error_deg(pred: &PoseState, gt: &PoseState) -> Result<f64> {
    let d = wrap_angle(pred.q_h.yaw()? - gt.q_h.yaw()?);
    Ok(d.abs().to_degrees())
}

/// Errors of a single predicted state.
pub fn state_errors(pred: &PoseState, gt: &PoseState, body: &BodyModel) -> Result<FrameError> {
    let kp = pred.kinematics(body)?;
    let kg = gt.kinematics(body)?;
    Ok(FrameError {
        wrist_cm: 100.0 * (kp.world.wrist - kg.world.wrist).norm(),
        elbow_cm: 100.0 * (kp.world.elbow - kg.world.elbow).norm(),
        hip_deg: hip_error_deg(pred, gt)?,
        spread_wrist: 0.0,
        spread: [0.0; 3],
    })
}

fn block_spread(s: &nalgebra::DVector<f64>, range: std::ops::Range<usize>) -> f64 {
    let n = range.len() as f64;
    s.rows(range.start, range.len()).sum() / n
}

/// Mean per-dimension std of the upper-arm, lower-arm, and heading blocks.
pub fn group_spread(members: &DMatrix<f64>) -> [f64; 3] {
    let s = spread(members);
    [
        block_spread(&s, layout::Q_U),
        block_spread(&s, layout::Q_L),
        block_spread(&s, layout::Q_H),
    ]
}

/// Errors of an ensemble (members as columns) against ground truth.
pub fn pose_errors(members: &DMatrix<f64>, gt: &PoseState, body: &BodyModel) -> Result<FrameError> {
    if members.nrows() != STATE_DIM || members.ncols() == 0 {
        return Err(Error::ShapeMismatch {
            context: "ensemble members",
            expected: STATE_DIM,
            got: members.nrows(),
        });
    }
    let mean = PoseState::from_slice(members.column_mean().as_slice())?;
    let mut err = state_errors(&mean, gt, body)?;

    if members.ncols() > 1 {
        let mut wrists = DMatrix::zeros(3, members.ncols());
        for (j, col) in members.column_iter().enumerate() {
            let k = PoseState::from_slice(col.as_slice())?.kinematics(body)?;
            wrists.set_column(j, &k.world.wrist);
        }
        err.spread_wrist = 100.0 * spread(&wrists).norm();
        err.spread = group_spread(members);
    }
    Ok(err)
}

/// A frame of a session report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportFrame {
    pub t: f64,
    pub error: FrameError,
    /// Ground-truth wrist speed, m/s.
    pub speed: f64,
}

/// World-frame ground-truth wrist speeds by backward difference; the first
/// frame reuses the first interval.
pub fn wrist_speeds(frames: &[LabeledFrame], body: &BodyModel) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::TooFew(frames.len()));
    }
    let pos: Vec<Vec3> = frames
        .iter()
        .map(|f| f.gt.kinematics(body).map(|k| k.world.wrist))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(frames.len());
    for k in 0..frames.len() {
        let (a, b) = if k == 0 { (0, 1) } else { (k - 1, k) };
        let dt = frames[b].t - frames[a].t;
        out.push((pos[b] - pos[a]).norm() / dt);
    }
    Ok(out)
}

/// Per-frame errors for a filtered session, one member matrix per frame.
pub fn evaluate_session(frames: &[LabeledFrame], members: &[DMatrix<f64>], body: &BodyModel) -> Result<Vec<ReportFrame>> {
    if frames.len() != members.len() {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: members.len(),
        });
    }
    let speeds = wrist_speeds(frames, body)?;
    frames
        .iter()
        .zip(members)
        .zip(speeds)
        .map(|((f, m), speed)| {
            Ok(ReportFrame {
                t: f.t,
                error: pose_errors(m, &f.gt, body)?,
                speed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
    /// Counts in unit-width bins starting at zero; bin `k` covers `[k, k+1)`.
    pub histogram: Vec<usize>,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let pct = |p: f64| {
            let rank = ((p / 100.0) * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        };
        let max = sorted[n - 1];
        let mut histogram = vec![0usize; max.floor() as usize + 1];
        for v in &sorted {
            histogram[v.floor() as usize] += 1;
        }
        Self {
            mean: values.iter().sum::<f64>() / n as f64,
            p50: pct(50.0),
            p90: pct(90.0),
            p95: pct(95.0),
            max,
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub frames: usize,
    pub wrist_cm: MetricSummary,
    pub elbow_cm: MetricSummary,
    pub hip_deg: MetricSummary,
    pub spread_wrist: MetricSummary,
    /// Pearson correlation of ground-truth wrist speed with wrist spread;
    /// `None` when either series is constant.
    pub speed_spread_corr: Option<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

pub fn session_report(frames: &[ReportFrame]) -> Result<SessionReport> {
    if frames.len() < 2 {
        return Err(Error::TooFew(frames.len()));
    }
    let pick = |f: fn(&ReportFrame) -> f64| frames.iter().map(f).collect::<Vec<_>>();
    let spread = pick(|f| f.error.spread_wrist);
    Ok(SessionReport {
        frames: frames.len(),
        wrist_cm: MetricSummary::from_values(&pick(|f| f.error.wrist_cm)),
        elbow_cm: MetricSummary::from_values(&pick(|f| f.error.elbow_cm)),
        hip_deg: MetricSummary::from_values(&pick(|f| f.error.hip_deg)),
        spread_wrist: MetricSummary::from_values(&spread),
        speed_spread_corr: pearson(&pick(|f| f.speed), &spread),
    })
}

pub fn write_frames_csv<W: Write>(frames: &[ReportFrame], mut w: W) -> Result<()> {
    writeln!(w, "t,wrist_cm,elbow_cm,hip_deg,spread_wrist,speed")?;
    for f in frames {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f.t, f.error.wrist_cm, f.error.elbow_cm, f.error.hip_deg, f.error.spread_wrist, f.speed
        )?;
    }
    Ok(())
}

pub fn write_report_json<W: Write>(report: &SessionReport, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, report).map_err(|e| Error::Io(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotkit::{axis_rotation, Heading, SixDRR};

    #[test]
    fn identical_states_have_zero_error() {
        let s = PoseState::default();
        let e = state_errors(&s, &s, &BodyModel::default()).unwrap();
        assert_eq!((e.wrist_cm, e.elbow_cm, e.hip_deg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn opposite_headings_are_180_degrees() {
        let a = PoseState::default();
        let b = PoseState {
            q_h: Heading::from_yaw(std::f64::consts::PI),
            ..a
        };
        let e = state_errors(&a, &b, &BodyModel::default()).unwrap();
        assert!((e.hip_deg - 180.0).abs() < 1e-9);
    }

    #[test]
    fn forearm_rotation_chord() {
        let body = BodyModel::default();
        let gt = PoseState::default();
        let r = axis_rotation(&Vec3::x(), 10f64.to_radians());
        let pred = PoseState {
            q_l: SixDRR::from_rotation_matrix(&r),
            ..gt
        };
        let e = state_errors(&pred, &gt, &body).unwrap();
        let want = 100.0 * 2.0 * body.lower_arm_len * 5f64.to_radians().sin();
        assert!((e.wrist_cm - want).abs() < 1e-9, "{} vs {want}", e.wrist_cm);
        assert!((want - 4.88).abs() < 0.005);
        assert_eq!(e.elbow_cm, 0.0);
    }

    #[test]
    fn identical_members_have_zero_spread() {
        let s = PoseState::default().to_array();
        let m = DMatrix::from_fn(STATE_DIM, 4, |i, _| s[i]);
        let e = pose_errors(&m, &PoseState::default(), &BodyModel::default()).unwrap();
        assert_eq!(e.spread_wrist, 0.0);
        assert_eq!(e.spread, [0.0; 3]);
    }

    #[test]
    fn summary_of_zeros() {
        let frames: Vec<ReportFrame> = (0..5)
            .map(|k| ReportFrame {
                t: k as f64,
                error: FrameError::default(),
                speed: k as f64,
            })
            .collect();
        let r = session_report(&frames).unwrap();
        assert_eq!(r.wrist_cm.mean, 0.0);
        assert_eq!(r.wrist_cm.p95, 0.0);
        assert_eq!(r.wrist_cm.histogram, vec![5]);
        assert_eq!(r.speed_spread_corr, None);
        assert!(matches!(session_report(&frames[..1]), Err(Error::TooFew(1))));
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let s = MetricSummary::from_values(&v);
        assert_eq!((s.p50, s.p90, s.p95, s.max), (5.0, 9.0, 10.0, 10.0));
        assert_eq!(s.mean, 5.5);
    }

    #[test]
    fn csv_header_and_rows() {
        let f = ReportFrame {
            t: 0.5,
            error: FrameError {
                wrist_cm: 1.5,
                ..FrameError::default()
            },
            speed: 0.25,
        };
        let mut buf = Vec::new();
        write_frames_csv(&[f], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,wrist_cm,elbow_cm,hip_deg,spread_wrist,speed\n0.5,1.5,0,0,0,0.25\n");
    }
}
