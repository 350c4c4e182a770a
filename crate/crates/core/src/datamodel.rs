//! Observation and state records, calibration, yaw augmentation, and the
//! JSON Lines session format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotkit::{
    forward_kinematics, heading_encode, quat_to_6drr, wrap_angle, yaw_rotation, BodyModel,
    Heading, Kinematics, Quaternion, RotationMatrix, SixDRR, Vec3,
};

pub const OBS_DIM: usize = 22;
pub const STATE_DIM: usize = 27;

/// Index ranges inside the flattened state.
pub mod layout {
    use std::ops::Range;
    pub const Q_U: Range<usize> = 0..6;
    pub const Q_L: Range<usize> = 6..12;
    pub const Q_H: Range<usize> = 12..14;
    pub const DQ_U: Range<usize> = 14..20;
    pub const DQ_L: Range<usize> = 20..26;
    pub const DQ_H: usize = 26;
}

/// One calibrated sensor sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub dt: f64,
    pub theta_sw: SixDRR,
    pub v: Vec3,
    pub alpha: Vec3,
    pub gamma: Vec3,
    pub phi: Vec3,
    pub rho: f64,
    pub r_h: Heading,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[0] = self.dt;
        out[1..7].copy_from_slice(&self.theta_sw.to_array());
        for (i, v) in [self.v, self.alpha, self.gamma, self.phi].iter().enumerate() {
            out[7 + 3 * i..10 + 3 * i].copy_from_slice(v.as_slice());
        }
        out[19] = self.rho;
        out[20] = self.r_h.s;
        out[21] = self.r_h.c;
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != OBS_DIM {
            return Err(Error::ShapeMismatch {
                context: "observation",
                expected: OBS_DIM,
                got: v.len(),
            });
        }
        let v3 = |i: usize| Vec3::new(v[i], v[i + 1], v[i + 2]);
        Ok(Self {
            dt: v[0],
            theta_sw: SixDRR::from_slice(&v[1..7]),
            v: v3(7),
            alpha: v3(10),
            gamma: v3(13),
            phi: v3(16),
            rho: v[19],
            r_h: Heading::new(v[20], v[21]),
        })
    }
}

/// Arm pose, heading, and their rates.
///
/// `q_u` and `q_l` are expressed in the calibrated world frame (the frame the
/// watch orientation is measured in); [`PoseState::kinematics`] moves them
/// into the body-local frame defined by `q_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseState {
    pub q_u: SixDRR,
    pub q_l: SixDRR,
    pub q_h: Heading,
    pub dq_u: [f64; 6],
    pub dq_l: [f64; 6],
    pub dq_h: f64,
}

impl Default for PoseState {
    fn default() -> Self {
        Self {
            q_u: SixDRR::IDENTITY,
            q_l: SixDRR::IDENTITY,
            q_h: Heading::FORWARD,
            dq_u: [0.0; 6],
            dq_l: [0.0; 6],
            dq_h: 0.0,
        }
    }
}

impl PoseState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out[layout::Q_U].copy_from_slice(&self.q_u.to_array());
        out[layout::Q_L].copy_from_slice(&self.q_l.to_array());
        out[layout::Q_H].copy_from_slice(&[self.q_h.s, self.q_h.c]);
        out[layout::DQ_U].copy_from_slice(&self.dq_u);
        out[layout::DQ_L].copy_from_slice(&self.dq_l);
        out[layout::DQ_H] = self.dq_h;
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::ShapeMismatch {
                context: "pose state",
                expected: STATE_DIM,
                got: v.len(),
            });
        }
        let mut dq_u = [0.0; 6];
        let mut dq_l = [0.0; 6];
        dq_u.copy_from_slice(&v[layout::DQ_U]);
        dq_l.copy_from_slice(&v[layout::DQ_L]);
        Ok(Self {
            q_u: SixDRR::from_slice(&v[layout::Q_U]),
            q_l: SixDRR::from_slice(&v[layout::Q_L]),
            q_h: Heading::new(v[12], v[13]),
            dq_u,
            dq_l,
            dq_h: v[layout::DQ_H],
        })
    }

    /// Upper- and lower-arm rotations expressed in the body-local frame.
    pub fn local_arm(&self) -> Result<(SixDRR, SixDRR)> {
        let inv = yaw_rotation(-self.q_h.yaw()?);
        Ok((self.q_u.rotated(&inv), self.q_l.rotated(&inv)))
    }

    pub fn kinematics(&self, body: &BodyModel) -> Result<Kinematics> {
        let (u, l) = self.local_arm()?;
        forward_kinematics(&u, &l, &self.q_h, body)
    }

    /// Builds a state from world-frame arm rotations and fills the rates
    /// by finite differences against `prev`.
    pub fn with_rates_from(mut self, prev: &PoseState, dt: f64) -> Self {
        let diff = |a: [f64; 6], b: [f64; 6]| {
            let mut d = [0.0; 6];
            for i in 0..6 {
                d[i] = (a[i] - b[i]) / dt;
            }
            d
        };
        self.dq_u = diff(self.q_u.to_array(), prev.q_u.to_array());
        self.dq_l = diff(self.q_l.to_array(), prev.q_l.to_array());
        let yaw = self.q_h.s.atan2(self.q_h.c);
        let prev_yaw = prev.q_h.s.atan2(prev.q_h.c);
        self.dq_h = wrap_angle(yaw - prev_yaw) / dt;
        self
    }
}

/// Device readings captured in the start pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSnapshot {
    pub theta0: Quaternion,
    pub yaw0: f64,
    pub rho0: f64,
}

impl CalibrationSnapshot {
    pub fn new(theta0: Quaternion, yaw0: f64, rho0: f64) -> Result<Self> {
        Ok(Self {
            theta0: theta0.normalized()?,
            yaw0,
            rho0,
        })
    }

    pub fn identity() -> Self {
        Self {
            theta0: Quaternion::IDENTITY,
            yaw0: 0.0,
            rho0: 0.0,
        }
    }
}

/// Expresses raw watch orientation, phone yaw, and pressure relative to the
/// start pose.
pub fn calibrate(
    raw_theta: &Quaternion,
    raw_yaw: f64,
    raw_rho: f64,
    snap: &CalibrationSnapshot,
) -> (SixDRR, Heading, f64) {
    let rel = snap.theta0.conjugate().mul(raw_theta);
    (
        quat_to_6drr(&rel),
        heading_encode(raw_yaw - snap.yaw0),
        raw_rho - snap.rho0,
    )
}

/// How the velocity channel is formed from linear acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMode {
    /// `v_t = α_t · Δt`, the integral over one sampling interval.
    #[default]
    PerInterval,
    /// Running sum of per-interval integrals.
    Accumulated,
}

pub fn integrate_velocity(alpha: &Vec3, dt: f64) -> Vec3 {
    alpha * dt
}

#[derive(Debug, Clone)]
pub struct VelocityIntegrator {
    mode: VelocityMode,
    v: Vec3,
}

impl VelocityIntegrator {
    pub fn new(mode: VelocityMode) -> Self {
        Self {
            mode,
            v: Vec3::zeros(),
        }
    }

    pub fn push(&mut self, alpha: &Vec3, dt: f64) -> Vec3 {
        let dv = integrate_velocity(alpha, dt);
        self.v = match self.mode {
            VelocityMode::PerInterval => dv,
            VelocityMode::Accumulated => self.v + dv,
        };
        self.v
    }
}

/// One dataset row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledFrame {
    pub t: f64,
    pub obs: Observation,
    pub gt: PoseState,
}

fn rotate_cols(v: [f64; 6], r: &RotationMatrix) -> [f64; 6] {
    SixDRR::from_slice(&v).rotated(r).to_array()
}

/// Rotates every world-frame orientation in the frame about the up axis.
///
/// Watch-frame sensors (α, γ, φ, v), pressure, Δt, and the yaw rate do not
/// depend on global orientation and are copied through.
pub fn augment_yaw(frame: &LabeledFrame, angle: f64) -> LabeledFrame {
    if angle == 0.0 {
        return *frame;
    }
    let r = yaw_rotation(angle);
    let mut out = *frame;
    out.obs.theta_sw = frame.obs.theta_sw.rotated(&r);
    out.obs.r_h = frame.obs.r_h.rotated(angle);
    let gt = &frame.gt;
    out.gt = PoseState {
        q_u: gt.q_u.rotated(&r),
        q_l: gt.q_l.rotated(&r),
        q_h: gt.q_h.rotated(angle),
        dq_u: rotate_cols(gt.dq_u, &r),
        dq_l: rotate_cols(gt.dq_l, &r),
        dq_h: gt.dq_h,
    };
    out
}

pub fn augment_session(frames: &[LabeledFrame], angle: f64) -> Vec<LabeledFrame> {
    frames.iter().map(|f| augment_yaw(f, angle)).collect()
}

// ---------------------------------------------------------------------------
// JSON Lines session files

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub columns: Vec<String>,
    pub units: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    t: f64,
    obs: Vec<f64>,
    gt: Vec<f64>,
}

fn columns() -> Vec<(String, &'static str)> {
    let mut cols = vec![("t".to_string(), "s")];
    let mut push = |prefix: &str, names: &[&str], unit: &'static str| {
        for n in names {
            cols.push((format!("{prefix}.{n}"), unit));
        }
    };
    let six = ["a1x", "a1y", "a1z", "a2x", "a2y", "a2z"];
    let xyz = ["x", "y", "z"];
    push("obs", &["dt"], "s");
    push("obs.theta_sw", &six, "1");
    push("obs.v", &xyz, "m/s");
    push("obs.alpha", &xyz, "m/s^2");
    push("obs.gamma", &xyz, "m/s^2");
    push("obs.phi", &xyz, "rad/s");
    push("obs", &["rho"], "hPa");
    push("obs.r_h", &["sin", "cos"], "1");
    push("gt.q_u", &six, "1");
    push("gt.q_l", &six, "1");
    push("gt.q_h", &["sin", "cos"], "1");
    push("gt.dq_u", &six, "1/s");
    push("gt.dq_l", &six, "1/s");
    push("gt", &["dq_h"], "rad/s");
    cols
}

impl DatasetHeader {
    pub fn current() -> Self {
        let (columns, units) = columns()
            .into_iter()
            .map(|(c, u)| (c, u.to_string()))
            .unzip();
        Self {
            version: DATASET_VERSION,
            columns,
            units,
        }
    }
}

pub fn dataset_write<W: Write>(frames: &[LabeledFrame], mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, &DatasetHeader::current()).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for f in frames {
        let row = Row {
            t: f.t,
            obs: f.obs.to_array().to_vec(),
            gt: f.gt.to_array().to_vec(),
        };
        serde_json::to_writer(&mut w, &row).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_write_file(frames: &[LabeledFrame], path: &Path) -> Result<()> {
    dataset_write(frames, BufWriter::new(File::create(path)?))
}

pub fn dataset_read<R: BufRead>(r: R) -> Result<Vec<LabeledFrame>> {
    let mut lines = r.lines();
    let header_line = lines.next().transpose()?.ok_or(Error::Format {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Format {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.version != DATASET_VERSION {
        return Err(Error::Format {
            line: 1,
            msg: format!("unsupported dataset version {}", header.version),
        });
    }
    if header.columns != DatasetHeader::current().columns {
        return Err(Error::Format {
            line: 1,
            msg: "column layout does not match this build".into(),
        });
    }

    let mut frames: Vec<LabeledFrame> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |msg: String| Error::Format { line: line_no, msg };
        let row: Row = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        let obs = Observation::from_slice(&row.obs).map_err(|e| fmt(e.to_string()))?;
        let gt = PoseState::from_slice(&row.gt).map_err(|e| fmt(e.to_string()))?;
        if let Some(prev) = frames.last() {
            if row.t <= prev.t {
                return Err(fmt(format!("time {} not after {}", row.t, prev.t)));
            }
        }
        frames.push(LabeledFrame { t: row.t, obs, gt });
    }
    Ok(frames)
}

pub fn dataset_read_file(path: &Path) -> Result<Vec<LabeledFrame>> {
    dataset_read(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotkit::{axis_rotation, sixdrr_to_rotmat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_frame(rng: &mut ChaCha8Rng, t: f64) -> LabeledFrame {
        let mut v = || rng.random_range(-2.0..2.0);
        let obs: Vec<f64> = (0..OBS_DIM).map(|_| v()).collect();
        let gt: Vec<f64> = (0..STATE_DIM).map(|_| v()).collect();
        LabeledFrame {
            t,
            obs: Observation::from_slice(&obs).unwrap(),
            gt: PoseState::from_slice(&gt).unwrap(),
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 0.0);
        assert_eq!(Observation::from_slice(&f.obs.to_array()).unwrap(), f.obs);
        assert_eq!(PoseState::from_slice(&f.gt.to_array()).unwrap(), f.gt);
        assert!(Observation::from_slice(&[0.0; 21]).is_err());
        assert!(PoseState::from_slice(&[0.0; 28]).is_err());
    }

    #[test]
    fn self_calibration_is_identity() {
        let theta0 = Quaternion::from_axis_angle(&Vec3::new(0.2, 1.0, 0.4), 0.9);
        let snap = CalibrationSnapshot::new(theta0, 1.3, 1013.2).unwrap();
        let (th, h, rho) = calibrate(&theta0, 1.3, 1013.2, &snap);
        let m = sixdrr_to_rotmat(&th).unwrap();
        assert!((m - RotationMatrix::identity()).amax() < 1e-12);
        assert_eq!(h, Heading::FORWARD);
        assert_eq!(rho, 0.0);

        let (_, _, rho) = calibrate(&theta0, 1.3, 1013.2 + 0.12, &snap);
        assert!((rho - 0.12).abs() < 1e-9);
    }

    #[test]
    fn calibration_removes_start_orientation() {
        let theta0 = Quaternion::from_axis_angle(&Vec3::new(-0.5, 0.3, 1.0), 2.1);
        let snap = CalibrationSnapshot::new(theta0, 0.0, 0.0).unwrap();
        let rz = Quaternion::from_axis_angle(&Vec3::z(), 40f64.to_radians());
        let (th, _, _) = calibrate(&theta0.mul(&rz), 0.0, 0.0, &snap);
        let m = sixdrr_to_rotmat(&th).unwrap();
        assert!((m - rz.to_rotation_matrix()).amax() < 1e-9);
    }

    #[test]
    fn identity_snapshot_is_identity_map() {
        let q = Quaternion::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.4);
        let (th, h, rho) = calibrate(&q, 0.3, 0.07, &CalibrationSnapshot::identity());
        assert!((sixdrr_to_rotmat(&th).unwrap() - q.to_rotation_matrix()).amax() < 1e-12);
        assert!((h.yaw().unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(rho, 0.07);
    }

    #[test]
    fn velocity_integration() {
        assert_eq!(integrate_velocity(&Vec3::zeros(), 0.3), Vec3::zeros());
        let v = integrate_velocity(&Vec3::new(1.0, 0.0, 0.0), 0.02);
        assert!((v.x - 0.02).abs() < 1e-15);

        let a = Vec3::new(0.5, -1.0, 2.0);
        let mut acc = VelocityIntegrator::new(VelocityMode::Accumulated);
        acc.push(&a, 0.01);
        let v = acc.push(&a, 0.01);
        assert!((v - a * 0.02).amax() < 1e-15);
        let mut per = VelocityIntegrator::new(VelocityMode::PerInterval);
        per.push(&a, 0.01);
        assert!((per.push(&a, 0.01) - a * 0.01).amax() < 1e-15);
    }

    #[test]
    fn augment_zero_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng, 0.5);
        assert_eq!(augment_yaw(&f, 0.0), f);
    }

    #[test]
    fn augment_rotates_heading() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = random_frame(&mut rng, 0.0);
        f.obs.r_h = Heading::FORWARD;
        let g = augment_yaw(&f, FRAC_PI_2);
        assert!((g.obs.r_h.s - 1.0).abs() < 1e-15 && g.obs.r_h.c.abs() < 1e-15);
    }

    #[test]
    fn augment_round_trip_and_sensor_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let f = random_frame(&mut rng, 0.0);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let g = augment_yaw(&f, a);
            assert_eq!(g.obs.dt.to_bits(), f.obs.dt.to_bits());
            assert_eq!(g.obs.alpha, f.obs.alpha);
            assert_eq!(g.obs.gamma, f.obs.gamma);
            assert_eq!(g.obs.phi, f.obs.phi);
            assert_eq!(g.obs.v, f.obs.v);
            assert_eq!(g.obs.rho.to_bits(), f.obs.rho.to_bits());
            let back = augment_yaw(&g, -a);
            let d = back
                .obs
                .to_array()
                .iter()
                .chain(back.gt.to_array().iter())
                .zip(f.obs.to_array().iter().chain(f.gt.to_array().iter()))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-9, "round trip error {d}");
        }
    }

    #[test]
    fn augment_keeps_body_local_wrist() {
        let body = BodyModel::default();
        let gt = PoseState {
            q_u: SixDRR::from_rotation_matrix(&axis_rotation(&Vec3::new(1.0, 0.2, 0.0), 0.6)),
            q_l: SixDRR::from_rotation_matrix(&axis_rotation(&Vec3::new(0.0, 1.0, 0.3), -0.4)),
            q_h: heading_encode(0.9),
            ..PoseState::default()
        };
        let obs = Observation::from_slice(&[0.1; OBS_DIM]).unwrap();
        let f = LabeledFrame { t: 0.0, obs, gt };
        let before = f.gt.kinematics(&body).unwrap().local.wrist;
        for a in [0.3, 2.0, -1.2, 5.9] {
            let after = augment_yaw(&f, a).gt.kinematics(&body).unwrap().local.wrist;
            assert!((after - before).amax() < 1e-9);
        }
    }

    #[test]
    fn rates_from_finite_differences() {
        let prev = PoseState::default();
        let cur = PoseState {
            q_h: heading_encode(-3.1),
            ..PoseState::default()
        };
        let prev = PoseState {
            q_h: heading_encode(3.1),
            ..prev
        };
        let s = cur.with_rates_from(&prev, 0.02);
        let expected = wrap_angle(-3.1 - 3.1) / 0.02;
        assert!((s.dq_h - expected).abs() < 1e-9);
        assert!(s.dq_h.abs() < 5.0);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<_> = (0..100).map(|i| random_frame(&mut rng, i as f64 * 0.02)).collect();
        let mut buf = Vec::new();
        dataset_write(&frames, &mut buf).unwrap();
        let back = dataset_read(buf.as_slice()).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            for (x, y) in a.obs.to_array().iter().zip(b.obs.to_array().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.gt.to_array().iter().zip(b.gt.to_array().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_session_is_header_only() {
        let mut buf = Vec::new();
        dataset_write(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        let header: DatasetHeader = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header.columns.len(), 1 + OBS_DIM + STATE_DIM);
        assert_eq!(header.units.len(), header.columns.len());
        assert!(dataset_read(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_names_line_number() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<_> = (0..3).map(|i| random_frame(&mut rng, i as f64)).collect();
        let mut buf = Vec::new();
        dataset_write(&frames, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[2][..lines[2].len() / 2];
        lines[2] = cut;
        let broken = lines.join("\n");
        match dataset_read(broken.as_bytes()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_increasing_time_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames = vec![random_frame(&mut rng, 1.0), random_frame(&mut rng, 1.0)];
        let mut buf = Vec::new();
        dataset_write(&frames, &mut buf).unwrap();
        assert!(matches!(dataset_read(buf.as_slice()), Err(Error::Format { line: 3, .. })));
    }

    #[test]
    fn missing_header_rejected() {
        assert!(matches!(dataset_read(&b""[..]), Err(Error::Format { line: 1, .. })));
    }
}
