//! One operator's live loop: pointer steering is turned into a synthetic arm
//! pose, sensed by the simulator through a raw device model, calibrated
//! against the first tick, filtered, and projected to an end-effector target.

use std::sync::Arc;

use iroco_core::control::{ee_target, Workspace};
use iroco_core::datamodel::{calibrate, CalibrationSnapshot, Observation, PoseState};
use iroco_core::denkf::{DenkFilter, EnsembleModels};
use iroco_core::eval::group_spread;
use iroco_core::rotkit::{axis_rotation, BodyModel, Heading, Quaternion, SixDRR, Vec3};
use iroco_core::synthgen::{NoiseConfig, SensorSimulator};
use iroco_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::protocol::{SteerEvent, StateFrame};

/// Wrist displacement in metres for a full pointer deflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerReach {
    pub up: f64,
    pub forward: f64,
}

impl Default for PointerReach {
    fn default() -> Self {
        Self { up: 0.4, forward: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub rate: f64,
    pub members: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub workspace: Workspace,
    pub body: BodyModel,
    pub reach: PointerReach,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            rate: 50.0,
            members: 32,
            seed: 0,
            noise: NoiseConfig::default(),
            workspace: Workspace::default(),
            body: BodyModel::default(),
            reach: PointerReach::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Config("tick rate must be positive".into()));
        }
        if self.members < 2 {
            return Err(Error::Config("sessions need at least 2 ensemble members".into()));
        }
        self.workspace.validate()?;
        self.body.validate()?;
        self.noise.validate()?;
        let b = &self.body;
        if b.rest_dir_upper != Vec3::new(0.0, -1.0, 0.0) || b.rest_dir_lower != Vec3::new(0.0, 0.0, 1.0) {
            return Err(Error::Config(
                "pointer steering needs the hanging-upper-arm, forward-forearm rest pose".into(),
            ));
        }
        Ok(())
    }
}

/// Arm pose whose wrist sits at the pointer's sagittal target.
///
/// The centered pointer is the rest pose. The target is offset from the
/// rest wrist by `reach`, pulled into the reachable annulus, and solved
/// with planar two-link IK about the lateral axis, taking the lower of the
/// two elbow positions.
pub fn pointer_pose(px: f64, py: f64, yaw: f64, body: &BodyModel, reach: &PointerReach) -> Result<PoseState> {
    let (l1, l2) = (body.upper_arm_len, body.lower_arm_len);
    // (y, z) of the wrist relative to the shoulder.
    let mut ty = -l1 + reach.up * py;
    let mut tz = l2 + reach.forward * px;
    let d = ty.hypot(tz);
    let lo = (l1 - l2).abs() + 1e-6;
    let hi = l1 + l2 - 1e-6;
    if d < 1e-12 {
        return Err(Error::DegenerateInput("pointer target at the shoulder"));
    }
    let dc = d.clamp(lo, hi);
    ty *= dc / d;
    tz *= dc / d;

    let (uy, uz) = (ty / dc, tz / dc);
    let a = (l1 * l1 - l2 * l2 + dc * dc) / (2.0 * dc);
    let h = (l1 * l1 - a * a).max(0.0).sqrt();
    let (ny, nz) = (-uz, uy);
    let c1 = (a * uy + h * ny, a * uz + h * nz);
    let c2 = (a * uy - h * ny, a * uz - h * nz);
    let (ey, ez) = if c1.0 <= c2.0 { c1 } else { c2 };

    let upper = (-ez).atan2(-ey);
    let lower = (-(ty - ey)).atan2(tz - ez);
    let turn = axis_rotation(&Vec3::y(), yaw);
    let q = |angle: f64| SixDRR::from_rotation_matrix(&(turn * axis_rotation(&Vec3::x(), angle)));
    Ok(PoseState {
        q_u: q(upper),
        q_l: q(lower),
        q_h: Heading::from_yaw(yaw),
        ..PoseState::default()
    })
}

/// Uncalibrated device readings: a fixed watch mounting rotation, a
/// compass offset, and ambient pressure on top of calibrated values.
#[derive(Debug, Clone, Copy)]
struct Device {
    mount: Quaternion,
    yaw_offset: f64,
    ambient: f64,
}

impl Device {
    fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xde71_ce);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let mount = Quaternion::new(g(), g(), g(), g()).normalized()?;
        Ok(Self {
            mount,
            yaw_offset: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            ambient: 1013.25 + rng.random_range(-20.0..20.0),
        })
    }

    fn read(&self, obs: &Observation) -> Result<(Quaternion, f64, f64)> {
        let rot = Quaternion::from_rotation_matrix(&obs.theta_sw.to_rotation_matrix()?);
        Ok((self.mount.mul(&rot), self.yaw_offset + obs.r_h.yaw()?, self.ambient + obs.rho))
    }
}

/// Single-threaded session state. Every output is a pure function of the
/// config, the models, and the sequence of `steer`/`recalibrate`/`tick`
/// calls.
pub struct Session<M> {
    id: String,
    cfg: SessionConfig,
    filter: DenkFilter<Arc<M>>,
    sim: SensorSimulator,
    device: Device,
    snapshot: Option<CalibrationSnapshot>,
    pointer: (f64, f64),
    yaw: f64,
    pending_yaw: f64,
    recalibrate: bool,
    ticks: u64,
    epoch: u64,
}

impl<M: EnsembleModels> Session<M> {
    pub fn open(id: impl Into<String>, models: Arc<M>, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let filter = DenkFilter::new(models, cfg.members, cfg.seed)?;
        Ok(Self {
            id: id.into(),
            sim: SensorSimulator::new(cfg.body, cfg.noise.clone(), cfg.rate, cfg.seed),
            device: Device::new(cfg.seed)?,
            filter,
            cfg,
            snapshot: None,
            pointer: (0.0, 0.0),
            yaw: 0.0,
            pending_yaw: 0.0,
            recalibrate: false,
            ticks: 0,
            epoch: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn snapshot(&self) -> Option<&CalibrationSnapshot> {
        self.snapshot.as_ref()
    }

    /// Holds the pointer until the next event and queues the heading change.
    pub fn steer(&mut self, ev: &SteerEvent) -> Result<()> {
        ev.validate().map_err(Error::Config)?;
        self.pointer = (ev.px, ev.py);
        self.pending_yaw += ev.dyaw;
        Ok(())
    }

    /// The next tick restarts from the rest frame: heading zero, a fresh
    /// snapshot, and an empty filter.
    pub fn recalibrate(&mut self) {
        self.recalibrate = true;
    }

    fn restart(&mut self) {
        self.epoch += 1;
        let seed = self.cfg.seed.wrapping_add(self.epoch);
        self.sim = SensorSimulator::new(self.cfg.body, self.cfg.noise.clone(), self.cfg.rate, seed);
        self.filter.reset();
        self.snapshot = None;
        self.yaw = 0.0;
        self.pending_yaw = 0.0;
        self.recalibrate = false;
    }

    pub fn tick(&mut self) -> Result<StateFrame> {
        if self.recalibrate {
            self.restart();
        }
        self.yaw += std::mem::take(&mut self.pending_yaw);
        let gt = pointer_pose(self.pointer.0, self.pointer.1, self.yaw, &self.cfg.body, &self.cfg.reach)?;
        let obs = self.sim.push(&gt)?;
        let (theta, yaw, rho) = self.device.read(&obs)?;
        let snap = match self.snapshot {
            Some(s) => s,
            None => *self.snapshot.insert(CalibrationSnapshot::new(theta, yaw, rho)?),
        };
        let (theta_sw, r_h, rho) = calibrate(&theta, yaw, rho, &snap);
        let calibrated = Observation {
            theta_sw,
            r_h,
            rho,
            ..obs
        };

        let out = match self.filter.push(&calibrated.to_array()) {
            Ok(out) => out,
            Err(e) => {
                self.filter.reset();
                return Err(e);
            }
        };
        let mean = PoseState::from_slice(out.mean.as_slice())?;
        let target = ee_target(&mean, &self.cfg.body, &self.cfg.workspace)?;
        let t = self.ticks as f64 / self.cfg.rate;
        self.ticks += 1;
        Ok(StateFrame {
            t,
            x: out.mean.iter().copied().collect(),
            spread: group_spread(&out.members),
            ee: target.position.into(),
            clamped: target.clamped,
            hz: self.cfg.rate,
            warmup: out.diagnostics.is_none(),
        })
    }
}
