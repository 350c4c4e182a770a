//! Synthetic arm/heading trajectories and the sensor stream they would
//! produce on a wrist-worn watch and a pocketed phone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    LabeledFrame, Observation, PoseState, VelocityIntegrator, VelocityMode,
};
use crate::error::{Error, Result};
use crate::rotkit::{
    axis_rotation, heading_encode, rotation_log, yaw_rotation, BodyModel, Quaternion,
    RotationMatrix, SixDRR, Vec3,
};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub duration: f64,
    pub rate: f64,
    pub seed: u64,
    /// Sinusoid amplitude range per joint axis (rad).
    pub amp_min: f64,
    pub amp_max: f64,
    /// Sinusoid frequency range (Hz).
    pub freq_min: f64,
    pub freq_max: f64,
    /// Sinusoids summed per joint axis.
    pub components: usize,
    /// Largest constant per-axis joint offset (rad).
    pub offset_max: f64,
    /// Bound on the heading rate (rad/s).
    pub heading_drift: f64,
    /// Highest frequency in the heading-rate mixture (Hz).
    pub heading_freq_max: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            rate: 50.0,
            seed: 0,
            amp_min: 0.1,
            amp_max: 0.5,
            freq_min: 0.1,
            freq_max: 0.8,
            components: 2,
            offset_max: 0.3,
            heading_drift: 0.6,
            heading_freq_max: 0.15,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.duration > 0.0) {
            return Err(Error::Config("rate and duration must be positive".into()));
        }
        if self.amp_min < 0.0 || self.amp_max < self.amp_min {
            return Err(Error::Config("invalid amplitude range".into()));
        }
        if self.freq_min < 0.0 || self.freq_max < self.freq_min {
            return Err(Error::Config("invalid frequency range".into()));
        }
        if self.heading_drift < 0.0 || self.heading_freq_max < 0.0 || self.offset_max < 0.0 {
            return Err(Error::Config("heading and offset settings must be non-negative".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration * self.rate).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub theta_sw: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub phi: f64,
    pub rho: f64,
    pub r_h: f64,
    /// Pressure change per metre of height (hPa/m).
    pub pressure_scale: f64,
    pub velocity_mode: VelocityMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            theta_sw: 0.02,
            alpha: 0.3,
            gamma: 0.1,
            phi: 0.05,
            rho: 0.05,
            r_h: 0.03,
            pressure_scale: 0.12,
            velocity_mode: VelocityMode::PerInterval,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            theta_sw: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            phi: 0.0,
            rho: 0.0,
            r_h: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.theta_sw,
            self.alpha,
            self.gamma,
            self.phi,
            self.rho,
            self.r_h,
            self.pressure_scale,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("noise settings must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Sinusoid {
    fn eval(&self, t: f64) -> f64 {
        self.amp * (std::f64::consts::TAU * self.freq * t + self.phase).sin()
    }
}

#[derive(Debug, Clone)]
struct JointMotion {
    offsets: [f64; 3],
    axes: [Vec<Sinusoid>; 3],
}

impl JointMotion {
    fn sample(cfg: &MotionConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut axis = || {
            (0..cfg.components)
                .map(|_| Sinusoid {
                    amp: uniform(cfg.amp_min, cfg.amp_max),
                    freq: uniform(cfg.freq_min, cfg.freq_max),
                    phase: uniform(0.0, std::f64::consts::TAU),
                })
                .collect::<Vec<_>>()
        };
        let axes = [axis(), axis(), axis()];
        let offsets = [
            uniform(-cfg.offset_max, cfg.offset_max),
            uniform(-cfg.offset_max, cfg.offset_max),
            uniform(-cfg.offset_max, cfg.offset_max),
        ];
        Self { offsets, axes }
    }

    fn rotation(&self, t: f64) -> RotationMatrix {
        let angle = |i: usize| self.offsets[i] + self.axes[i].iter().map(|s| s.eval(t)).sum::<f64>();
        axis_rotation(&Vec3::x(), angle(0))
            * axis_rotation(&Vec3::y(), angle(1))
            * axis_rotation(&Vec3::z(), angle(2))
    }
}

/// Heading whose rate is a bounded mixture: a constant bias plus slow
/// sinusoids, with total weight at most one times the drift bound.
#[derive(Debug, Clone)]
struct HeadingMotion {
    drift: f64,
    bias: f64,
    terms: Vec<Sinusoid>,
}

impl HeadingMotion {
    fn sample(cfg: &MotionConfig, rng: &mut ChaCha8Rng) -> Self {
        let bias = rng.random_range(-0.5..0.5);
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let share = 1.0 - f64::abs(bias);
        let terms = raw
            .iter()
            .map(|w| Sinusoid {
                amp: w / total * share,
                freq: if cfg.heading_freq_max > 0.0 {
                    rng.random_range(0.2 * cfg.heading_freq_max..=cfg.heading_freq_max)
                } else {
                    0.0
                },
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        Self {
            drift: cfg.heading_drift,
            bias,
            terms,
        }
    }

    /// Closed-form integral of the rate, zero at t = 0.
    fn yaw(&self, t: f64) -> f64 {
        let mut acc = self.bias * t;
        for s in &self.terms {
            if s.freq > 0.0 {
                let w = std::f64::consts::TAU * s.freq;
                acc += s.amp / w * (s.phase.cos() - (w * t + s.phase).cos());
            } else {
                acc += s.amp * s.phase.sin() * t;
            }
        }
        self.drift * acc
    }
}

/// A sampled state sequence at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rate: f64,
    pub states: Vec<PoseState>,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }
}

/// Generates a smooth arm and heading trajectory.
///
/// Each limb's body-local rotation is a product of per-axis rotations whose
/// angles are seeded sinusoid mixtures; world-frame limb rotations are the
/// body-local ones turned by the heading yaw.
pub fn gen_trajectory(cfg: &MotionConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let upper = JointMotion::sample(cfg, &mut rng);
    let lower = JointMotion::sample(cfg, &mut rng);
    let heading = HeadingMotion::sample(cfg, &mut rng);
    let dt = 1.0 / cfg.rate;

    let mut states: Vec<PoseState> = (0..cfg.frames())
        .map(|i| {
            let t = i as f64 * dt;
            let yaw = heading.yaw(t);
            let ry = yaw_rotation(yaw);
            PoseState {
                q_u: SixDRR::from_rotation_matrix(&(ry * upper.rotation(t))),
                q_l: SixDRR::from_rotation_matrix(&(ry * lower.rotation(t))),
                q_h: heading_encode(yaw),
                ..PoseState::default()
            }
        })
        .collect();
    for i in (1..states.len()).rev() {
        states[i] = states[i].with_rates_from(&states[i - 1], dt);
    }
    if states.len() > 1 {
        let s1 = states[1];
        states[0].dq_u = s1.dq_u;
        states[0].dq_l = s1.dq_l;
        states[0].dq_h = s1.dq_h;
    }
    Ok(Trajectory {
        rate: cfg.rate,
        states,
    })
}

/// Streaming inverse sensor model: one observation per pushed state.
///
/// Accelerations use the backward second difference of the world wrist
/// position and are zero until three states have been seen; the gyroscope
/// is zero on the first state.
#[derive(Debug, Clone)]
pub struct SensorSimulator {
    body: BodyModel,
    noise: NoiseConfig,
    dt: f64,
    rng: ChaCha8Rng,
    wrists: Vec<Vec3>,
    prev_lower: Option<RotationMatrix>,
    start_height: Option<f64>,
    velocity: VelocityIntegrator,
}

impl SensorSimulator {
    pub fn new(body: BodyModel, noise: NoiseConfig, rate: f64, seed: u64) -> Self {
        let velocity = VelocityIntegrator::new(noise.velocity_mode);
        Self {
            body,
            noise,
            dt: 1.0 / rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            wrists: Vec::with_capacity(3),
            prev_lower: None,
            start_height: None,
            velocity,
        }
    }

    fn gauss3(&mut self, std: f64) -> Vec3 {
        if std == 0.0 {
            return Vec3::zeros();
        }
        let n = Normal::new(0.0, std).expect("finite std");
        Vec3::new(
            n.sample(&mut self.rng),
            n.sample(&mut self.rng),
            n.sample(&mut self.rng),
        )
    }

    fn gauss(&mut self, std: f64) -> f64 {
        if std == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, std).expect("finite std").sample(&mut self.rng)
    }

    pub fn push(&mut self, state: &PoseState) -> Result<Observation> {
        let r_l = state.q_l.to_rotation_matrix()?;
        let wrist = state.kinematics(&self.body)?.world.wrist;
        let dt = self.dt;

        let theta_noise = self.gauss3(self.noise.theta_sw);
        let theta_sw = if self.noise.theta_sw == 0.0 {
            state.q_l
        } else {
            let r = Quaternion::from_rotation_vector(&theta_noise).to_rotation_matrix();
            SixDRR::from_rotation_matrix(&(r * r_l))
        };

        let gamma = r_l.transpose() * Vec3::new(0.0, -GRAVITY, 0.0) + self.gauss3(self.noise.gamma);

        let omega = match self.prev_lower {
            Some(prev) => rotation_log(&(prev.transpose() * r_l)) / dt,
            None => Vec3::zeros(),
        };
        let phi = omega + self.gauss3(self.noise.phi);
        self.prev_lower = Some(r_l);

        if self.wrists.len() == 3 {
            self.wrists.remove(0);
        }
        self.wrists.push(wrist);
        let accel_world = if self.wrists.len() == 3 {
            (self.wrists[2] - 2.0 * self.wrists[1] + self.wrists[0]) / (dt * dt)
        } else {
            Vec3::zeros()
        };
        let alpha = r_l.transpose() * accel_world + self.gauss3(self.noise.alpha);
        let v = self.velocity.push(&alpha, dt);

        let h0 = *self.start_height.get_or_insert(wrist.y);
        let rho = -self.noise.pressure_scale * (wrist.y - h0) + self.gauss(self.noise.rho);

        let r_h = if self.noise.r_h == 0.0 {
            state.q_h
        } else {
            heading_encode(state.q_h.yaw()? + self.gauss(self.noise.r_h))
        };

        Ok(Observation {
            dt,
            theta_sw,
            v,
            alpha,
            gamma,
            phi,
            rho,
            r_h,
        })
    }
}

pub fn simulate_sensors(
    traj: &Trajectory,
    body: &BodyModel,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<Observation>> {
    if traj.states.len() < 3 {
        return Err(Error::TooShort {
            need: 3,
            got: traj.states.len(),
        });
    }
    noise.validate()?;
    let mut sim = SensorSimulator::new(*body, noise.clone(), traj.rate, seed);
    traj.states.iter().map(|s| sim.push(s)).collect()
}

/// Trajectory plus simulated sensors as labeled frames.
pub fn gen_session(
    motion: &MotionConfig,
    noise: &NoiseConfig,
    body: &BodyModel,
) -> Result<Vec<LabeledFrame>> {
    let traj = gen_trajectory(motion)?;
    // Sensor noise draws from a stream independent of the motion stream.
    let obs = simulate_sensors(&traj, body, noise, motion.seed ^ 0x5eed_0b5e)?;
    let dt = traj.dt();
    Ok(traj
        .states
        .iter()
        .zip(obs)
        .enumerate()
        .map(|(i, (gt, obs))| LabeledFrame {
            t: i as f64 * dt,
            obs,
            gt: *gt,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let cfg = MotionConfig {
            duration: 2.0,
            seed: 11,
            ..MotionConfig::default()
        };
        assert_eq!(gen_trajectory(&cfg).unwrap(), gen_trajectory(&cfg).unwrap());
        let other = MotionConfig { seed: 12, ..cfg.clone() };
        assert_ne!(gen_trajectory(&cfg).unwrap(), gen_trajectory(&other).unwrap());
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let cfg = MotionConfig {
            duration: 1.0,
            amp_min: 0.0,
            amp_max: 0.0,
            heading_drift: 0.0,
            ..MotionConfig::default()
        };
        let traj = gen_trajectory(&cfg).unwrap();
        let first = traj.states[0];
        for s in &traj.states {
            assert_eq!(s.q_u, first.q_u);
            assert_eq!(s.q_l, first.q_l);
            assert_eq!(s.q_h, first.q_h);
            assert!(s.dq_u.iter().chain(s.dq_l.iter()).all(|v| *v == 0.0));
            assert_eq!(s.dq_h, 0.0);
        }
    }

    #[test]
    fn static_pose_statics() {
        let traj = Trajectory {
            rate: 50.0,
            states: vec![PoseState::default(); 5],
        };
        let obs = simulate_sensors(&traj, &BodyModel::default(), &NoiseConfig::noiseless(), 0)
            .unwrap();
        for o in &obs {
            assert_eq!(o.alpha, Vec3::zeros());
            assert_eq!(o.phi, Vec3::zeros());
            assert_eq!(o.rho, 0.0);
            assert!((o.gamma - Vec3::new(0.0, -GRAVITY, 0.0)).amax() < 1e-12);
            assert!((o.dt - 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn raised_wrist_lowers_pressure() {
        // Lifting the whole arm by rotating the forearm from forward to up
        // raises the wrist by exactly the forearm length.
        let body = BodyModel {
            lower_arm_len: 1.0,
            ..BodyModel::default()
        };
        let up = SixDRR::from_rotation_matrix(&axis_rotation(&Vec3::x(), -std::f64::consts::FRAC_PI_2));
        let raised = PoseState {
            q_l: up,
            ..PoseState::default()
        };
        let traj = Trajectory {
            rate: 50.0,
            states: vec![PoseState::default(), PoseState::default(), raised],
        };
        let obs = simulate_sensors(&traj, &body, &NoiseConfig::noiseless(), 0).unwrap();
        assert!((obs[2].rho + 0.12).abs() < 1e-12);
    }

    #[test]
    fn too_short_rejected() {
        let traj = Trajectory {
            rate: 50.0,
            states: vec![PoseState::default(); 2],
        };
        assert!(matches!(
            simulate_sensors(&traj, &BodyModel::default(), &NoiseConfig::default(), 0),
            Err(Error::TooShort { need: 3, got: 2 })
        ));
    }

    #[test]
    fn noiseless_watch_orientation_is_lower_arm() {
        let cfg = MotionConfig {
            duration: 3.0,
            seed: 5,
            ..MotionConfig::default()
        };
        let frames = gen_session(&cfg, &NoiseConfig::noiseless(), &BodyModel::default()).unwrap();
        for f in &frames {
            assert_eq!(f.obs.theta_sw, f.gt.q_l);
            assert_eq!(f.obs.r_h, f.gt.q_h);
        }
    }

    #[test]
    fn gravity_magnitude_is_physical() {
        let cfg = MotionConfig {
            duration: 5.0,
            seed: 9,
            ..MotionConfig::default()
        };
        let frames = gen_session(&cfg, &NoiseConfig::default(), &BodyModel::default()).unwrap();
        assert!(frames.iter().all(|f| (8.0..=12.0).contains(&f.obs.gamma.norm())));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = MotionConfig {
            rate: 0.0,
            ..MotionConfig::default()
        };
        assert!(gen_trajectory(&cfg).is_err());
        let noise = NoiseConfig {
            alpha: -1.0,
            ..NoiseConfig::default()
        };
        assert!(noise.validate().is_err());
    }
}
