use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{OBS_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::neural::{Dropout, Mlp, MlpSpec};

/// The four sub-models of the filter, behind a trait so that analytic
/// stand-ins can drive the same filter step.
pub trait EnsembleModels {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn raw_dim(&self) -> usize;
    fn window(&self) -> usize;

    /// One stochastic transition sample per member. `history` holds the last
    /// `window` member matrices, oldest first.
    fn predict(&self, history: &[&DMatrix<f64>], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>>;

    /// `members` stochastic sensor samples for a flattened raw window
    /// (oldest frame first).
    fn sensor(&self, raw_window: &DVector<f64>, members: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>>;

    /// Column-wise projection into observation space.
    fn observe(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Positive measurement-noise diagonal for a sensor mean.
    fn noise_diag(&self, sensor_mean: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<M: EnsembleModels + ?Sized> EnsembleModels for std::sync::Arc<M> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }

    fn raw_dim(&self) -> usize {
        (**self).raw_dim()
    }

    fn window(&self) -> usize {
        (**self).window()
    }

    fn predict(&self, history: &[&DMatrix<f64>], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        (**self).predict(history, rng)
    }

    fn sensor(&self, raw_window: &DVector<f64>, members: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        (**self).sensor(raw_window, members, rng)
    }

    fn observe(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).observe(members)
    }

    fn noise_diag(&self, sensor_mean: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).noise_diag(sensor_mean)
    }
}

/// Stacks member histories into transition-model inputs, one column per
/// member with the oldest frame first.
pub fn stack_history(history: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let dim = history[0].nrows();
    let e = history[0].ncols();
    let mut out = DMatrix::zeros(dim * history.len(), e);
    for (k, h) in history.iter().enumerate() {
        out.rows_mut(k * dim, dim).copy_from(h);
    }
    out
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-feature affine normalization of raw sensor frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(frames: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for f in frames {
            n += 1;
            for i in 0..dim {
                sum[i] += f[i];
                sq[i] += f[i] * f[i];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / nf - m * m).max(0.0).sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes a flattened window of frames in place.
    pub fn apply(&self, window: &mut DVector<f64>) {
        let d = self.dim();
        for (i, v) in window.iter_mut().enumerate() {
            let k = i % d;
            *v = (*v - self.mean[k]) / self.std[k];
        }
    }
}

/// The learned transition, observation, noise, and sensor networks.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModels {
    pub transition: Mlp,
    pub observation: Mlp,
    pub noise: Mlp,
    pub sensor: Mlp,
    pub normalizer: Normalizer,
    pub window: usize,
    pub dropout_rate: f64,
}

impl FilterModels {
    /// Fresh networks with the standard architectures, widths divided by
    /// `width_divisor`.
    pub fn new(window: usize, width_divisor: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            transition: Mlp::new(MlpSpec::transition(window * STATE_DIM, STATE_DIM, width_divisor), &mut rng)?,
            observation: Mlp::new(MlpSpec::observation(STATE_DIM, STATE_DIM, width_divisor), &mut rng)?,
            noise: Mlp::new(MlpSpec::noise(STATE_DIM, width_divisor), &mut rng)?,
            sensor: Mlp::new(MlpSpec::sensor(window * OBS_DIM, STATE_DIM, width_divisor), &mut rng)?,
            normalizer: Normalizer::identity(OBS_DIM),
            window,
            dropout_rate,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.window;
        let checks = [
            ("transition input", self.transition.input_dim(), n * STATE_DIM),
            ("transition output", self.transition.output_dim(), STATE_DIM),
            ("observation input", self.observation.input_dim(), STATE_DIM),
            ("observation output", self.observation.output_dim(), STATE_DIM),
            ("noise input", self.noise.input_dim(), STATE_DIM),
            ("noise output", self.noise.output_dim(), STATE_DIM),
            ("sensor input", self.sensor.input_dim(), n * OBS_DIM),
            ("sensor output", self.sensor.output_dim(), STATE_DIM),
            ("normalizer", self.normalizer.dim(), OBS_DIM),
        ];
        for (context, got, expected) in checks {
            if got != expected {
                return Err(Error::ShapeMismatch { context, expected, got });
            }
        }
        if self.normalizer.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Checkpoint("normalizer std must be positive".into()));
        }
        Ok(())
    }

    /// Sensor-model input: normalized window replicated once per member.
    pub fn sensor_input(&self, raw_window: &DVector<f64>, members: usize) -> DMatrix<f64> {
        let mut w = raw_window.clone();
        self.normalizer.apply(&mut w);
        DMatrix::from_fn(w.len(), members, |i, _| w[i])
    }

    fn dropout<'a>(&self, rng: &'a mut ChaCha8Rng) -> Dropout<'a> {
        Dropout::Sample {
            rate: self.dropout_rate,
            rng,
        }
    }
}

impl EnsembleModels for FilterModels {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn obs_dim(&self) -> usize {
        STATE_DIM
    }

    fn raw_dim(&self) -> usize {
        OBS_DIM
    }

    fn window(&self) -> usize {
        self.window
    }

    fn predict(&self, history: &[&DMatrix<f64>], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let input = stack_history(history);
        Ok(self.transition.forward(&input, self.dropout(rng))?.0)
    }

    fn sensor(&self, raw_window: &DVector<f64>, members: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        if raw_window.len() != self.sensor.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "raw window",
                expected: self.sensor.input_dim(),
                got: raw_window.len(),
            });
        }
        let input = self.sensor_input(raw_window, members);
        Ok(self.sensor.forward(&input, self.dropout(rng))?.0)
    }

    fn observe(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.observation.predict(members)
    }

    fn noise_diag(&self, sensor_mean: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.noise.predict(&DMatrix::from_column_slice(sensor_mean.len(), 1, sensor_mean.as_slice()))?;
        Ok(DVector::from_iterator(z.nrows(), z.column(0).iter().map(|v| softplus(*v))))
    }
}

/// Linear-Gaussian stand-in: `x_t = F·x_{t−1} + w`, `y_t = H·x_t + v`, with
/// fixed Gaussian noise injected in place of dropout. The raw input is the
/// measurement itself; sensor samples perturb the newest raw frame by `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub transition: DMatrix<f64>,
    pub observation: DMatrix<f64>,
    pub process_std: f64,
    pub measurement_std: f64,
    pub window: usize,
}

impl LinearGaussian {
    fn noise(&self, rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
    }
}

impl EnsembleModels for LinearGaussian {
    fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    fn raw_dim(&self) -> usize {
        self.observation.nrows()
    }

    fn window(&self) -> usize {
        self.window
    }

    fn predict(&self, history: &[&DMatrix<f64>], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let last = history.last().ok_or(Error::HistoryNotWarm {
            have: 0,
            need: self.window,
        })?;
        let e = last.ncols();
        Ok(&self.transition * *last + self.noise(self.state_dim(), e, self.process_std, rng))
    }

    fn sensor(&self, raw_window: &DVector<f64>, members: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let o = self.obs_dim();
        if raw_window.len() != o * self.window {
            return Err(Error::ShapeMismatch {
                context: "raw window",
                expected: o * self.window,
                got: raw_window.len(),
            });
        }
        let y = raw_window.rows(raw_window.len() - o, o);
        let mut out = self.noise(o, members, self.measurement_std, rng);
        for mut col in out.column_iter_mut() {
            col += y;
        }
        Ok(out)
    }

    fn observe(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.observation * members)
    }

    fn noise_diag(&self, _sensor_mean: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(self.obs_dim(), self.measurement_std.powi(2)))
    }
}
