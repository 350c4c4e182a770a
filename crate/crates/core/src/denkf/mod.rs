//! Differentiable ensemble Kalman filter.
//!
//! Each step samples the transition model once per member, samples the
//! sensor model once per member, projects the prediction into observation
//! space, and applies the ensemble measurement update. The posterior mean is
//! the pose estimate; the member spread is the uncertainty signal.

mod models;
mod train;
pub mod update;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use models::{sigmoid, softplus, stack_history, EnsembleModels, FilterModels, LinearGaussian, Normalizer};
pub use train::{
    load_checkpoint, save_checkpoint, step_backward, step_forward, train, Checkpoint, EpochLosses, ModelGrads,
    StepForward, StepInputs, StepMasks, StepMode, TrainConfig, TrainReport, write_loss_csv, CHECKPOINT_VERSION,
};

/// Ensemble members (columns) for the last `window` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    history: VecDeque<DMatrix<f64>>,
    window: usize,
}

impl Ensemble {
    /// An empty ensemble that fills up as steps are pushed.
    pub fn empty(window: usize) -> Self {
        Self {
            history: VecDeque::with_capacity(window),
            window,
        }
    }

    /// Every history slot holds `x0` plus independent Gaussian jitter per
    /// member.
    pub fn init(x0: &[f64], members: usize, window: usize, jitter_std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if members < 2 {
            return Err(Error::Config(format!("ensemble needs at least 2 members, got {members}")));
        }
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        let mut ens = Self::empty(window);
        for _ in 0..window {
            let m = DMatrix::from_fn(x0.len(), members, |i, _| {
                let z: f64 = StandardNormal.sample(rng);
                x0[i] + jitter_std * z
            });
            ens.push(m);
        }
        Ok(ens)
    }

    pub fn push(&mut self, members: DMatrix<f64>) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(members);
    }

    pub fn is_warm(&self) -> bool {
        self.history.len() == self.window
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn members(&self) -> Option<&DMatrix<f64>> {
        self.history.back()
    }

    pub fn history(&self) -> Vec<&DMatrix<f64>> {
        self.history.iter().collect()
    }

    pub fn mean(&self) -> Option<DVector<f64>> {
        self.members().map(|m| m.column_mean())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub predicted_mean: DVector<f64>,
    pub innovation_norm: f64,
    pub gain_norm: f64,
    pub spread: DVector<f64>,
    pub cov_condition: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub mean: DVector<f64>,
    pub members: DMatrix<f64>,
    /// `None` during warm-up, when the sensor mean is returned directly.
    pub diagnostics: Option<StepDiagnostics>,
}

/// Transition samples for every member.
pub fn predict<M: EnsembleModels>(ens: &Ensemble, models: &M, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if !ens.is_warm() || ens.window() != models.window() {
        return Err(Error::HistoryNotWarm {
            have: ens.len(),
            need: models.window(),
        });
    }
    models.predict(&ens.history(), rng)
}

/// Sensor samples and their mean.
pub fn sensor_sample<M: EnsembleModels>(
    raw_window: &DVector<f64>,
    models: &M,
    members: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let need = models.window() * models.raw_dim();
    if raw_window.len() != need {
        return Err(Error::HistoryNotWarm {
            have: raw_window.len() / models.raw_dim().max(1),
            need: models.window(),
        });
    }
    let y = models.sensor(raw_window, members, rng)?;
    let mean = y.column_mean();
    Ok((y, mean))
}

/// One full predict/update step. The posterior is pushed into the history.
pub fn filter_step<M: EnsembleModels>(
    ens: &mut Ensemble,
    raw_window: &DVector<f64>,
    models: &M,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutput> {
    let x_pred = predict(ens, models, rng)?;
    let (y, y_mean) = sensor_sample(raw_window, models, x_pred.ncols(), rng)?;
    let hx = models.observe(&x_pred)?;
    let r = models.noise_diag(&y_mean)?;
    let terms = update::update(&x_pred, &hx, &y, &r)?;

    let diagnostics = StepDiagnostics {
        predicted_mean: x_pred.column_mean(),
        innovation_norm: (&y_mean - hx.column_mean()).norm(),
        gain_norm: terms.gain.norm(),
        spread: update::spread(&terms.posterior),
        cov_condition: terms.cond_estimate(),
    };
    let mean = terms.posterior.column_mean();
    let members = terms.posterior;
    ens.push(members.clone());
    Ok(StepOutput {
        mean,
        members,
        diagnostics: Some(diagnostics),
    })
}

/// Streaming filter over raw observation frames.
///
/// The first `window` frames are warm-up: the sensor model sees the window
/// padded with the first frame, its mean is returned as the estimate, and its
/// samples seed the member history.
pub struct DenkFilter<M> {
    models: M,
    members: usize,
    ensemble: Ensemble,
    raw: VecDeque<DVector<f64>>,
    rng: ChaCha8Rng,
}

impl<M: EnsembleModels> DenkFilter<M> {
    pub fn new(models: M, members: usize, seed: u64) -> Result<Self> {
        if members < 2 {
            return Err(Error::Config(format!("ensemble needs at least 2 members, got {members}")));
        }
        if models.obs_dim() != models.state_dim() {
            return Err(Error::ShapeMismatch {
                context: "observation and state dims",
                expected: models.state_dim(),
                got: models.obs_dim(),
            });
        }
        let window = models.window();
        Ok(Self {
            models,
            members,
            ensemble: Ensemble::empty(window),
            raw: VecDeque::with_capacity(window),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn models(&self) -> &M {
        &self.models
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn ensemble_size(&self) -> usize {
        self.members
    }

    pub fn reset(&mut self) {
        self.ensemble = Ensemble::empty(self.models.window());
        self.raw.clear();
    }

    fn raw_window(&self) -> DVector<f64> {
        let n = self.models.window();
        let d = self.models.raw_dim();
        let pad = n - self.raw.len();
        let first = &self.raw[0];
        let mut out = DVector::zeros(n * d);
        for k in 0..n {
            let frame = if k < pad { first } else { &self.raw[k - pad] };
            out.rows_mut(k * d, d).copy_from(frame);
        }
        out
    }

    pub fn push(&mut self, raw: &[f64]) -> Result<StepOutput> {
        let d = self.models.raw_dim();
        if raw.len() != d {
            return Err(Error::ShapeMismatch {
                context: "raw frame",
                expected: d,
                got: raw.len(),
            });
        }
        if self.raw.len() == self.models.window() {
            self.raw.pop_front();
        }
        self.raw.push_back(DVector::from_column_slice(raw));
        let window = self.raw_window();

        if self.ensemble.is_warm() {
            return filter_step(&mut self.ensemble, &window, &self.models, &mut self.rng);
        }
        let (y, mean) = sensor_sample(&window, &self.models, self.members, &mut self.rng)?;
        self.ensemble.push(y.clone());
        Ok(StepOutput {
            mean,
            members: y,
            diagnostics: None,
        })
    }
}
