//! End-to-end training of the filter sub-models.
//!
//! Each training step runs one full filter step with recorded dropout masks
//! and backpropagates three losses: the posterior-mean error, the transition
//! model's error on the window of previous sensor means, and the sensor
//! model's error. Gradients are truncated at the step boundary; the member
//! history is treated as input.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::models::{sigmoid, softplus, stack_history, FilterModels, Normalizer};
use super::update::{self, center, UpdateTerms};
use crate::datamodel::{augment_session, LabeledFrame, OBS_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::neural::{Adam, Dropout, MaskRecord, Mlp, MlpParams, MlpRecord, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Filter steps per optimizer update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub ensemble_size: usize,
    pub window: usize,
    pub seed: u64,
    pub width_divisor: usize,
    /// Filter steps per training segment, after the warm-start window.
    pub seq_len: usize,
    /// Std of the member jitter around ground truth at segment start.
    pub jitter_std: f64,
    /// Random yaw rotation per segment.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-4,
            dropout_rate: 0.1,
            ensemble_size: 32,
            window: 5,
            seed: 0,
            width_divisor: 1,
            seq_len: 50,
            jitter_std: 0.02,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// Reduced widths and a short schedule for quick end-to-end checks.
    pub fn smoke() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-3,
            width_divisor: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("window", self.window),
            ("width_divisor", self.width_divisor),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::Config("jitter_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Inputs of one training step.
#[derive(Debug, Clone)]
pub struct StepInputs {
    /// Member matrices for the last `window` steps, oldest first.
    pub history: Vec<DMatrix<f64>>,
    /// Flattened raw observation window, oldest frame first, unnormalized.
    pub raw_window: DVector<f64>,
    /// Flattened window of previous sensor means, oldest first.
    pub prior_means: DVector<f64>,
    pub target: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMasks {
    pub transition: MaskRecord,
    pub sensor: MaskRecord,
    pub auxiliary: MaskRecord,
}

pub enum StepMode<'a> {
    Sample(&'a mut ChaCha8Rng),
    Replay(&'a StepMasks),
}

pub struct StepForward {
    pub end2end: f64,
    pub transition_loss: f64,
    pub sensor_loss: f64,
    pub posterior: DMatrix<f64>,
    pub sensor_mean: DVector<f64>,
    pub masks: StepMasks,
    terms: UpdateTerms,
    noise_pre: DVector<f64>,
    aux_out: DVector<f64>,
    mean: DVector<f64>,
    target: DVector<f64>,
    traces: [Trace; 5],
}

impl StepForward {
    pub fn total_loss(&self) -> f64 {
        self.end2end + self.transition_loss + self.sensor_loss
    }
}

fn mse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn run(net: &Mlp, x: &DMatrix<f64>, rate: f64, mode: &mut StepMode<'_>, rec: impl Fn(&StepMasks) -> &MaskRecord) -> Result<(DMatrix<f64>, Trace)> {
    match mode {
        StepMode::Sample(rng) => net.forward(x, Dropout::Sample { rate, rng }),
        StepMode::Replay(masks) => net.forward(x, Dropout::Replay(rec(masks))),
    }
}

pub fn step_forward(models: &FilterModels, inputs: &StepInputs, mut mode: StepMode<'_>) -> Result<StepForward> {
    let rate = models.dropout_rate;
    let history: Vec<&DMatrix<f64>> = inputs.history.iter().collect();
    let members = history
        .first()
        .map(|h| h.ncols())
        .ok_or(Error::HistoryNotWarm { have: 0, need: models.window })?;

    let (x_pred, tf) = run(&models.transition, &stack_history(&history), rate, &mut mode, |m| &m.transition)?;
    let (y, ts) = run(
        &models.sensor,
        &models.sensor_input(&inputs.raw_window, members),
        rate,
        &mut mode,
        |m| &m.sensor,
    )?;
    let (aux, ta) = run(&models.transition, &column(&inputs.prior_means), rate, &mut mode, |m| &m.auxiliary)?;
    let (hx, th) = models.observation.forward(&x_pred, Dropout::Off)?;
    let y_mean = y.column_mean();
    let (z, tr) = models.noise.forward(&column(&y_mean), Dropout::Off)?;
    let noise_pre = z.column(0).into_owned();
    let r = noise_pre.map(softplus);

    let terms = update::update(&x_pred, &hx, &y, &r)?;
    let mean = terms.posterior.column_mean();
    let aux_out = aux.column(0).into_owned();

    let masks = StepMasks {
        transition: tf.masks.clone(),
        sensor: ts.masks.clone(),
        auxiliary: ta.masks.clone(),
    };
    Ok(StepForward {
        end2end: mse(&mean, &inputs.target),
        transition_loss: mse(&aux_out, &inputs.target),
        sensor_loss: mse(&y_mean, &inputs.target),
        posterior: terms.posterior.clone(),
        sensor_mean: y_mean,
        masks,
        terms,
        noise_pre,
        aux_out,
        mean,
        target: inputs.target.clone(),
        traces: [tf, ts, ta, th, tr],
    })
}

/// Parameter gradients for all four networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub transition: MlpParams,
    pub observation: MlpParams,
    pub noise: MlpParams,
    pub sensor: MlpParams,
}

impl ModelGrads {
    pub fn zeros(models: &FilterModels) -> Self {
        Self {
            transition: models.transition.params.zeros_like(),
            observation: models.observation.params.zeros_like(),
            noise: models.noise.params.zeros_like(),
            sensor: models.sensor.params.zeros_like(),
        }
    }

    pub fn accumulate(&mut self, other: &ModelGrads) {
        self.transition.add_scaled(&other.transition, 1.0);
        self.observation.add_scaled(&other.observation, 1.0);
        self.noise.add_scaled(&other.noise, 1.0);
        self.sensor.add_scaled(&other.sensor, 1.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.transition.scale(factor);
        self.observation.scale(factor);
        self.noise.scale(factor);
        self.sensor.scale(factor);
    }

    pub fn is_finite(&self) -> bool {
        self.transition.is_finite() && self.observation.is_finite() && self.noise.is_finite() && self.sensor.is_finite()
    }
}

/// Gradients of [`StepForward::total_loss`] with respect to all parameters.
pub fn step_backward(models: &FilterModels, fwd: &StepForward) -> Result<ModelGrads> {
    let [tf, ts, ta, th, tr] = &fwd.traces;
    let t = &fwd.terms;
    let s_dim = fwd.mean.len() as f64;
    let e = t.posterior.ncols() as f64;
    let em1 = e - 1.0;

    let g_mean = (&fwd.mean - &fwd.target) * (2.0 / s_dim);
    let g_post = DMatrix::from_fn(fwd.mean.len(), t.posterior.ncols(), |i, _| g_mean[i] / e);

    // X = X̃ + K·D with D = Y − HX̃.
    let mut g_pred = g_post.clone();
    let g_gain = &g_post * t.innovation.transpose();
    let g_innov = t.gain.transpose() * &g_post;
    let mut g_y = g_innov.clone();
    let mut g_hx = -g_innov;

    // K = P·S⁻¹ with P = A·HAᵀ/(E−1).
    let g_p = t.solve(&g_gain.transpose()).transpose();
    let g_s = -t.solve(&(g_gain.transpose() * &t.gain)).transpose();
    let ha = &t.obs_anomalies;
    let g_a = &g_p * ha / em1;
    let mut g_ha = g_p.transpose() * &t.anomalies / em1;
    g_ha += (&g_s + g_s.transpose()) * ha / em1;
    g_pred += center(&g_a);
    g_hx += center(&g_ha);

    // Noise diagonal: softplus of the noise network on the sensor mean.
    let g_z = DVector::from_fn(fwd.noise_pre.len(), |i, _| g_s[(i, i)] * sigmoid(fwd.noise_pre[i]));
    let noise = models.noise.backward(tr, &column(&g_z))?;
    let mut g_ymean = noise.input.column(0).into_owned();
    g_ymean += (&fwd.sensor_mean - &fwd.target) * (2.0 / s_dim);
    for mut col in g_y.column_iter_mut() {
        col.axpy(1.0 / e, &g_ymean, 1.0);
    }

    let observation = models.observation.backward(th, &g_hx)?;
    g_pred += &observation.input;
    let mut transition = models.transition.backward(tf, &g_pred)?.params;
    let sensor = models.sensor.backward(ts, &g_y)?.params;

    let g_aux = (&fwd.aux_out - &fwd.target) * (2.0 / s_dim);
    let aux = models.transition.backward(ta, &column(&g_aux))?;
    transition.add_scaled(&aux.params, 1.0);

    Ok(ModelGrads {
        transition,
        observation: observation.params,
        noise: noise.params,
        sensor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub end2end: f64,
    pub transition: f64,
    pub sensor: f64,
}

impl EpochLosses {
    pub fn total(&self) -> f64 {
        self.end2end + self.transition + self.sensor
    }
}

pub fn write_loss_csv<W: Write>(losses: &[EpochLosses], mut w: W) -> Result<()> {
    writeln!(w, "epoch,end2end,l_f,l_s")?;
    for l in losses {
        writeln!(w, "{},{},{},{}", l.epoch, l.end2end, l.transition, l.sensor)?;
    }
    Ok(())
}

pub struct TrainReport {
    pub models: FilterModels,
    pub losses: Vec<EpochLosses>,
}

impl TrainReport {
    pub fn write_loss_csv<W: Write>(&self, w: W) -> Result<()> {
        write_loss_csv(&self.losses, w)
    }
}

struct Segment {
    session: usize,
    start: usize,
    len: usize,
}

fn segments(sessions: &[Vec<LabeledFrame>], window: usize, seq_len: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        let mut start = 0;
        while start + window < s.len() {
            let len = (window + seq_len).min(s.len() - start);
            out.push(Segment { session: i, start, len });
            start += seq_len;
        }
    }
    out
}

struct Optimizers {
    transition: Adam,
    observation: Adam,
    noise: Adam,
    sensor: Adam,
}

impl Optimizers {
    fn apply(&mut self, models: &mut FilterModels, grads: &ModelGrads, lr: f64) {
        self.transition.update(&mut models.transition.params, &grads.transition, lr);
        self.observation.update(&mut models.observation.params, &grads.observation, lr);
        self.noise.update(&mut models.noise.params, &grads.noise, lr);
        self.sensor.update(&mut models.sensor.params, &grads.sensor, lr);
    }
}

/// Trains fresh models on labeled sessions. `progress` is called after each
/// epoch.
pub fn train(
    sessions: &[Vec<LabeledFrame>],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLosses),
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = cfg.window;
    let segs = segments(sessions, n, cfg.seq_len);
    if segs.is_empty() {
        return Err(Error::DataTooShort { need: n + 1 });
    }

    let mut models = FilterModels::new(n, cfg.width_divisor, cfg.dropout_rate, cfg.seed)?;
    let raw: Vec<[f64; OBS_DIM]> = sessions.iter().flatten().map(|f| f.obs.to_array()).collect();
    models.normalizer = Normalizer::fit(raw.iter().map(|r| r.as_slice()), OBS_DIM);

    let mut opt = Optimizers {
        transition: Adam::default(),
        observation: Adam::default(),
        noise: Adam::default(),
        sensor: Adam::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a41_17e5);
    let mut order: Vec<usize> = (0..segs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = ModelGrads::zeros(&models);
        let mut in_batch = 0usize;
        let mut sums = [0.0; 3];
        let mut steps = 0usize;

        for &si in &order {
            let seg = &segs[si];
            let slice = &sessions[seg.session][seg.start..seg.start + seg.len];
            let frames = if cfg.augment {
                augment_session(slice, rng.random_range(0.0..std::f64::consts::TAU))
            } else {
                slice.to_vec()
            };
            let gt: Vec<DVector<f64>> = frames.iter().map(|f| DVector::from_row_slice(&f.gt.to_array())).collect();
            let obs: Vec<[f64; OBS_DIM]> = frames.iter().map(|f| f.obs.to_array()).collect();

            let mut history: VecDeque<DMatrix<f64>> = gt[..n]
                .iter()
                .map(|x| {
                    DMatrix::from_fn(STATE_DIM, cfg.ensemble_size, |i, _| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x[i] + cfg.jitter_std * z
                    })
                })
                .collect();
            let mut prior: VecDeque<DVector<f64>> = gt[..n].iter().cloned().collect();

            for j in n..frames.len() {
                let mut raw_window = DVector::zeros(n * OBS_DIM);
                for k in 0..n {
                    raw_window.rows_mut(k * OBS_DIM, OBS_DIM).copy_from_slice(&obs[j + 1 - n + k]);
                }
                let mut prior_means = DVector::zeros(n * STATE_DIM);
                for (k, p) in prior.iter().enumerate() {
                    prior_means.rows_mut(k * STATE_DIM, STATE_DIM).copy_from(p);
                }
                let inputs = StepInputs {
                    history: history.iter().cloned().collect(),
                    raw_window,
                    prior_means,
                    target: gt[j].clone(),
                };
                let fwd = step_forward(&models, &inputs, StepMode::Sample(&mut rng))?;
                let grads = step_backward(&models, &fwd)?;
                if !grads.is_finite() {
                    return Err(Error::SolveFailure);
                }
                acc.accumulate(&grads);
                in_batch += 1;
                sums[0] += fwd.end2end;
                sums[1] += fwd.transition_loss;
                sums[2] += fwd.sensor_loss;
                steps += 1;

                history.pop_front();
                history.push_back(fwd.posterior);
                prior.pop_front();
                prior.push_back(fwd.sensor_mean);

                if in_batch == cfg.batch_size {
                    acc.scale(1.0 / in_batch as f64);
                    opt.apply(&mut models, &acc, cfg.learning_rate);
                    acc = ModelGrads::zeros(&models);
                    in_batch = 0;
                }
            }
        }
        if in_batch > 0 {
            acc.scale(1.0 / in_batch as f64);
            opt.apply(&mut models, &acc, cfg.learning_rate);
        }

        let k = steps.max(1) as f64;
        let l = EpochLosses {
            epoch: epoch + 1,
            end2end: sums[0] / k,
            transition: sums[1] / k,
            sensor: sums[2] / k,
        };
        log::info!(
            "epoch {} end2end {:.5} l_f {:.5} l_s {:.5}",
            l.epoch,
            l.end2end,
            l.transition,
            l.sensor
        );
        progress(&l);
        losses.push(l);
    }
    Ok(TrainReport { models, losses })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized filter: the four networks, the input normalizer, and the
/// training configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub window: usize,
    pub ensemble_size: usize,
    pub dropout_rate: f64,
    pub normalizer: Normalizer,
    pub config: TrainConfig,
    pub transition: MlpRecord,
    pub observation: MlpRecord,
    pub noise: MlpRecord,
    pub sensor: MlpRecord,
}

impl Checkpoint {
    pub fn new(models: &FilterModels, config: &TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            window: models.window,
            ensemble_size: config.ensemble_size,
            dropout_rate: models.dropout_rate,
            normalizer: models.normalizer.clone(),
            config: config.clone(),
            transition: models.transition.to_record(),
            observation: models.observation.to_record(),
            noise: models.noise.to_record(),
            sensor: models.sensor.to_record(),
        }
    }

    pub fn models(&self) -> Result<FilterModels> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let models = FilterModels {
            transition: Mlp::from_record(&self.transition)?,
            observation: Mlp::from_record(&self.observation)?,
            noise: Mlp::from_record(&self.noise)?,
            sensor: Mlp::from_record(&self.sensor)?,
            normalizer: self.normalizer.clone(),
            window: self.window,
            dropout_rate: self.dropout_rate,
        };
        models
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(models)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, ckpt).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Checkpoint(e.to_string()))
}
