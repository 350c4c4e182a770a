//! Small dense networks with dropout-sampled forward passes, reverse-mode
//! gradients, and an Adam optimizer.
//!
//! Batches are column-major: an input of shape `(in_dim, batch)` produces an
//! output of shape `(out_dim, batch)`. Dropout on stochastic layers uses
//! inverted scaling, so the expected stochastic output equals the
//! deterministic one, and every sampled mask is kept in the [`Trace`] so
//! the same function can be replayed or differentiated later.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    /// Dropout is sampled on this layer's output in stochastic mode.
    pub stochastic: bool,
}

impl LayerSpec {
    pub fn snn(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Relu,
            stochastic: true,
        }
    }

    pub fn fc(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Relu,
            stochastic: false,
        }
    }

    pub fn linear(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Linear,
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

fn scaled(width: usize, divisor: usize) -> usize {
    (width / divisor.max(1)).max(1)
}

impl MlpSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input_dim, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layers.is_empty() {
            return Err(Error::Config("network needs an input and at least one layer".into()));
        }
        if self.layers.iter().any(|l| l.width == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let last = self.layers.last().expect("non-empty");
        if last.activation != Activation::Linear || last.stochastic {
            return Err(Error::Config("output layer must be linear and deterministic".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    /// Transition model: SNN(256), SNN(512), fc(S).
    pub fn transition(input_dim: usize, state_dim: usize, divisor: usize) -> Self {
        Self {
            input_dim,
            layers: vec![
                LayerSpec::snn(scaled(256, divisor)),
                LayerSpec::snn(scaled(512, divisor)),
                LayerSpec::linear(state_dim),
            ],
        }
    }

    /// Observation model: 2×fc(32), 2×fc(64), fc(O).
    pub fn observation(state_dim: usize, obs_dim: usize, divisor: usize) -> Self {
        Self {
            input_dim: state_dim,
            layers: vec![
                LayerSpec::fc(scaled(32, divisor)),
                LayerSpec::fc(scaled(32, divisor)),
                LayerSpec::fc(scaled(64, divisor)),
                LayerSpec::fc(scaled(64, divisor)),
                LayerSpec::linear(obs_dim),
            ],
        }
    }

    /// Measurement-noise model: 2×fc(16), fc(O).
    pub fn noise(obs_dim: usize, divisor: usize) -> Self {
        Self {
            input_dim: obs_dim,
            layers: vec![
                LayerSpec::fc(scaled(16, divisor)),
                LayerSpec::fc(scaled(16, divisor)),
                LayerSpec::linear(obs_dim),
            ],
        }
    }

    /// Sensor model: 2×SNN(256), 2×SNN(64), fc(O).
    pub fn sensor(input_dim: usize, obs_dim: usize, divisor: usize) -> Self {
        Self {
            input_dim,
            layers: vec![
                LayerSpec::snn(scaled(256, divisor)),
                LayerSpec::snn(scaled(256, divisor)),
                LayerSpec::snn(scaled(64, divisor)),
                LayerSpec::snn(scaled(64, divisor)),
                LayerSpec::linear(obs_dim),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpParams {
    /// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)` for both
    /// weights and biases.
    pub fn init(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::with_capacity(spec.layers.len());
        let mut biases = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for layer in &spec.layers {
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(layer.width, fan_in, |_, _| {
                rng.random_range(-bound..bound)
            }));
            biases.push(DVector::from_fn(layer.width, |_, _| rng.random_range(-bound..bound)));
            fan_in = layer.width;
        }
        Self { weights, biases }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let mut weights = Vec::with_capacity(spec.layers.len());
        let mut biases = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for layer in &spec.layers {
            weights.push(DMatrix::zeros(layer.width, fan_in));
            biases.push(DVector::zeros(layer.width));
            fan_in = layer.width;
        }
        Self { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: self.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn check_shapes(&self, spec: &MlpSpec) -> Result<()> {
        if self.weights.len() != spec.layers.len() || self.biases.len() != spec.layers.len() {
            return Err(Error::ShapeMismatch {
                context: "layer count",
                expected: spec.layers.len(),
                got: self.weights.len(),
            });
        }
        let mut fan_in = spec.input_dim;
        for ((w, b), l) in self.weights.iter().zip(&self.biases).zip(&spec.layers) {
            if w.shape() != (l.width, fan_in) {
                return Err(Error::ShapeMismatch {
                    context: "weight matrix",
                    expected: l.width * fan_in,
                    got: w.len(),
                });
            }
            if b.len() != l.width {
                return Err(Error::ShapeMismatch {
                    context: "bias vector",
                    expected: l.width,
                    got: b.len(),
                });
            }
            fan_in = l.width;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    /// All parameters, layer by layer (weights column-major, then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                context: "flat parameters",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Per-layer dropout scale factors (`0` or `1/(1-p)`) for stochastic layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskRecord {
    pub masks: Vec<Option<DMatrix<f64>>>,
}

pub enum Dropout<'a> {
    /// Dropout disabled.
    Off,
    /// Fresh independent masks per call and per batch column.
    Sample { rate: f64, rng: &'a mut ChaCha8Rng },
    /// Reuse masks from an earlier call.
    Replay(&'a MaskRecord),
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    pub masks: MaskRecord,
}

impl Trace {
    pub fn input(&self) -> &DMatrix<f64> {
        &self.inputs[0]
    }
}

pub struct Gradients {
    pub params: MlpParams,
    pub input: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::init(&spec, rng);
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        params.check_shapes(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn forward(&self, input: &DMatrix<f64>, mut dropout: Dropout<'_>) -> Result<(DMatrix<f64>, Trace)> {
        if input.nrows() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.spec.input_dim,
                got: input.nrows(),
            });
        }
        let n_layers = self.spec.layers.len();
        let batch = input.ncols();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        let mut x = input.clone();

        for (i, layer) in self.spec.layers.iter().enumerate() {
            let mut z = &self.params.weights[i] * &x;
            let b = &self.params.biases[i];
            for mut col in z.column_iter_mut() {
                col += b;
            }
            let mut a = match layer.activation {
                Activation::Relu => z.map(|v| v.max(0.0)),
                Activation::Linear => z.clone(),
            };
            let mask = if layer.stochastic {
                match &mut dropout {
                    Dropout::Off => None,
                    Dropout::Sample { rate, rng } => {
                        if *rate > 0.0 {
                            let keep = 1.0 - *rate;
                            let scale = 1.0 / keep;
                            Some(DMatrix::from_fn(layer.width, batch, |_, _| {
                                if rng.random::<f64>() < keep {
                                    scale
                                } else {
                                    0.0
                                }
                            }))
                        } else {
                            None
                        }
                    }
                    Dropout::Replay(rec) => {
                        let m = rec.masks.get(i).cloned().flatten();
                        if let Some(m) = &m {
                            if m.shape() != a.shape() {
                                return Err(Error::ShapeMismatch {
                                    context: "replayed dropout mask",
                                    expected: a.len(),
                                    got: m.len(),
                                });
                            }
                        }
                        m
                    }
                }
            } else {
                None
            };
            if let Some(m) = &mask {
                a.component_mul_assign(m);
            }
            inputs.push(x);
            pre.push(z);
            masks.push(mask);
            x = a;
        }
        Ok((
            x,
            Trace {
                inputs,
                pre,
                masks: MaskRecord { masks },
            },
        ))
    }

    /// Forward pass without dropout, discarding the trace.
    pub fn predict(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(input, Dropout::Off)?.0)
    }

    /// Reverse-mode gradients of `sum(upstream ⊙ output)` with respect to
    /// the parameters and the input, for the masked function in `trace`.
    pub fn backward(&self, trace: &Trace, upstream: &DMatrix<f64>) -> Result<Gradients> {
        let batch = trace.inputs[0].ncols();
        if upstream.shape() != (self.output_dim(), batch) {
            return Err(Error::ShapeMismatch {
                context: "upstream gradient",
                expected: self.output_dim() * batch,
                got: upstream.len(),
            });
        }
        let mut grads = self.params.zeros_like();
        let mut g = upstream.clone();
        for i in (0..self.spec.layers.len()).rev() {
            if let Some(m) = &trace.masks.masks[i] {
                g.component_mul_assign(m);
            }
            if self.spec.layers[i].activation == Activation::Relu {
                g.zip_apply(&trace.pre[i], |gv, z| {
                    if z <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            grads.weights[i] = &g * trace.inputs[i].transpose();
            grads.biases[i] = g.column_sum();
            g = self.params.weights[i].transpose() * &g;
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            spec: self.spec.clone(),
            params: self.params.to_flat(),
        }
    }

    pub fn from_record(rec: &MlpRecord) -> Result<Self> {
        rec.spec.validate()?;
        let mut params = MlpParams::zeros(&rec.spec);
        params
            .set_flat(&rec.params)
            .map_err(|e| Error::Checkpoint(format!("parameter count: {e}")))?;
        Ok(Self {
            spec: rec.spec.clone(),
            params,
        })
    }
}

/// Serialized network: spec echo plus all parameters in [`MlpParams::to_flat`]
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    m: Option<MlpParams>,
    #[serde(skip)]
    v: Option<MlpParams>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: None,
            v: None,
        }
    }
}

impl Adam {
    pub fn update(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) {
        self.step += 1;
        let m = self.m.get_or_insert_with(|| params.zeros_like());
        let v = self.v.get_or_insert_with(|| params.zeros_like());
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), ms), vs) in params
            .slices_mut()
            .zip(grads.slices())
            .zip(m.slices_mut())
            .zip(v.slices_mut())
        {
            for i in 0..p.len() {
                ms[i] = b1 * ms[i] + (1.0 - b1) * g[i];
                vs[i] = b2 * vs[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sum_loss(net: &Mlp, x: &DMatrix<f64>, masks: &MaskRecord, weights: &DMatrix<f64>) -> f64 {
        let (y, _) = net.forward(x, Dropout::Replay(masks)).unwrap();
        y.component_mul(weights).sum()
    }

    #[test]
    fn zero_weights_output_bias() {
        let spec = MlpSpec::new(3, vec![LayerSpec::fc(4), LayerSpec::linear(2)]).unwrap();
        let mut params = MlpParams::zeros(&spec);
        params.biases[1] = DVector::from_vec(vec![0.5, -1.5]);
        let net = Mlp::from_parts(spec, params).unwrap();
        let y = net.predict(&DMatrix::from_element(3, 2, 7.0)).unwrap();
        assert_eq!(y, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, -1.5, -1.5]));
    }

    #[test]
    fn hand_computed_two_unit_net() {
        let spec = MlpSpec::new(1, vec![LayerSpec::fc(2), LayerSpec::linear(1)]).unwrap();
        let params = MlpParams {
            weights: vec![
                DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
                DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            ],
            biases: vec![DVector::zeros(2), DVector::zeros(1)],
        };
        let net = Mlp::from_parts(spec, params).unwrap();
        assert_eq!(net.predict(&DMatrix::from_element(1, 1, 1.0)).unwrap()[0], 3.0);
    }

    #[test]
    fn zero_rate_dropout_matches_deterministic() {
        let spec = MlpSpec::sensor(10, 5, 16);
        let net = Mlp::new(spec, &mut rng(1)).unwrap();
        let x = DMatrix::from_fn(10, 4, |i, j| (i as f64 - j as f64) * 0.1);
        let det = net.predict(&x).unwrap();
        let mut r = rng(2);
        let (sto, _) = net.forward(&x, Dropout::Sample { rate: 0.0, rng: &mut r }).unwrap();
        assert_eq!(det, sto);
    }

    #[test]
    fn input_shape_checked() {
        let net = Mlp::new(MlpSpec::noise(4, 1), &mut rng(1)).unwrap();
        assert!(matches!(
            net.predict(&DMatrix::zeros(3, 1)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn output_layer_must_be_linear() {
        assert!(MlpSpec::new(2, vec![LayerSpec::fc(3)]).is_err());
        assert!(MlpSpec::new(2, vec![LayerSpec::snn(3), LayerSpec::linear(0)]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(MlpSpec::transition(6, 3, 32), &mut rng(3)).unwrap();
        let x = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64 * 0.3);
        let mut r = rng(4);
        let (_, trace) = net.forward(&x, Dropout::Sample { rate: 0.2, rng: &mut r }).unwrap();
        let g = net.backward(&trace, &DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(g.params.max_abs(), 0.0);
        assert_eq!(g.input.amax(), 0.0);
    }

    #[test]
    fn linear_regime_gradients_are_outer_products() {
        // Positive weights, biases, and inputs keep every ReLU active.
        let spec = MlpSpec::new(2, vec![LayerSpec::fc(3), LayerSpec::linear(2)]).unwrap();
        let params = MlpParams {
            weights: vec![
                DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
                DMatrix::from_row_slice(2, 3, &[0.7, 0.8, 0.9, 1.0, 1.1, 1.2]),
            ],
            biases: vec![DVector::from_element(3, 0.1), DVector::from_element(2, 0.2)],
        };
        let net = Mlp::from_parts(spec, params.clone()).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let up = DMatrix::from_column_slice(2, 1, &[0.5, -1.0]);
        let (_, trace) = net.forward(&x, Dropout::Off).unwrap();
        let g = net.backward(&trace, &up).unwrap();

        let h = &params.weights[0] * &x + &params.biases[0];
        assert_eq!(g.params.weights[1], &up * h.transpose());
        let delta1 = params.weights[1].transpose() * &up;
        let expected_w0 = &delta1 * x.transpose();
        assert!((&g.params.weights[0] - expected_w0).amax() < 1e-15);
        assert!((&g.params.biases[0] - &delta1).amax() < 1e-15);
    }

    #[test]
    fn finite_difference_matches_backward() {
        for (seed, spec) in [
            MlpSpec::transition(12, 5, 16),
            MlpSpec::observation(5, 5, 8),
            MlpSpec::noise(5, 4),
            MlpSpec::sensor(11, 5, 16),
        ]
        .into_iter()
        .enumerate()
        {
            let mut r = rng(seed as u64 + 10);
            let net = Mlp::new(spec.clone(), &mut r).unwrap();
            let x = DMatrix::from_fn(spec.input_dim, 3, |_, _| r.random_range(-1.0..1.0));
            let w = DMatrix::from_fn(spec.output_dim(), 3, |_, _| r.random_range(-1.0..1.0));
            let (_, trace) = net.forward(&x, Dropout::Sample { rate: 0.1, rng: &mut r }).unwrap();
            let analytic = net.backward(&trace, &w).unwrap().params.to_flat();
            let base = net.params.to_flat();
            let h = 1e-5;
            let mut probe = net.clone();
            for (k, a) in analytic.iter().enumerate() {
                let mut p = base.clone();
                p[k] += h;
                probe.params.set_flat(&p).unwrap();
                let plus = sum_loss(&probe, &x, &trace.masks, &w);
                p[k] -= 2.0 * h;
                probe.params.set_flat(&p).unwrap();
                let minus = sum_loss(&probe, &x, &trace.masks, &w);
                let numeric = (plus - minus) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "param {k}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn stochastic_mean_matches_deterministic() {
        // Exact in expectation when the dropped layer feeds the linear output.
        let spec = MlpSpec::new(4, vec![LayerSpec::snn(32), LayerSpec::linear(2)]).unwrap();
        let net = Mlp::new(spec, &mut rng(5)).unwrap();
        let x = DMatrix::from_column_slice(4, 1, &[0.5, -0.2, 0.8, 0.1]);
        let det = net.predict(&x).unwrap();
        let n = 10_000;
        let wide = DMatrix::from_fn(4, n, |i, _| x[i]);
        let mut r = rng(6);
        let (samples, _) = net.forward(&wide, Dropout::Sample { rate: 0.1, rng: &mut r }).unwrap();
        for k in 0..2 {
            let row = samples.row(k);
            let mean = row.mean();
            let std = row.variance().sqrt();
            let bound = 3.0 * std / (n as f64).sqrt();
            assert!((mean - det[k]).abs() < bound, "{mean} vs {} (±{bound})", det[k]);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let spec = MlpSpec::noise(3, 4);
        let mut params = MlpParams::init(&spec, &mut rng(7));
        let before = params.clone();
        let mut adam = Adam::default();
        adam.update(&mut params, &before.zeros_like(), 1e-3);
        assert_eq!(params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let spec = MlpSpec::new(1, vec![LayerSpec::linear(1)]).unwrap();
        let mut params = MlpParams::zeros(&spec);
        let mut grads = params.zeros_like();
        grads.weights[0][(0, 0)] = 1.0;
        let mut adam = Adam::default();
        adam.update(&mut params, &grads, 1e-4);
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((params.weights[0][(0, 0)] - expected).abs() < 1e-18);
        assert_eq!(params.biases[0][0], 0.0);
    }

    #[test]
    fn adam_identical_tensors_stay_identical() {
        let spec = MlpSpec::new(2, vec![LayerSpec::linear(2)]).unwrap();
        let mut params = MlpParams::zeros(&spec);
        params.weights[0] = DMatrix::from_element(2, 2, 0.3);
        let mut grads = params.zeros_like();
        grads.weights[0] = DMatrix::from_element(2, 2, -0.7);
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.update(&mut params, &grads, 1e-2);
        }
        let w = &params.weights[0];
        assert!(w.iter().all(|v| v.to_bits() == w[(0, 0)].to_bits()));
    }

    #[test]
    fn record_round_trip_and_shape_validation() {
        let net = Mlp::new(MlpSpec::observation(4, 4, 8), &mut rng(8)).unwrap();
        let rec = net.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back = Mlp::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, net);
        let mut bad = rec.clone();
        bad.params.pop();
        assert!(Mlp::from_record(&bad).is_err());
    }

    #[test]
    fn table_widths() {
        let f = MlpSpec::transition(135, 27, 1);
        let widths: Vec<_> = f.layers.iter().map(|l| l.width).collect();
        assert_eq!(widths, [256, 512, 27]);
        assert!(f.layers[0].stochastic && f.layers[1].stochastic && !f.layers[2].stochastic);
        let s = MlpSpec::sensor(110, 27, 8);
        let widths: Vec<_> = s.layers.iter().map(|l| l.width).collect();
        assert_eq!(widths, [32, 32, 8, 8, 27]);
        let r = MlpSpec::noise(27, 16);
        let widths: Vec<_> = r.layers.iter().map(|l| l.width).collect();
        assert_eq!(widths, [1, 1, 27]);
    }
}
