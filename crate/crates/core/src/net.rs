//! Dense feed-forward networks with hand-written reverse-mode gradients,
//! SGD/Adam updates and soft target tracking.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::hex_digest;
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `outputs x inputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    layers: Vec<Layer>,
}

/// Layer outputs recorded by a batched forward pass; row `i` of every matrix
/// belongs to sample `i`.
#[derive(Clone, Debug)]
pub struct Tape {
    pub input: Array2<f64>,
    pub outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients, shape-congruent with the `NetParams` they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

impl Grads {
    pub fn zeros_like(params: &NetParams) -> Self {
        Grads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| *v == 0.0))
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights *= c;
            l.bias *= c;
        }
    }

    /// All entries in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    fn congruent(&self, params: &NetParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
    }
}

impl NetParams {
    /// Layers of the given widths with `hidden` activations and `output` on
    /// the last layer. Weights and biases are uniform in `±1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Result<Self> {
        Self::build(sizes, hidden, output, |fan_in| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            rng.random_range(-bound..=bound)
        })
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::build(sizes, hidden, output, |_| 0.0)
    }

    fn build(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        mut init: impl FnMut(usize) -> f64,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || init(fan_in));
                let bias = Array1::from_shape_simple_fn(fan_out, || init(fan_in));
                Layer {
                    weights,
                    bias,
                    activation: if i == last { output } else { hidden },
                }
            })
            .collect();
        Ok(NetParams { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::DimensionMismatch {
                    expected: l.outputs(),
                    actual: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].outputs(),
                    actual: l.inputs(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
        }
        Ok(NetParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                inputs: l.inputs(),
                outputs: l.outputs(),
                activation: l.activation,
            })
            .collect()
    }

    /// All parameters in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Inverse of [`NetParams::flatten`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update((l.inputs() as u64).to_le_bytes());
            h.update((l.outputs() as u64).to_le_bytes());
            h.update([l.activation as u8]);
            for v in l.weights.iter().chain(l.bias.iter()) {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let mut x = self.layer_forward(0, inputs);
        for i in 1..self.layers.len() {
            x = self.layer_forward(i, x.view());
        }
        Ok(x)
    }

    pub fn forward_tape(&self, inputs: Array2<f64>) -> Result<Tape> {
        self.check_input(inputs.ncols())?;
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let y = match outputs.last() {
                Some(prev) => self.layer_forward(i, prev.view()),
                None => self.layer_forward(i, inputs.view()),
            };
            outputs.push(y);
        }
        Ok(Tape { input: inputs, outputs })
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let l = &self.layers[i];
        let mut z = x.dot(&l.weights.t());
        z += &l.bias;
        let act = l.activation;
        if act != Activation::Identity {
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    /// Gradients of `sum_i upstream_i . output_i` with respect to the
    /// parameters (summed over the batch) and to each input row.
    pub fn backward_tape(&self, tape: &Tape, upstream: ArrayView2<'_, f64>) -> Result<(Grads, Array2<f64>)> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: upstream.len(),
            });
        }
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let act = l.activation;
            if act != Activation::Identity {
                Zip::from(&mut delta)
                    .and(&tape.outputs[i])
                    .for_each(|d, &y| *d *= act.derivative_at_output(y));
            }
            let prev = if i == 0 { &tape.input } else { &tape.outputs[i - 1] };
            let weights = delta.t().dot(prev);
            let bias = delta.sum_axis(Axis(0));
            let next_delta = delta.dot(&l.weights);
            grads.push(LayerGrad { weights, bias });
            delta = next_delta;
        }
        grads.reverse();
        Ok((Grads { layers: grads }, delta))
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Grads, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        let tape = self.forward_tape(x)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let (grads, dx) = self.backward_tape(&tape, up)?;
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }

    /// Plain SGD: `params -= lr * grads`.
    pub fn apply_update(&mut self, grads: &Grads, learning_rate: f64) -> Result<()> {
        if !grads.congruent(self) {
            return Err(Error::InvalidArgument("gradient shape does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weights.scaled_add(-learning_rate, &g.weights);
            l.bias.scaled_add(-learning_rate, &g.bias);
        }
        Ok(())
    }

    /// `self = tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &NetParams, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
        }
        if self.architecture() != source.architecture() {
            return Err(Error::InvalidArgument("soft update between different architectures".into()));
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.weights)
                .and(&s.weights)
                .for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
            Zip::from(&mut t.bias)
                .and(&s.bias)
                .for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(params: &NetParams, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Grads::zeros_like(params),
            v: Grads::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &Grads) -> Result<()> {
        if !grads.congruent(params) {
            return Err(Error::InvalidArgument("gradient shape does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((l, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            Zip::from(&mut l.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut l.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer behind one interface.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &NetParams, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { learning_rate },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(params, learning_rate)),
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &Grads) -> Result<()> {
        match self {
            Optimizer::Sgd { learning_rate } => params.apply_update(grads, *learning_rate),
            Optimizer::Adam(adam) => adam.step(params, grads),
        }
    }
}

const CHECKPOINT_FORMAT: &str = "lird-net";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerData {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    tag: String,
    seed: u64,
    architecture: Vec<LayerSpec>,
    checksum: String,
    layers: Vec<LayerData>,
}

pub fn checkpoint_to_json(params: &NetParams, tag: &str, seed: u64) -> Result<String> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        tag: tag.into(),
        seed,
        architecture: params.architecture(),
        checksum: params.checksum(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerData {
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&ck)?)
}

/// Parses a checkpoint, rejecting a different tag or architecture. Returns
/// the parameters and the seed they were trained with.
pub fn checkpoint_from_json(text: &str, tag: &str, expected: &[LayerSpec]) -> Result<(NetParams, u64)> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    if ck.tag != tag {
        return Err(Error::Config(format!("expected a `{tag}` checkpoint, found `{}`", ck.tag)));
    }
    if ck.architecture != expected {
        return Err(Error::Config(format!(
            "architecture mismatch: checkpoint has {:?}, configuration expects {:?}",
            ck.architecture, expected
        )));
    }
    if ck.layers.len() != ck.architecture.len() {
        return Err(Error::Config("layer count does not match architecture".into()));
    }
    let layers = ck
        .architecture
        .iter()
        .zip(ck.layers)
        .map(|(spec, data)| {
            let weights = Array2::from_shape_vec((spec.outputs, spec.inputs), data.weights)
                .map_err(|e| Error::Config(format!("bad weight matrix: {e}")))?;
            Ok(Layer {
                weights,
                bias: Array1::from_vec(data.bias),
                activation: spec.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = NetParams::from_layers(layers)?;
    if params.checksum() != ck.checksum {
        return Err(Error::Config("checkpoint checksum does not match its contents".into()));
    }
    Ok((params, ck.seed))
}

pub fn save_checkpoint(path: &Path, params: &NetParams, tag: &str, seed: u64) -> Result<()> {
    fs::write(path, checkpoint_to_json(params, tag, seed)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, tag: &str, expected: &[LayerSpec]) -> Result<(NetParams, u64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text, tag, expected)
}
