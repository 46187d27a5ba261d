//! Small fully connected network producing either two evidence values or a
//! single sigmoid probability.
//!
//! Hidden layers use ReLU. Dropout is inverted (kept units are scaled by
//! `1 / (1 − rate)` at train time) so evaluation needs no rescaling and is
//! deterministic.
//!
//! # Checkpoint format
//!
//! A checkpoint is a UTF-8 JSON document:
//!
//! ```text
//! {
//!   "format": "beta-evidence-checkpoint",
//!   "version": 1,
//!   "seed": <u64>,
//!   "spec": { "input_dim", "hidden_layers", "dropout_rate", "dropout_placement",
//!             "evidence_activation", "head" },
//!   "layers": [ { "in_dim", "out_dim", "weights": [out_dim × in_dim, row-major], "bias": [out_dim] }, ... ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so save/load is lossless.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{sample_loss, Evidence, Label, LabeledTarget, RegularizerMode};

pub const CHECKPOINT_FORMAT: &str = "beta-evidence-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceActivation {
    #[default]
    Relu,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Two outputs mapped to nonnegative evidence `(e⁺, e⁻)`.
    #[default]
    Evidential,
    /// One output squashed by a sigmoid, trained with binary cross-entropy.
    Sigmoid,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Evidential => 2,
            Head::Sigmoid => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    #[default]
    EveryHidden,
    LastHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub dropout_placement: DropoutPlacement,
    #[serde(default)]
    pub evidence_activation: EvidenceActivation,
    #[serde(default)]
    pub head: Head,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>) -> Self {
        Self {
            input_dim,
            hidden_layers,
            dropout_rate: 0.0,
            dropout_placement: DropoutPlacement::EveryHidden,
            evidence_activation: EvidenceActivation::Relu,
            head: Head::Evidential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden_layers", "every width must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(
                "dropout_rate",
                format!("{} not in [0, 1)", self.dropout_rate),
            ));
        }
        Ok(())
    }

    fn dropout_after(&self, hidden_index: usize) -> bool {
        self.dropout_rate > 0.0
            && match self.dropout_placement {
                DropoutPlacement::EveryHidden => true,
                DropoutPlacement::LastHidden => hidden_index + 1 == self.hidden_layers.len(),
            }
    }
}

/// Dense affine layer; `weights` is `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Network parameters together with the spec they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// Gradients with the same layout as [`ModelParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// Weights then bias of each layer, in order.
    pub fn buffers(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn flat(&self) -> Vec<f64> {
        self.buffers().flatten().copied().collect()
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    /// Dropout active; masks come from ChaCha8 seeded with `seed` on `stream`.
    Train {
        seed: u64,
        stream: u64,
    },
}

/// Deterministic fan-in scaled uniform initialisation, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![spec.input_dim];
    dims.extend(&spec.hidden_layers);
    dims.push(spec.head.outputs());
    let n_layers = dims.len() - 1;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            // He-uniform ahead of a ReLU, unit-variance uniform for the output layer.
            let gain = if i + 1 < n_layers { 6.0 } else { 3.0 };
            let limit = (gain / fan_in as f64).sqrt();
            let mut layer = Layer::zeros(fan_in, fan_out);
            layer
                .weights
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-limit..limit));
            layer
        })
        .collect();
    Ok(ModelParams {
        spec: spec.clone(),
        seed,
        layers,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations recorded during one forward pass.
struct Trace {
    /// Input followed by the (masked) output of every hidden layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (0 or `1/(1−r)`), empty when inactive.
    masks: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Weights then bias of each layer, in order.
    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let mut it = values.iter();
        for buf in self.buffers_mut() {
            buf.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }

    /// Dropout scale factors for each hidden layer as drawn in train mode.
    /// Layers without dropout get an all-ones vector.
    pub fn dropout_masks(&self, seed: u64, stream: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let rate = self.spec.dropout_rate;
        let keep_scale = 1.0 / (1.0 - rate);
        self.spec
            .hidden_layers
            .iter()
            .enumerate()
            .map(|(i, &width)| {
                if self.spec.dropout_after(i) {
                    (0..width)
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
                        .collect()
                } else {
                    vec![1.0; width]
                }
            })
            .collect()
    }

    fn trace(&self, x: &[f64], mode: ForwardMode) -> Result<Trace> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let masks = match mode {
            ForwardMode::Eval => Vec::new(),
            ForwardMode::Train { seed, stream } if self.spec.dropout_rate > 0.0 => self.dropout_masks(seed, stream),
            ForwardMode::Train { .. } => Vec::new(),
        };
        let n_hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(n_hidden);
        inputs.push(x.to_vec());
        let mut z = Vec::new();
        for (i, layer) in self.layers[..n_hidden].iter().enumerate() {
            layer.apply(&inputs[i], &mut z);
            let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let Some(mask) = masks.get(i) {
                a.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            pre.push(std::mem::take(&mut z));
            inputs.push(a);
        }
        let mut logits = Vec::new();
        self.layers[n_hidden].apply(&inputs[n_hidden], &mut logits);
        Ok(Trace {
            inputs,
            pre,
            masks,
            logits,
        })
    }

    fn evidence_from_logits(&self, logits: &[f64]) -> Result<Evidence> {
        let act = |z: f64| match self.spec.evidence_activation {
            EvidenceActivation::Relu => z.max(0.0),
            EvidenceActivation::Softplus => softplus(z),
        };
        Evidence::new(act(logits[0]), act(logits[1]))
    }

    fn require_head(&self, head: Head) -> Result<()> {
        if self.spec.head != head {
            return Err(Error::invalid(
                "head",
                format!("model has a {:?} head, {head:?} required", self.spec.head),
            ));
        }
        Ok(())
    }

    /// Raw output-layer values.
    pub fn logits(&self, x: &[f64], mode: ForwardMode) -> Result<Vec<f64>> {
        Ok(self.trace(x, mode)?.logits)
    }

    /// Write the checkpoint document to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            spec: self.spec.clone(),
            layers: self.layers.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(
                "format",
                format!("unexpected checkpoint format `{}`", doc.format),
            ));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Version(doc.version));
        }
        doc.spec.validate()?;
        let params = ModelParams {
            spec: doc.spec,
            seed: doc.seed,
            layers: doc.layers,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut dims = vec![self.spec.input_dim];
        dims.extend(&self.spec.hidden_layers);
        dims.push(self.spec.head.outputs());
        if self.layers.len() + 1 != dims.len() {
            return Err(Error::invalid("layers", "layer count does not match spec"));
        }
        for (layer, w) in self.layers.iter().zip(dims.windows(2)) {
            let ok = layer.in_dim == w[0]
                && layer.out_dim == w[1]
                && layer.weights.len() == w[0] * w[1]
                && layer.bias.len() == w[1]
                && layer.weights.iter().chain(&layer.bias).all(|v| v.is_finite());
            if !ok {
                return Err(Error::invalid("layers", "layer shape or values inconsistent with spec"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    seed: u64,
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Evidence for one input.
pub fn forward_evidence(params: &ModelParams, x: &[f64], mode: ForwardMode) -> Result<Evidence> {
    params.require_head(Head::Evidential)?;
    let t = params.trace(x, mode)?;
    params.evidence_from_logits(&t.logits)
}

/// Positive-class probability of a sigmoid-head model (dropout off).
pub fn forward_sigmoid_baseline(params: &ModelParams, x: &[f64]) -> Result<f64> {
    params.require_head(Head::Sigmoid)?;
    Ok(sigmoid(params.trace(x, ForwardMode::Eval)?.logits[0]))
}

/// What the evidential head is trained against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    pub regularizer: RegularizerMode,
}

/// Per-sample loss for either head; returns the loss and `∂loss/∂logits`.
fn loss_and_logit_grad(params: &ModelParams, logits: &[f64], label: Label, obj: &Objective) -> Result<(f64, [f64; 2])> {
    match params.spec.head {
        Head::Evidential => {
            let ev = params.evidence_from_logits(logits)?;
            let s = sample_loss(ev, &LabeledTarget::new(label), obj.lambda, obj.regularizer);
            let d_act = |z: f64| match params.spec.evidence_activation {
                EvidenceActivation::Relu => {
                    if z > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                EvidenceActivation::Softplus => sigmoid(z),
            };
            Ok((s.loss, [s.d_pos * d_act(logits[0]), s.d_neg * d_act(logits[1])]))
        }
        Head::Sigmoid => {
            let z = logits[0];
            let y = label.as_f64();
            // −[y ln σ(z) + (1 − y) ln(1 − σ(z))] = softplus(z) − y z
            let loss = if z > 30.0 { z - y * z } else { softplus(z) - y * z };
            Ok((loss, [sigmoid(z) - y, 0.0]))
        }
    }
}

/// Mean loss of a batch under `obj`, evaluated with `mode`.
pub fn batch_loss(params: &ModelParams, batch: &[(&[f64], Label)], obj: &Objective, mode: ForwardMode) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut sum = 0.0;
    for (i, (x, label)) in batch.iter().enumerate() {
        let t = params.trace(x, sample_mode(mode, i))?;
        sum += loss_and_logit_grad(params, &t.logits, *label, obj)?.0;
    }
    Ok(sum / batch.len() as f64)
}

fn sample_mode(mode: ForwardMode, index: usize) -> ForwardMode {
    match mode {
        ForwardMode::Eval => ForwardMode::Eval,
        ForwardMode::Train { seed, stream } => ForwardMode::Train {
            seed,
            stream: stream.wrapping_add(index as u64),
        },
    }
}

/// Gradient of the mean batch loss with respect to every parameter.
///
/// In train mode sample `i` of the batch uses dropout stream `stream + i`, so
/// `forward_evidence(params, x_i, Train { seed, stream: stream + i })`
/// reproduces exactly the pass that was differentiated.
pub fn backward(
    params: &ModelParams,
    batch: &[(&[f64], Label)],
    obj: &Objective,
    mode: ForwardMode,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grads = Gradients::zeros_like(params);
    let n_hidden = params.layers.len() - 1;
    let mut loss_sum = 0.0;
    let mut delta = Vec::new();
    let mut next = Vec::new();
    for (i, (x, label)) in batch.iter().enumerate() {
        let t = params.trace(x, sample_mode(mode, i))?;
        let (loss, d_logits) = loss_and_logit_grad(params, &t.logits, *label, obj)?;
        loss_sum += loss;
        delta.clear();
        delta.extend_from_slice(&d_logits[..params.spec.head.outputs()]);

        for l in (0..=n_hidden).rev() {
            let layer = &params.layers[l];
            let g = &mut grads.layers[l];
            let input = &t.inputs[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(input).for_each(|(gw, v)| *gw += d * v);
            }
            if l == 0 {
                break;
            }
            // Back through the previous hidden layer: weights, dropout, ReLU.
            next.clear();
            next.resize(layer.in_dim, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
            }
            let pre = &t.pre[l - 1];
            let mask = t.masks.get(l - 1);
            for (j, n) in next.iter_mut().enumerate() {
                let m = mask.map_or(1.0, |m| m[j]);
                *n *= if pre[j] > 0.0 { m } else { 0.0 };
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((grads, loss_sum * inv))
}
