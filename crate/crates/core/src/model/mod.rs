//! Feed-forward softmax classifier trained with mini-batch SGD on
//! cross-entropy.
//!
//! Parameters live in one flat `f64` buffer. Each dense layer contributes its
//! weight matrix (row-major, `out x in`) followed by its bias vector, in layer
//! order; gradients, the gradient check and checkpoints use the same layout.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::{par, rng};

const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative from the pre-activation `z` and the output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl Architecture {
    /// `input -> 32 -> 32 -> output` with ReLU.
    pub fn default_mlp(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: vec![32, 32],
            output,
            activation: Activation::Relu,
        }
    }

    /// No hidden layers: multinomial logistic regression.
    pub fn logistic(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: Vec::new(),
            output,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(validation("input width must be positive"));
        }
        if self.output < 2 {
            return Err(validation("softmax output needs at least two classes"));
        }
        if self.hidden.contains(&0) {
            return Err(validation("hidden widths must be at least 1"));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|p| p[1] * p[0] + p[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 128,
            epochs_per_round: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(validation("learning rate must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(validation("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    in_dim: usize,
    out_dim: usize,
    weight_offset: usize,
    bias_offset: usize,
}

fn layer_shapes(arch: &Architecture) -> Vec<LayerShape> {
    let mut offset = 0;
    arch.widths()
        .windows(2)
        .map(|p| {
            let shape = LayerShape {
                in_dim: p[0],
                out_dim: p[1],
                weight_offset: offset,
                bias_offset: offset + p[0] * p[1],
            };
            offset += p[0] * p[1] + p[1];
            shape
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

/// Per-sample activations reused across a batch.
struct Workspace {
    /// `pre[l]`: pre-activations of layer `l`; the last entry holds the logits.
    pre: Vec<Vec<f64>>,
    /// `post[l]`: outputs of hidden layer `l`.
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(shapes: &[LayerShape]) -> Self {
        Self {
            pre: shapes.iter().map(|s| vec![0.0; s.out_dim]).collect(),
            post: shapes.iter().map(|s| vec![0.0; s.out_dim]).collect(),
            delta: shapes.iter().map(|s| vec![0.0; s.out_dim]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    arch: Architecture,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    pub config: TrainConfig,
    seed: u64,
}

/// Fan-in scaled uniform weights (`U(-a, a)`, `a = sqrt(6 / fan_in)` for ReLU,
/// `sqrt(3 / fan_in)` for tanh, a tenth of that on the output layer), zero biases.
pub fn init_classifier(arch: Architecture, seed: u64) -> Result<SoftmaxClassifier> {
    SoftmaxClassifier::new(arch, TrainConfig::default(), seed)
}

/// Row-wise stable softmax.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// `log sum exp(logits) - logits[label]`.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

impl SoftmaxClassifier {
    pub fn new(arch: Architecture, config: TrainConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        config.validate()?;
        let shapes = layer_shapes(&arch);
        let mut params = vec![0.0; arch.num_params()];
        let gain = match arch.activation {
            Activation::Relu => 6.0,
            Activation::Tanh => 3.0,
        };
        let mut r = rng::stream_rng(seed, 0);
        let last = shapes.len() - 1;
        for (l, s) in shapes.iter().enumerate() {
            // small output layer so untrained predictions start near uniform
            let scale = if l == last { OUTPUT_INIT_SCALE } else { 1.0 };
            let bound = scale * (gain / s.in_dim as f64).sqrt();
            for w in &mut params[s.weight_offset..s.bias_offset] {
                *w = r.random_range(-bound..bound);
            }
        }
        Ok(Self {
            arch,
            shapes,
            params,
            config,
            seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Weights of layer `l`, row-major `out x in`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = &self.shapes[layer];
        &self.params[s.weight_offset..s.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = &self.shapes[layer];
        &self.params[s.bias_offset..s.bias_offset + s.out_dim]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.shapes[layer];
        &mut self.params[s.weight_offset..s.bias_offset]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.shapes[layer];
        &mut self.params[s.bias_offset..s.bias_offset + s.out_dim]
    }

    fn forward(&self, x: &[f64], ws: &mut Workspace) {
        let last = self.shapes.len() - 1;
        for (l, s) in self.shapes.iter().enumerate() {
            let w = &self.params[s.weight_offset..s.bias_offset];
            let b = &self.params[s.bias_offset..s.bias_offset + s.out_dim];
            let (before, rest) = ws.post.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let pre = &mut ws.pre[l];
            for o in 0..s.out_dim {
                let row = &w[o * s.in_dim..(o + 1) * s.in_dim];
                pre[o] = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l < last {
                let act = self.arch.activation;
                for (p, z) in rest[0].iter_mut().zip(pre.iter()) {
                    *p = act.apply(*z);
                }
            }
        }
    }

    /// Accumulates the gradient of one sample's cross-entropy into `grad` and
    /// returns its loss and whether the argmax matched the label.
    fn backward(
        &self,
        x: &[f64],
        label: usize,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> (f64, bool) {
        self.forward(x, ws);
        let last = self.shapes.len() - 1;
        let logits = &ws.pre[last];
        let loss = cross_entropy(logits, label);
        let correct = crate::datagen::argmax(logits) == label;
        ws.delta[last].copy_from_slice(logits);
        softmax_in_place(&mut ws.delta[last]);
        ws.delta[last][label] -= 1.0;
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            let input: &[f64] = if l == 0 { x } else { &ws.post[l - 1] };
            let delta = &ws.delta[l];
            for o in 0..s.out_dim {
                let d = delta[o];
                let g =
                    &mut grad[s.weight_offset + o * s.in_dim..s.weight_offset + (o + 1) * s.in_dim];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[s.bias_offset + o] += d;
            }
            if l > 0 {
                let w = &self.params[s.weight_offset..s.bias_offset];
                let (lower, upper) = ws.delta.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                let act = self.arch.activation;
                for (i, p) in prev.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (o, d) in delta.iter().enumerate() {
                        acc += w[o * s.in_dim + i] * d;
                    }
                    *p = acc * act.derivative(ws.pre[l - 1][i], ws.post[l - 1][i]);
                }
            }
        }
        (loss, correct)
    }

    fn check_features(&self, features: &[f64]) -> Result<usize> {
        let d = self.arch.input;
        if !features.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: features.len() % d,
            });
        }
        Ok(features.len() / d)
    }

    fn check_labels(&self, n: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != n {
            return Err(validation(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= self.arch.output) {
            return Err(validation(format!(
                "label {l} outside [0, {})",
                self.arch.output
            )));
        }
        Ok(())
    }

    /// Final-layer logits, row-major `n x C`.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        let last = self.shapes.len() - 1;
        Ok(par::map_rows_into(
            features,
            self.arch.input,
            self.arch.output,
            |x, out| {
                let mut ws = Workspace::new(&self.shapes);
                self.forward(x, &mut ws);
                out.copy_from_slice(&ws.pre[last]);
            },
        ))
    }

    /// Row-wise softmax of the logits, row-major `n x C`.
    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.logits(features)?;
        out.chunks_mut(self.arch.output).for_each(softmax_in_place);
        Ok(out)
    }

    /// Pre-activations of every hidden unit for one input; used to avoid ReLU
    /// kinks in finite-difference checks.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(&self.shapes);
        self.forward(x, &mut ws);
        ws.pre[..self.shapes.len() - 1]
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    /// Mean cross-entropy.
    pub fn loss(&self, features: &[f64], labels: &[usize]) -> Result<f64> {
        let n = self.check_features(features)?;
        self.check_labels(n, labels)?;
        let logits = self.logits(features)?;
        let c = self.arch.output;
        Ok(
            par::chunked_sum(n, |i| cross_entropy(&logits[i * c..(i + 1) * c], labels[i]))
                / n.max(1) as f64,
        )
    }

    /// Gradient of the mean cross-entropy, in parameter layout.
    pub fn gradient(&self, features: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
        let n = self.check_features(features)?;
        self.check_labels(n, labels)?;
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = Workspace::new(&self.shapes);
        let d = self.arch.input;
        for i in 0..n {
            self.backward(&features[i * d..(i + 1) * d], labels[i], &mut ws, &mut grad);
        }
        let scale = 1.0 / n.max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(grad)
    }

    /// One SGD step on the mean cross-entropy of the given batch.
    pub fn sgd_step(
        &mut self,
        features: &[f64],
        labels: &[usize],
        learning_rate: f64,
    ) -> Result<()> {
        let grad = self.gradient(features, labels)?;
        for (p, g) in self.params.iter_mut().zip(&grad) {
            *p -= learning_rate * g;
        }
        Ok(())
    }

    /// Continues training for `epochs` passes over the data. Each epoch
    /// reshuffles with a generator derived from `(seed, epoch)`.
    pub fn train(
        &mut self,
        features: &[f64],
        labels: &[usize],
        epochs: usize,
        seed: u64,
    ) -> Result<TrainTrace> {
        let n = self.check_features(features)?;
        self.check_labels(n, labels)?;
        let mut trace = TrainTrace::default();
        if n == 0 {
            return Ok(trace);
        }
        let d = self.arch.input;
        let lr = self.config.learning_rate;
        let batch = self.config.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = Workspace::new(&self.shapes);
        for epoch in 0..epochs {
            let mut r = rng::stream_rng(seed, epoch as u64);
            order.shuffle(&mut r);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for chunk in order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in chunk {
                    let (l, ok) =
                        self.backward(&features[i * d..(i + 1) * d], labels[i], &mut ws, &mut grad);
                    loss_sum += l;
                    correct += usize::from(ok);
                }
                let step = lr / chunk.len() as f64;
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= step * g;
                }
            }
            let mean_loss = loss_sum / n as f64;
            if !mean_loss.is_finite() || self.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            trace.epoch_loss.push(mean_loss);
            trace.epoch_accuracy.push(correct as f64 / n as f64);
        }
        Ok(trace)
    }
}

/// Largest relative error between the analytic gradient of the mean
/// cross-entropy and central differences `(L(p + h) - L(p - h)) / 2h`, over
/// a random subset of at least 200 parameters (all of them if fewer). The
/// denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(
    classifier: &SoftmaxClassifier,
    features: &[f64],
    labels: &[usize],
    h: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(validation(format!("step {h} outside [1e-7, 1e-3]")));
    }
    if labels.is_empty() {
        return Err(validation("gradient check needs a non-empty batch"));
    }
    let analytic = classifier.gradient(features, labels)?;
    let total = classifier.num_params();
    let picked: Vec<usize> = if total <= 200 {
        (0..total).collect()
    } else {
        let mut r = rng::stream_rng(seed, 1);
        let mut v = index::sample(&mut r, total, 200).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = classifier.clone();
    let base = classifier.params().to_vec();
    let mut worst: f64 = 0.0;
    for i in picked {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = probe.loss(features, labels)?;
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = probe.loss(features, labels)?;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
