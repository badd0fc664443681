//! Dense feed-forward network with hand-written gradients.
//!
//! Weight matrices are stored `fan_in × fan_out`, so a layer computes
//! `z = a_prev · W + b` for a row vector (or a batch of row vectors) `a_prev`.
//! Hidden layers use ReLU and the last layer emits raw logits. Training minimises
//! softmax cross-entropy with plain mini-batch SGD. Everything runs in `f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{Exec, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; the ReLU derivative at exactly zero is taken as 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// A validated stack of dense layers: ReLU hidden layers and an identity
/// output layer whose width is the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.is_empty() {
                return Err(Error::invalid(format!("layer {i} has an empty weight matrix")));
            }
            if layer.biases.len() != layer.fan_out() {
                return Err(Error::invalid(format!(
                    "layer {i}: {} biases for {} outputs",
                    layer.biases.len(),
                    layer.fan_out()
                )));
            }
            if i > 0 && layers[i - 1].fan_out() != layer.fan_in() {
                return Err(Error::invalid(format!(
                    "shape chain broken between layers {} and {i}: {} != {}",
                    i - 1,
                    layers[i - 1].fan_out(),
                    layer.fan_in()
                )));
            }
            let expected = if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::invalid(format!(
                    "layer {i} must use {expected:?} activation"
                )));
            }
            let finite = layer.weights.iter().chain(layer.biases.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Numeric(format!("layer {i} holds non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Number of hidden (prunable) layers.
    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    /// Layer widths, input first: `[input_dim, h1, ..., k]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::fan_out));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }
}

/// Builds a network with Glorot-uniform weights, `U(±sqrt(6/(fan_in+fan_out)))`,
/// and zero biases. Weights are drawn layer by layer in row-major order from a
/// ChaCha8 stream seeded with `seed`.
pub fn init_net(dims: &[usize], seed: u64) -> Result<DenseNet> {
    if dims.len() < 2 {
        return Err(Error::invalid("dims needs an input width and at least one layer width"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::invalid(format!("width at position {pos} is zero")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng));
            DenseLayer {
                weights,
                biases: Array1::zeros(fan_out),
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    DenseNet::new(layers)
}

/// Activations recorded by a single-sample forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Array1<f64>,
    /// Pre-activations `z`, one vector per layer.
    pub pre: Vec<Array1<f64>>,
    /// Post-activations `a = act(z)`, one vector per layer.
    pub post: Vec<Array1<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array1<f64> {
        self.post.last().expect("trace has at least one layer")
    }

    /// Input of layer `l` (the input vector for `l == 0`).
    pub fn layer_input(&self, l: usize) -> &Array1<f64> {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

/// Activations of a batch of samples, one row per sample.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl BatchTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.post.last().expect("trace has at least one layer")
    }

    pub fn layer_input(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }

    pub fn rows(&self) -> usize {
        self.input.nrows()
    }
}

fn affine(a: &ArrayView2<f64>, layer: &DenseLayer) -> Array2<f64> {
    let mut z = a.dot(&layer.weights);
    z += &layer.biases;
    z
}

/// Single-sample forward pass.
pub fn forward(net: &DenseNet, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != net.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} features, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let batch = forward_batch(net, ArrayView2::from_shape((1, x.len()), x).expect("row view"))?;
    let row = |m: Array2<f64>| m.index_axis_move(Axis(0), 0);
    Ok(ForwardTrace {
        input: row(batch.input),
        pre: batch.pre.into_iter().map(row).collect(),
        post: batch.post.into_iter().map(row).collect(),
    })
}

/// Batched forward pass keeping every intermediate activation.
pub fn forward_batch(net: &DenseNet, x: ArrayView2<f64>) -> Result<BatchTrace> {
    if x.ncols() != net.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            net.input_dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("input contains non-finite values"));
    }
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let a_prev = if l == 0 { x.view() } else { post[l - 1].view() };
        let z = affine(&a_prev, layer);
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pre-activation in layer {l}")));
        }
        let act = layer.activation;
        let a = z.mapv(|v| act.apply(v));
        pre.push(z);
        post.push(a);
    }
    Ok(BatchTrace {
        input: x.to_owned(),
        pre,
        post,
    })
}

/// Logits only, without keeping intermediate activations.
pub fn logits_batch(net: &DenseNet, x: ArrayView2<f64>) -> Array2<f64> {
    let mut a = x.to_owned();
    for layer in &net.layers {
        let act = layer.activation;
        a = affine(&a.view(), layer);
        a.mapv_inplace(|v| act.apply(v));
    }
    a
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax cross-entropy; returns the loss and writes
/// `softmax(logits) - onehot(label)` into `dlogits`.
fn softmax_xent(logits: ArrayView1<f64>, label: usize, mut dlogits: ndarray::ArrayViewMut1<f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (d, &z) in dlogits.iter_mut().zip(logits.iter()) {
        *d = (z - max).exp();
        sum += *d;
    }
    for d in dlogits.iter_mut() {
        *d /= sum;
    }
    let loss = sum.ln() + max - logits[label];
    dlogits[label] -= 1.0;
    loss
}

/// Softmax cross-entropy loss of one sample.
pub fn loss(net: &DenseNet, x: &[f64], label: usize) -> Result<f64> {
    check_label(net, label)?;
    let trace = forward(net, x)?;
    let mut scratch = Array1::zeros(net.classes());
    Ok(softmax_xent(trace.logits().view(), label, scratch.view_mut()))
}

fn check_label(net: &DenseNet, label: usize) -> Result<()> {
    if label >= net.classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            net.classes()
        )));
    }
    Ok(())
}

/// Gradients of the softmax cross-entropy loss of one sample.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// Same shapes as the layer weight matrices.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// `∂L/∂a` for the post-activations of every hidden layer.
    pub activations: Vec<Array1<f64>>,
}

/// Back-propagates a batch. Returns the summed loss and `∂L/∂Z` per layer.
/// `dZ` rows are per-sample gradients (no batch averaging).
fn backprop_deltas(net: &DenseNet, trace: &BatchTrace, labels: &[usize]) -> (f64, Vec<Array2<f64>>) {
    let n_layers = net.layers.len();
    let logits = trace.logits();
    let mut dz = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        total += softmax_xent(logits.row(r), label, dz.row_mut(r));
    }
    let mut deltas = vec![Array2::zeros((0, 0)); n_layers];
    for l in (0..n_layers).rev() {
        if l > 0 {
            let mut da = dz.dot(&net.layers[l].weights.t());
            let act = net.layers[l - 1].activation;
            Zip::from(&mut da)
                .and(&trace.pre[l - 1])
                .for_each(|d, &z| *d *= act.derivative(z));
            deltas[l] = std::mem::replace(&mut dz, da);
        } else {
            deltas[0] = std::mem::replace(&mut dz, Array2::zeros((0, 0)));
        }
    }
    (total, deltas)
}

/// `∂L/∂a` for every hidden layer and every sample of a batch.
pub(crate) fn activation_grads_batch(net: &DenseNet, trace: &BatchTrace, labels: &[usize]) -> Vec<Array2<f64>> {
    let (_, deltas) = backprop_deltas(net, trace, labels);
    (1..net.layers.len())
        .map(|l| deltas[l].dot(&net.layers[l].weights.t()))
        .collect()
}

/// Gradients of the loss at one sample with respect to every weight, bias and
/// hidden activation.
pub fn backward_grads(net: &DenseNet, x: &[f64], label: usize) -> Result<Gradients> {
    check_label(net, label)?;
    let x_row = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let trace = forward_batch(net, x_row)?;
    let (loss, deltas) = backprop_deltas(net, &trace, &[label]);
    let weights = deltas
        .iter()
        .enumerate()
        .map(|(l, dz)| trace.layer_input(l).t().dot(dz))
        .collect();
    let biases = deltas.iter().map(|dz| dz.row(0).to_owned()).collect();
    let activations = (1..net.layers.len())
        .map(|l| deltas[l].dot(&net.layers[l].weights.t()).index_axis_move(Axis(0), 0))
        .collect();
    Ok(Gradients {
        loss,
        weights,
        biases,
        activations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 8,
            batch_size: 32,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DenseNet,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch SGD on mean softmax cross-entropy. Sample order is reshuffled
/// every epoch from a ChaCha8 stream seeded with `cfg.seed`.
pub fn sgd_train(net: DenseNet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::invalid(format!(
            "dataset has {} features, network expects {}",
            data.dim(),
            net.input_dim()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= net.classes()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }

    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features().select(Axis(0), batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let trace = forward_batch(&net, x.view()).map_err(|_| Error::Diverged {
                epoch,
                loss: f64::NAN,
            })?;
            let (loss, deltas) = backprop_deltas(&net, &trace, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            let step = -cfg.learning_rate / batch.len() as f64;
            for (l, (layer, dz)) in net.layers.iter_mut().zip(&deltas).enumerate() {
                general_mat_mul(step, &trace.layer_input(l).t(), dz, 1.0, &mut layer.weights);
                layer.biases.scaled_add(step, &dz.sum_axis(Axis(0)));
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        net: DenseNet::new(net.layers)?,
        loss_history: history,
    })
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(net: &DenseNet, data: &Dataset) -> Result<f64> {
    evaluate_with(net, data, Exec::default())
}

pub fn evaluate_with(net: &DenseNet, data: &Dataset, exec: Exec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::invalid(format!(
            "dataset has {} features, network expects {}",
            data.dim(),
            net.input_dim()
        )));
    }
    let counts = exec.map_chunks(data.len(), CHUNK, |r| {
        let logits = logits_batch(net, data.features().slice(s![r.clone(), ..]));
        logits
            .rows()
            .into_iter()
            .zip(&data.labels()[r])
            .filter(|(row, &y)| argmax(row.view()) == y)
            .count()
    });
    let correct: usize = counts.into_iter().sum();
    Ok(correct as f64 / data.len() as f64)
}

/// Predicted class of every sample.
pub fn predict(net: &DenseNet, x: ArrayView2<f64>) -> Vec<usize> {
    logits_batch(net, x).rows().into_iter().map(argmax).collect()
}
