//! Minimal dense feed-forward network: ReLU/sigmoid/identity activations,
//! cross-entropy and mean-squared-error heads, exact reverse-mode gradients,
//! plain minibatch SGD, and a finite-difference gradient checker.
//!
//! Training keeps every random choice on a ChaCha8 stream keyed by the
//! config seed, so a run is bit-reproducible. The batch path uses GEMM via
//! `ndarray`; the per-sample path below is the reference the gradient
//! checker exercises, and the two are tested against each other.

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("layer {layer} input dim {input} does not match previous output {previous}")]
    LayerChainBroken {
        layer: usize,
        previous: usize,
        input: usize,
    },
    #[error("forward cache does not match this network")]
    StaleCache,
    #[error("finite-difference step must be positive and finite")]
    DegenerateStep,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("targets do not match inputs: {0}")]
    InvalidTargets(String),
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Elementwise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output. For ReLU the
    /// subgradient at 0 is taken as 0.
    #[inline]
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self, NnError> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            2 => Ok(Activation::Sigmoid),
            other => Err(NnError::BadModelFile(format!(
                "unknown activation code {other}"
            ))),
        }
    }
}

/// One dense layer: `out = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// A dense feed-forward network with chained layer dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidConfig("network needs at least one layer"));
        }
        for i in 1..layers.len() {
            if layers[i].input_dim() != layers[i - 1].output_dim() {
                return Err(NnError::LayerChainBroken {
                    layer: i,
                    previous: layers[i - 1].output_dim(),
                    input: layers[i].input_dim(),
                });
            }
            if layers[i].biases.len() != layers[i].output_dim() {
                return Err(NnError::ShapeMismatch {
                    expected: layers[i].output_dim(),
                    found: layers[i].biases.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// He-uniform initialization: weights from `U(-L, L)` with
    /// `L = sqrt(6 / fan_in)`, biases zero, drawn from a ChaCha8 stream.
    pub fn with_random_init(
        dims: &[usize],
        activations: &[Activation],
        seed: u64,
    ) -> Result<Self, NnError> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(NnError::InvalidConfig(
                "need n+1 dims and n activations for an n-layer network",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &activation) in activations.iter().enumerate() {
            let fan_in = dims[i];
            let fan_out = dims[i + 1];
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-limit..limit)
            });
            layers.push(Layer {
                weights,
                biases: Array1::zeros(fan_out),
                activation,
            });
        }
        DenseNet::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that also returns the per-layer activations needed by
    /// [`backward`]. Index 0 of the cache is the input itself.
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let input = ArrayView1::from(activations.last().unwrap().as_slice());
            let mut out = Vec::with_capacity(layer.output_dim());
            for (row, &b) in layer.weights.outer_iter().zip(layer.biases.iter()) {
                out.push(layer.activation.apply(row.dot(&input) + b));
            }
            activations.push(out);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, ForwardCache { activations }))
    }

    /// Batched forward pass: `inputs` is `n x input_dim`, output `n x out`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        self.forward_batch_cached(inputs).0
    }

    fn forward_batch_cached(&self, inputs: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        assert_eq!(inputs.ncols(), self.input_dim(), "batch input width");
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for layer in &self.layers {
            let mut z = acts.last().unwrap().dot(&layer.weights.t());
            z += &layer.biases;
            z.mapv_inplace(|v| layer.activation.apply(v));
            acts.push(z);
        }
        (acts.last().unwrap().clone(), acts)
    }
}

/// Per-layer activations recorded by [`DenseNet::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients, shape-congruent with a [`DenseNet`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.biases.raw_dim()))
                .collect(),
        }
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && self
                .weights
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.raw_dim() == l.weights.raw_dim())
            && self
                .biases
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.raw_dim() == l.biases.raw_dim())
    }
}

/// Cross-entropy over logits: `loss = -log softmax(logits)[label]`,
/// gradient `softmax(logits) - onehot(label)`. Uses max-subtraction so
/// large logits cannot overflow.
pub fn loss_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean squared error: `loss = mean((output - target)^2)`, gradient
/// `2 (output - target) / n`.
pub fn loss_mse(output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if output.len() != target.len() {
        return Err(NnError::ShapeMismatch {
            expected: target.len(),
            found: output.len(),
        });
    }
    let n = output.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(output.len());
    for (&o, &t) in output.iter().zip(target) {
        let d = o - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, grad))
}

/// Exact reverse-mode gradients of the composed network for one input,
/// given the cache of a matching forward pass and the loss gradient with
/// respect to the network output.
pub fn backward(
    net: &DenseNet,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<Gradients, NnError> {
    if cache.activations.len() != net.layers.len() + 1 {
        return Err(NnError::StaleCache);
    }
    for (a, l) in cache.activations[1..].iter().zip(&net.layers) {
        if a.len() != l.output_dim() {
            return Err(NnError::StaleCache);
        }
    }
    if cache.activations[0].len() != net.input_dim() {
        return Err(NnError::StaleCache);
    }
    if output_grad.len() != net.output_dim() {
        return Err(NnError::ShapeMismatch {
            expected: net.output_dim(),
            found: output_grad.len(),
        });
    }

    let mut grads = Gradients::zeros_like(net);
    let mut upstream: Vec<f64> = output_grad.to_vec();
    for (l, layer) in net.layers.iter().enumerate().rev() {
        let out = &cache.activations[l + 1];
        let input = &cache.activations[l];
        // delta = dL/dz for this layer
        let delta: Vec<f64> = upstream
            .iter()
            .zip(out)
            .map(|(&g, &o)| g * layer.activation.derivative_from_output(o))
            .collect();
        for (o, &d) in delta.iter().enumerate() {
            let mut row = grads.weights[l].row_mut(o);
            for (w, &x) in row.iter_mut().zip(input) {
                *w = d * x;
            }
            grads.biases[l][o] = d;
        }
        if l > 0 {
            let mut next = vec![0.0; layer.input_dim()];
            for (o, &d) in delta.iter().enumerate() {
                let row = layer.weights.row(o);
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            upstream = next;
        }
    }
    Ok(grads)
}

/// One SGD step: every parameter `p <- p - lr * g`.
pub fn sgd_update(net: &mut DenseNet, grads: &Gradients, lr: f64) -> Result<(), NnError> {
    if !grads.matches(net) {
        return Err(NnError::StaleCache);
    }
    for (layer, (gw, gb)) in net
        .layers
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
    {
        layer.weights.scaled_add(-lr, gw);
        layer.biases.scaled_add(-lr, gb);
    }
    Ok(())
}

/// The supervised target attached to one input.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class index for the cross-entropy head.
    Label(usize),
    /// Reference vector for the mean-squared-error head.
    Recall(&'a [f64]),
}

fn loss_for(net: &DenseNet, x: &[f64], target: Target<'_>) -> Result<f64, NnError> {
    let out = net.forward(x)?;
    match target {
        Target::Label(label) => Ok(loss_cross_entropy(&out, label).0),
        Target::Recall(t) => Ok(loss_mse(&out, t)?.0),
    }
}

/// Compares [`backward`] against central differences
/// `(L(p+h) - L(p-h)) / 2h` over every parameter, returning the maximum
/// relative error. Intended for small networks; cost is two forward passes
/// per parameter.
pub fn finite_diff_check(
    net: &DenseNet,
    x: &[f64],
    target: Target<'_>,
    h: f64,
) -> Result<f64, NnError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(NnError::DegenerateStep);
    }
    let (out, cache) = net.forward_cached(x)?;
    let out_grad = match target {
        Target::Label(label) => loss_cross_entropy(&out, label).1,
        Target::Recall(t) => loss_mse(&out, t)?.1,
    };
    let analytic = backward(net, &cache, &out_grad)?;

    let mut max_rel = 0.0f64;
    let mut probe = net.clone();
    for l in 0..net.layers.len() {
        for ((r, c), &a) in net.layers[l].weights.indexed_iter() {
            probe.layers[l].weights[(r, c)] = net.layers[l].weights[(r, c)] + h;
            let plus = loss_for(&probe, x, target)?;
            probe.layers[l].weights[(r, c)] = net.layers[l].weights[(r, c)] - h;
            let minus = loss_for(&probe, x, target)?;
            probe.layers[l].weights[(r, c)] = net.layers[l].weights[(r, c)];
            let numeric = (plus - minus) / (2.0 * h);
            let analytic_val = analytic.weights[l][(r, c)];
            max_rel = max_rel.max(relative_error(numeric, analytic_val));
            let _ = a;
        }
        for (i, &a) in net.layers[l].biases.indexed_iter() {
            probe.layers[l].biases[i] = net.layers[l].biases[i] + h;
            let plus = loss_for(&probe, x, target)?;
            probe.layers[l].biases[i] = net.layers[l].biases[i] - h;
            let minus = loss_for(&probe, x, target)?;
            probe.layers[l].biases[i] = net.layers[l].biases[i];
            let numeric = (plus - minus) / (2.0 * h);
            max_rel = max_rel.max(relative_error(numeric, analytic.biases[l][i]));
            let _ = a;
        }
    }
    Ok(max_rel)
}

fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8)
}

/// Which loss head a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl LossKind {
    fn code(self) -> u8 {
        match self {
            LossKind::CrossEntropy => 0,
            LossKind::Mse => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, NnError> {
        match code {
            0 => Ok(LossKind::CrossEntropy),
            1 => Ok(LossKind::Mse),
            other => Err(NnError::BadModelFile(format!("unknown loss code {other}"))),
        }
    }
}

/// Hyperparameters for one SGD training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(NnError::InvalidConfig("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Supervision for [`train`].
#[derive(Debug, Clone)]
pub enum TrainTargets {
    /// Class labels for the cross-entropy head.
    Labels(Vec<usize>),
    /// Recall supervision: each sample's target is the row of
    /// `class_targets` selected by its label.
    PerClassImages {
        labels: Vec<usize>,
        class_targets: Array2<f64>,
    },
}

impl TrainTargets {
    fn len(&self) -> usize {
        match self {
            TrainTargets::Labels(l) => l.len(),
            TrainTargets::PerClassImages { labels, .. } => labels.len(),
        }
    }
}

/// Loss and (for the logit head) accuracy measured over one epoch's
/// minibatch outputs, before each update.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: Option<f64>,
}

/// Minibatch SGD. Deterministic given the seed: initialization happens in
/// the caller (pass an initialized net), the shuffle stream is ChaCha8 from
/// `cfg.seed`, and minibatches are processed in order single-threaded.
pub fn train(
    mut net: DenseNet,
    inputs: ArrayView2<f32>,
    targets: &TrainTargets,
    cfg: &TrainConfig,
) -> Result<(DenseNet, Vec<EpochStats>), NnError> {
    cfg.validate()?;
    let n = inputs.nrows();
    if targets.len() != n {
        return Err(NnError::InvalidTargets(format!(
            "{} targets for {} inputs",
            targets.len(),
            n
        )));
    }
    if inputs.ncols() != net.input_dim() {
        return Err(NnError::ShapeMismatch {
            expected: net.input_dim(),
            found: inputs.ncols(),
        });
    }
    match (cfg.loss, targets) {
        (LossKind::CrossEntropy, TrainTargets::Labels(labels)) => {
            if labels.iter().any(|&l| l >= net.output_dim()) {
                return Err(NnError::InvalidTargets("label out of range".into()));
            }
        }
        (LossKind::Mse, TrainTargets::PerClassImages {
            labels,
            class_targets,
        }) => {
            if class_targets.ncols() != net.output_dim() {
                return Err(NnError::ShapeMismatch {
                    expected: net.output_dim(),
                    found: class_targets.ncols(),
                });
            }
            if labels.iter().any(|&l| l >= class_targets.nrows()) {
                return Err(NnError::InvalidTargets("label out of range".into()));
            }
        }
        _ => {
            return Err(NnError::InvalidTargets(
                "loss kind does not match target kind".into(),
            ))
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut batch = Array2::<f64>::zeros((b, inputs.ncols()));
            for (row, &idx) in chunk.iter().enumerate() {
                for (col, &v) in inputs.row(idx).iter().enumerate() {
                    batch[(row, col)] = f64::from(v);
                }
            }
            let (out, acts) = net.forward_batch_cached(batch.view());
            let mut dout = Array2::<f64>::zeros(out.raw_dim());
            match (cfg.loss, targets) {
                (LossKind::CrossEntropy, TrainTargets::Labels(labels)) => {
                    for (row, &idx) in chunk.iter().enumerate() {
                        let label = labels[idx];
                        let logits = out.row(row);
                        let (loss, grad) =
                            loss_cross_entropy(logits.as_slice().unwrap(), label);
                        loss_sum += loss;
                        let argmax = argmax_slice(logits.as_slice().unwrap());
                        if argmax == label {
                            correct += 1;
                        }
                        for (col, g) in grad.iter().enumerate() {
                            dout[(row, col)] = g / b as f64;
                        }
                    }
                }
                (LossKind::Mse, TrainTargets::PerClassImages {
                    labels,
                    class_targets,
                }) => {
                    for (row, &idx) in chunk.iter().enumerate() {
                        let target = class_targets.row(labels[idx]);
                        let output = out.row(row);
                        let (loss, grad) = loss_mse(
                            output.as_slice().unwrap(),
                            target.as_slice().unwrap(),
                        )?;
                        loss_sum += loss;
                        for (col, g) in grad.iter().enumerate() {
                            dout[(row, col)] = g / b as f64;
                        }
                    }
                }
                _ => unreachable!("validated above"),
            }
            backward_batch_and_update(&mut net, &acts, dout, cfg.learning_rate);
        }
        let mean_loss = loss_sum / n as f64;
        if !mean_loss.is_finite() {
            return Err(NnError::DivergenceDetected { epoch });
        }
        let accuracy = match cfg.loss {
            LossKind::CrossEntropy => Some(correct as f64 / n as f64),
            LossKind::Mse => None,
        };
        stats.push(EpochStats {
            epoch,
            mean_loss,
            accuracy,
        });
    }
    Ok((net, stats))
}

/// Batched backprop and in-place SGD step. `dout` must already carry the
/// 1/batch mean scaling.
fn backward_batch_and_update(
    net: &mut DenseNet,
    acts: &[Array2<f64>],
    mut dout: Array2<f64>,
    lr: f64,
) {
    for l in (0..net.layers.len()).rev() {
        let activation = net.layers[l].activation;
        // dZ = dOut ⊙ act'(out)
        dout.zip_mut_with(&acts[l + 1], |g, &o| {
            *g *= activation.derivative_from_output(o)
        });
        let grad_w = dout.t().dot(&acts[l]);
        let grad_b = dout.sum_axis(Axis(0));
        let upstream = if l > 0 {
            Some(dout.dot(&net.layers[l].weights))
        } else {
            None
        };
        net.layers[l].weights.scaled_add(-lr, &grad_w);
        net.layers[l].biases.scaled_add(-lr, &grad_b);
        if let Some(u) = upstream {
            dout = u;
        }
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax_slice(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

const NET_MAGIC: &[u8; 8] = b"RBNET001";

/// Serializes a network with its training provenance (loss head and seed)
/// to the flat binary format: magic, layer count, per-layer dims and
/// activation codes, loss code, seed, then little-endian f64 weight and
/// bias arrays in layer order (weights row-major).
pub fn write_net_bytes(net: &DenseNet, loss: LossKind, seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(NET_MAGIC);
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        out.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
        out.push(layer.activation.code());
    }
    out.push(loss.code());
    out.extend_from_slice(&seed.to_le_bytes());
    for layer in &net.layers {
        let mut buf = vec![0u8; layer.weights.len() * 8];
        LittleEndian::write_f64_into(layer.weights.as_slice().unwrap(), &mut buf);
        out.extend_from_slice(&buf);
        let mut buf = vec![0u8; layer.biases.len() * 8];
        LittleEndian::write_f64_into(layer.biases.as_slice().unwrap(), &mut buf);
        out.extend_from_slice(&buf);
    }
    out
}

/// Inverse of [`write_net_bytes`].
pub fn read_net_bytes(bytes: &[u8]) -> Result<(DenseNet, LossKind, u64), NnError> {
    let mut cur = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(NnError::BadModelFile("bad magic".into()));
    }
    let layer_count = cur.read_u32::<LittleEndian>()? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(NnError::BadModelFile(format!(
            "implausible layer count {layer_count}"
        )));
    }
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let input = cur.read_u32::<LittleEndian>()? as usize;
        let output = cur.read_u32::<LittleEndian>()? as usize;
        let activation = Activation::from_code(cur.read_u8()?)?;
        shapes.push((input, output, activation));
    }
    let loss = LossKind::from_code(cur.read_u8()?)?;
    let seed = cur.read_u64::<LittleEndian>()?;
    let mut layers = Vec::with_capacity(layer_count);
    for (input, output, activation) in shapes {
        let mut w = vec![0f64; input * output];
        cur.read_f64_into::<LittleEndian>(&mut w)?;
        let weights = Array2::from_shape_vec((output, input), w)
            .map_err(|e| NnError::BadModelFile(e.to_string()))?;
        let mut b = vec![0f64; output];
        cur.read_f64_into::<LittleEndian>(&mut b)?;
        layers.push(Layer {
            weights,
            biases: Array1::from_vec(b),
            activation,
        });
    }
    if cur.position() != bytes.len() as u64 {
        return Err(NnError::BadModelFile("trailing bytes".into()));
    }
    Ok((DenseNet::new(layers)?, loss, seed))
}

pub fn save_net(net: &DenseNet, loss: LossKind, seed: u64, path: &Path) -> Result<(), NnError> {
    fs::write(path, write_net_bytes(net, loss, seed))?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<(DenseNet, LossKind, u64), NnError> {
    read_net_bytes(&fs::read(path)?)
}
