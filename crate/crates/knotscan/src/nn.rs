//! From-scratch dense feed-forward network.
//!
//! Architecture and protocol are fixed by the study design: rectifier hidden
//! layers (default three of width one hundred), a softmax head trained under
//! sparse categorical cross-entropy for classification or a rectifier head
//! under mean squared error for regression, Adam updates over shuffled
//! mini-batches, and a seeded train/test split. Training is bit-reproducible
//! for a given seed, config, and data.

use std::io::{self, BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("not enough rows to train/test split ({rows})")]
    InsufficientData { rows: usize },
    #[error("target at row {index} is {value}, not a class label in [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        value: f64,
        num_classes: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model file error at line {line}: {detail}")]
    BadModelFile { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Prediction task; classification nets end in `num_classes` softmax units,
/// regression nets in a single rectifier unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
}

impl Task {
    pub fn output_width(self) -> usize {
        match self {
            Task::Classification { num_classes } => num_classes,
            Task::Regression => 1,
        }
    }
}

/// Adam optimizer hyperparameters. `epsilon_hat` is added outside the square
/// root: update = lr * m_hat / (sqrt(v_hat) + epsilon_hat).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub task: Task,
    pub epochs: usize,
    pub train_fraction: f64,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub seed: u64,
    /// Alternative cross-entropy -log v_k - sum_{i!=k} log(1 - v_i) instead
    /// of the standard -log v_k. Off by default.
    pub footnote_loss: bool,
}

impl NetworkConfig {
    pub fn classification(num_classes: usize, seed: u64) -> Self {
        Self::with_task(Task::Classification { num_classes }, seed)
    }

    pub fn regression(seed: u64) -> Self {
        Self::with_task(Task::Regression, seed)
    }

    fn with_task(task: Task, seed: u64) -> Self {
        Self {
            hidden_layers: 3,
            hidden_width: 100,
            task,
            epochs: 100,
            train_fraction: 0.8,
            batch_size: 32,
            adam: AdamParams::default(),
            seed,
            footnote_loss: false,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: &str| Err(NetError::InvalidConfig(msg.to_string()));
        if let Task::Classification { num_classes } = self.task {
            if num_classes < 2 {
                return bad("classification requires at least 2 classes");
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        Ok(())
    }
}

/// One dense layer: weights are input-by-output, bias is per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn input_width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.ncols()
    }
}

/// An immutable trained network. `label_offset` maps class indices back to
/// the original integer invariant values (prediction = argmax + offset).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    layers: Vec<DenseLayer>,
    config: NetworkConfig,
    label_offset: i64,
}

/// Per-layer activations recorded during a forward pass.
///
/// `activations[0]` is the input; `activations[l+1]` is layer l's output
/// after its activation (rectifier for hidden layers, the task head for the
/// final layer). `pre_activations[l]` is layer l's affine output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Labels(Array1<i64>),
    Values(Array1<f64>),
}

impl TrainedNetwork {
    /// Assembles a network from explicit parameters, checking that layer
    /// dimensions chain and the head width matches the task.
    pub fn from_parts(
        layers: Vec<DenseLayer>,
        config: NetworkConfig,
        label_offset: i64,
    ) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::InvalidConfig("network needs layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(NetError::DimensionMismatch {
                    what: "layer chaining",
                    expected: pair[0].output_width(),
                    actual: pair[1].input_width(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_width() {
                return Err(NetError::DimensionMismatch {
                    what: "bias width",
                    expected: layer.output_width(),
                    actual: layer.bias.len(),
                });
            }
        }
        let head = layers.last().expect("nonempty").output_width();
        if head != config.task.output_width() {
            return Err(NetError::DimensionMismatch {
                what: "head width",
                expected: config.task.output_width(),
                actual: head,
            });
        }
        Ok(Self {
            layers,
            config,
            label_offset,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn label_offset(&self) -> i64 {
        self.label_offset
    }

    /// Same network with a different label offset; used after training on
    /// shifted labels to map predictions back to invariant values.
    pub fn with_label_offset(mut self, label_offset: i64) -> Self {
        self.label_offset = label_offset;
        self
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NetError> {
        if x.ncols() != self.input_width() {
            return Err(NetError::DimensionMismatch {
                what: "input features",
                expected: self.input_width(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass over a batch, recording every layer's pre-activation and
    /// activation (the relevance propagation pass consumes these).
    pub fn forward_trace(&self, x: &Array2<f64>) -> Result<ForwardTrace, NetError> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut activations = vec![x.to_owned()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = activations[l].dot(&layer.weights) + &layer.bias;
            let a = if l < last {
                relu(&z)
            } else {
                match self.config.task {
                    Task::Classification { .. } => softmax_rows(&z),
                    Task::Regression => relu(&z),
                }
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Predictions, NetError> {
        let trace = self.forward_trace(x)?;
        match self.config.task {
            Task::Classification { .. } => {
                // argmax over the head logits; ties resolve to the lowest index
                let logits = trace.pre_activations.last().expect("head");
                let labels = logits
                    .outer_iter()
                    .map(|row| {
                        let mut best = 0;
                        for (j, &v) in row.iter().enumerate() {
                            if v > row[best] {
                                best = j;
                            }
                        }
                        best as i64 + self.label_offset
                    })
                    .collect();
                Ok(Predictions::Labels(labels))
            }
            Task::Regression => {
                let out = trace.activations.last().expect("head");
                Ok(Predictions::Values(out.column(0).to_owned()))
            }
        }
    }

    /// Predictions as plain numbers: class invariant values for
    /// classification, regression outputs otherwise.
    pub fn predict_values(&self, x: &Array2<f64>) -> Result<Array1<f64>, NetError> {
        Ok(match self.predict(x)? {
            Predictions::Labels(l) => l.mapv(|v| v as f64),
            Predictions::Values(v) => v,
        })
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Row-wise softmax with max subtraction for numeric stability. Rows are
/// positive and sum to one.
pub(crate) fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Shuffled train/test partition of a feature matrix and target vector.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train_x: Array2<f64>,
    pub train_y: Array1<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array1<f64>,
}

/// Deterministically shuffles rows by `seed`, then assigns the first
/// floor(fraction * n) to train and the rest to test.
pub fn split(
    x: &Array2<f64>,
    y: &Array1<f64>,
    fraction: f64,
    seed: u64,
) -> Result<SplitData, NetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(NetError::InvalidConfig(
            "split fraction must lie strictly between 0 and 1".into(),
        ));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(NetError::DimensionMismatch {
            what: "target length",
            expected: n,
            actual: y.len(),
        });
    }
    if n < 2 {
        return Err(NetError::InsufficientData { rows: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", 0));
    order.shuffle(&mut rng);
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(NetError::InsufficientData { rows: n });
    }
    let (train_idx, test_idx) = order.split_at(n_train);
    Ok(SplitData {
        train_x: x.select(Axis(0), train_idx),
        train_y: y.select(Axis(0), train_idx),
        test_x: x.select(Axis(0), test_idx),
        test_y: y.select(Axis(0), test_idx),
    })
}

struct Gradients {
    dw: Vec<Array2<f64>>,
    db: Vec<Array1<f64>>,
}

/// Head loss and its gradient with respect to the head pre-activation,
/// both averaged over the batch.
fn head_loss_delta(
    config: &NetworkConfig,
    z_head: &Array2<f64>,
    head_out: &Array2<f64>,
    targets: &Array1<f64>,
) -> (f64, Array2<f64>) {
    let batch = z_head.nrows() as f64;
    match config.task {
        Task::Classification { .. } => {
            let p = head_out;
            let mut delta = p.to_owned();
            let mut loss = 0.0;
            if config.footnote_loss {
                // L = -log v_k - sum_{i != k} log(1 - v_i); back through the
                // softmax Jacobian: dL/dz = v (g - g.v) with g = dL/dv.
                for (i, row) in p.outer_iter().enumerate() {
                    let k = targets[i] as usize;
                    let clamp = |v: f64| v.clamp(1e-12, 1.0 - 1e-12);
                    let g: Vec<f64> = row
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            if j == k {
                                loss -= clamp(v).ln();
                                -1.0 / clamp(v)
                            } else {
                                loss -= (1.0 - clamp(v)).ln();
                                1.0 / (1.0 - clamp(v))
                            }
                        })
                        .collect();
                    let dot: f64 = g.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                    for (j, d) in delta.row_mut(i).iter_mut().enumerate() {
                        *d = row[j] * (g[j] - dot) / batch;
                    }
                }
            } else {
                // standard sparse categorical cross-entropy; the fused
                // gradient through softmax is (v - one_hot) / batch
                for (i, row) in p.outer_iter().enumerate() {
                    let k = targets[i] as usize;
                    loss -= row[k].max(1e-12).ln();
                    delta[(i, k)] -= 1.0;
                }
                delta.mapv_inplace(|v| v / batch);
            }
            (loss / batch, delta)
        }
        Task::Regression => {
            let out = head_out.column(0);
            let mut loss = 0.0;
            let mut delta = Array2::zeros(z_head.raw_dim());
            for i in 0..out.len() {
                let err = out[i] - targets[i];
                loss += err * err;
                // rectifier head: gradient passes only where z > 0
                delta[(i, 0)] = if z_head[(i, 0)] > 0.0 {
                    2.0 * err / batch
                } else {
                    0.0
                };
            }
            (loss / batch, delta)
        }
    }
}

fn backward(net: &TrainedNetwork, trace: &ForwardTrace, delta_head: Array2<f64>) -> Gradients {
    let layers = net.layers();
    let mut dw = vec![Array2::zeros((0, 0)); layers.len()];
    let mut db = vec![Array1::zeros(0); layers.len()];
    let mut delta = delta_head;
    for l in (0..layers.len()).rev() {
        dw[l] = trace.activations[l].t().dot(&delta);
        db[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            delta = delta.dot(&layers[l].weights.t());
            // rectifier derivative on the previous layer's pre-activation
            delta
                .zip_mut_with(&trace.pre_activations[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
    }
    Gradients { dw, db }
}

struct Adam {
    params: AdamParams,
    step_count: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    fn new(params: AdamParams, layers: &[DenseLayer]) -> Self {
        let zeros = |l: &DenseLayer| {
            (
                Array2::zeros(l.weights.raw_dim()),
                Array1::zeros(l.bias.raw_dim()),
            )
        };
        Self {
            params,
            step_count: 0,
            m: layers.iter().map(zeros).collect(),
            v: layers.iter().map(zeros).collect(),
        }
    }

    fn step(&mut self, layers: &mut [DenseLayer], grads: &Gradients) {
        self.step_count += 1;
        let p = self.params;
        let bc1 = 1.0 - p.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - p.beta2.powi(self.step_count as i32);
        for (l, layer) in layers.iter_mut().enumerate() {
            adam_update(
                layer.weights.iter_mut(),
                self.m[l].0.iter_mut(),
                self.v[l].0.iter_mut(),
                grads.dw[l].iter(),
                p,
                bc1,
                bc2,
            );
            adam_update(
                layer.bias.iter_mut(),
                self.m[l].1.iter_mut(),
                self.v[l].1.iter_mut(),
                grads.db[l].iter(),
                p,
                bc1,
                bc2,
            );
        }
    }
}

/// Bias-corrected Adam update for one parameter tensor (iterated in
/// logical order, so array layout does not matter).
fn adam_update<'a>(
    theta: impl Iterator<Item = &'a mut f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    g: impl Iterator<Item = &'a f64>,
    p: AdamParams,
    bias_correction1: f64,
    bias_correction2: f64,
) {
    for (((theta, m), v), &g) in theta.zip(m).zip(v).zip(g) {
        *m = p.beta1 * *m + (1.0 - p.beta1) * g;
        *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
        let m_hat = *m / bias_correction1;
        let v_hat = *v / bias_correction2;
        *theta -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon_hat);
    }
}

/// Glorot-uniform initialized network for the given input width; biases zero.
fn init_network(config: &NetworkConfig, input_width: usize) -> Result<TrainedNetwork, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init", 0));
    let mut widths = vec![input_width];
    widths.extend(std::iter::repeat_n(config.hidden_width, config.hidden_layers));
    widths.push(config.task.output_width());
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DenseLayer {
                weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                    rng.random_range(-limit..limit)
                }),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    TrainedNetwork::from_parts(layers, config.clone(), 0)
}

fn validate_training_data(
    x: &Array2<f64>,
    y: &Array1<f64>,
    config: &NetworkConfig,
) -> Result<(), NetError> {
    if y.len() != x.nrows() {
        return Err(NetError::DimensionMismatch {
            what: "target length",
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(NetError::InsufficientData { rows: x.nrows() });
    }
    if let Task::Classification { num_classes } = config.task {
        for (i, &t) in y.iter().enumerate() {
            if t.fract() != 0.0 || t < 0.0 || t >= num_classes as f64 {
                return Err(NetError::LabelOutOfRange {
                    index: i,
                    value: t,
                    num_classes,
                });
            }
        }
    }
    Ok(())
}

/// Trains a network; classification targets are 0-based class indices
/// (as produced by the label-shifting preprocessing).
pub fn train(
    x: &Array2<f64>,
    y: &Array1<f64>,
    config: &NetworkConfig,
) -> Result<TrainedNetwork, NetError> {
    Ok(train_with_history(x, y, config)?.0)
}

/// Like [`train`] but also returns the mean training loss per epoch.
pub fn train_with_history(
    x: &Array2<f64>,
    y: &Array1<f64>,
    config: &NetworkConfig,
) -> Result<(TrainedNetwork, Vec<f64>), NetError> {
    config.validate()?;
    validate_training_data(x, y, config)?;
    let mut net = init_network(config, x.ncols())?;
    let mut adam = Adam::new(config.adam, net.layers());
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "epoch", epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let trace = net.forward_trace(&xb)?;
            let (loss, delta) = head_loss_delta(
                config,
                trace.pre_activations.last().expect("head"),
                trace.activations.last().expect("head"),
                &yb,
            );
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, batch });
            }
            let grads = backward(&net, &trace, delta);
            adam.step(&mut net.layers, &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / n as f64);
    }

    let finite = net
        .layers
        .iter()
        .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(NetError::NonFiniteLoss {
            epoch: config.epochs - 1,
            batch: n.div_ceil(config.batch_size).saturating_sub(1),
        });
    }
    Ok((net, history))
}

/// Training loss for the current parameters on one batch (no update).
fn loss_only(net: &TrainedNetwork, x: &Array2<f64>, y: &Array1<f64>) -> Result<f64, NetError> {
    let trace = net.forward_trace(x)?;
    let (loss, _) = head_loss_delta(
        net.config(),
        trace.pre_activations.last().expect("head"),
        trace.activations.last().expect("head"),
        y,
    );
    Ok(loss)
}

#[derive(Debug, Clone, Copy)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub parameter_count: usize,
}

/// Compares analytic gradients against central finite differences
/// (step 1e-5) on a freshly initialized network over the whole batch.
/// Meant for reduced widths; cost is two loss evaluations per parameter.
pub fn gradient_check(
    x: &Array2<f64>,
    y: &Array1<f64>,
    config: &NetworkConfig,
) -> Result<GradientCheckReport, NetError> {
    const STEP: f64 = 1e-5;
    config.validate()?;
    validate_training_data(x, y, config)?;
    let mut net = init_network(config, x.ncols())?;
    let trace = net.forward_trace(x)?;
    let (_, delta) = head_loss_delta(
        config,
        trace.pre_activations.last().expect("head"),
        trace.activations.last().expect("head"),
        y,
    );
    let grads = backward(&net, &trace, delta);

    let mut max_rel = 0.0f64;
    let mut count = 0usize;
    for l in 0..net.layers.len() {
        // weights first, then bias, per layer; indices are logical row-major
        for part in 0..2 {
            let analytic_flat: Vec<f64> = if part == 0 {
                grads.dw[l].iter().copied().collect()
            } else {
                grads.db[l].iter().copied().collect()
            };
            for (i, &analytic) in analytic_flat.iter().enumerate() {
                let nudge = |net: &mut TrainedNetwork, delta: f64| {
                    if part == 0 {
                        let cols = net.layers[l].weights.ncols();
                        net.layers[l].weights[[i / cols, i % cols]] += delta;
                    } else {
                        net.layers[l].bias[i] += delta;
                    }
                };
                nudge(&mut net, STEP);
                let up = loss_only(&net, x, y)?;
                nudge(&mut net, -2.0 * STEP);
                let down = loss_only(&net, x, y)?;
                nudge(&mut net, STEP);
                let numeric = (up - down) / (2.0 * STEP);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
                count += 1;
            }
        }
    }
    Ok(GradientCheckReport {
        max_relative_error: max_rel,
        parameter_count: count,
    })
}

const MODEL_MAGIC: &str = "knotscan-model v1";

impl TrainedNetwork {
    /// Writes the model in a line-oriented text format. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{MODEL_MAGIC}")?;
        match self.config.task {
            Task::Classification { num_classes } => {
                writeln!(out, "task classification {num_classes}")?
            }
            Task::Regression => writeln!(out, "task regression")?,
        }
        writeln!(out, "label_offset {}", self.label_offset)?;
        writeln!(
            out,
            "hidden {} {}",
            self.config.hidden_layers, self.config.hidden_width
        )?;
        writeln!(out, "epochs {}", self.config.epochs)?;
        writeln!(out, "train_fraction {}", self.config.train_fraction)?;
        writeln!(out, "batch_size {}", self.config.batch_size)?;
        let a = self.config.adam;
        writeln!(
            out,
            "adam {} {} {} {}",
            a.learning_rate, a.beta1, a.beta2, a.epsilon_hat
        )?;
        writeln!(out, "footnote_loss {}", u8::from(self.config.footnote_loss))?;
        writeln!(out, "seed {}", self.config.seed)?;
        for layer in &self.layers {
            writeln!(
                out,
                "layer {} {}",
                layer.input_width(),
                layer.output_width()
            )?;
            for row in layer.weights.rows() {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(out, "w {}", cells.join(" "))?;
            }
            let cells: Vec<String> = layer.bias.iter().map(f64::to_string).collect();
            writeln!(out, "b {}", cells.join(" "))?;
        }
        writeln!(out, "end")?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: &mut R) -> Result<Self, NetError> {
        let mut lines = input.lines().enumerate();
        let mut next = |expect: &str| -> Result<(usize, String), NetError> {
            match lines.next() {
                Some((i, Ok(line))) => Ok((i + 1, line)),
                Some((i, Err(e))) => Err(NetError::BadModelFile {
                    line: i + 1,
                    detail: e.to_string(),
                }),
                None => Err(NetError::BadModelFile {
                    line: 0,
                    detail: format!("unexpected end of file, wanted {expect}"),
                }),
            }
        };
        let bad = |line: usize, detail: String| NetError::BadModelFile { line, detail };

        let (ln, magic) = next("header")?;
        if magic.trim() != MODEL_MAGIC {
            return Err(bad(ln, format!("bad header {magic:?}")));
        }

        fn field<'a>(line: &'a str, ln: usize, key: &str) -> Result<&'a str, NetError> {
            line.strip_prefix(key)
                .map(str::trim)
                .ok_or(NetError::BadModelFile {
                    line: ln,
                    detail: format!("expected {key:?} line"),
                })
        }
        fn num<T: std::str::FromStr>(tok: &str, ln: usize) -> Result<T, NetError> {
            tok.parse().map_err(|_| NetError::BadModelFile {
                line: ln,
                detail: format!("bad number {tok:?}"),
            })
        }

        let (ln, line) = next("task")?;
        let task_str = field(&line, ln, "task ")?;
        let task = if task_str == "regression" {
            Task::Regression
        } else if let Some(nc) = task_str.strip_prefix("classification ") {
            Task::Classification {
                num_classes: num(nc.trim(), ln)?,
            }
        } else {
            return Err(bad(ln, format!("unknown task {task_str:?}")));
        };

        let (ln, line) = next("label_offset")?;
        let label_offset: i64 = num(field(&line, ln, "label_offset ")?, ln)?;
        let (ln, line) = next("hidden")?;
        let hidden = field(&line, ln, "hidden ")?;
        let mut it = hidden.split_whitespace();
        let hidden_layers: usize = num(it.next().unwrap_or(""), ln)?;
        let hidden_width: usize = num(it.next().unwrap_or(""), ln)?;
        let (ln, line) = next("epochs")?;
        let epochs: usize = num(field(&line, ln, "epochs ")?, ln)?;
        let (ln, line) = next("train_fraction")?;
        let train_fraction: f64 = num(field(&line, ln, "train_fraction ")?, ln)?;
        let (ln, line) = next("batch_size")?;
        let batch_size: usize = num(field(&line, ln, "batch_size ")?, ln)?;
        let (ln, line) = next("adam")?;
        let toks: Vec<&str> = field(&line, ln, "adam ")?.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(bad(ln, "adam needs 4 numbers".into()));
        }
        let adam = AdamParams {
            learning_rate: num(toks[0], ln)?,
            beta1: num(toks[1], ln)?,
            beta2: num(toks[2], ln)?,
            epsilon_hat: num(toks[3], ln)?,
        };
        let (ln, line) = next("footnote_loss")?;
        let footnote_loss = num::<u8>(field(&line, ln, "footnote_loss ")?, ln)? != 0;
        let (ln, line) = next("seed")?;
        let seed: u64 = num(field(&line, ln, "seed ")?, ln)?;

        let config = NetworkConfig {
            hidden_layers,
            hidden_width,
            task,
            epochs,
            train_fraction,
            batch_size,
            adam,
            seed,
            footnote_loss,
        };

        let mut layers = Vec::new();
        loop {
            let (ln, line) = next("layer or end")?;
            if line.trim() == "end" {
                break;
            }
            let dims = field(&line, ln, "layer ")?;
            let mut it = dims.split_whitespace();
            let rows: usize = num(it.next().unwrap_or(""), ln)?;
            let cols: usize = num(it.next().unwrap_or(""), ln)?;
            let mut weights = Array2::zeros((rows, cols));
            for r in 0..rows {
                let (ln, line) = next("w")?;
                let toks: Vec<&str> = field(&line, ln, "w ")?.split_whitespace().collect();
                if toks.len() != cols {
                    return Err(bad(ln, format!("{} weights, expected {cols}", toks.len())));
                }
                for (c, tok) in toks.iter().enumerate() {
                    weights[(r, c)] = num(tok, ln)?;
                }
            }
            let (ln, line) = next("b")?;
            let toks: Vec<&str> = field(&line, ln, "b ")?.split_whitespace().collect();
            if toks.len() != cols {
                return Err(bad(ln, format!("{} biases, expected {cols}", toks.len())));
            }
            let mut bias = Array1::zeros(cols);
            for (c, tok) in toks.iter().enumerate() {
                bias[c] = num(tok, ln)?;
            }
            layers.push(DenseLayer { weights, bias });
        }
        TrainedNetwork::from_parts(layers, config, label_offset)
    }

    pub fn save_file(&self, path: &Path) -> Result<(), NetError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self, NetError> {
        let file = std::fs::File::open(path)?;
        let mut reader = io::BufReader::new(file);
        Self::read_from(&mut reader)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy_classification(n: usize) -> (Array2<f64>, Array1<f64>) {
        // two well-separated clusters on a single feature
        let x = Array2::from_shape_fn((n, 1), |(i, _)| {
            if i % 2 == 0 {
                -1.0 - (i as f64 % 7.0) / 10.0
            } else {
                1.0 + (i as f64 % 5.0) / 10.0
            }
        });
        let y = Array1::from_shape_fn(n, |i| (i % 2) as f64);
        (x, y)
    }

    fn small_config(task: Task, seed: u64) -> NetworkConfig {
        let mut c = NetworkConfig::with_task(task, seed);
        c.hidden_width = 8;
        c
    }

    #[test]
    fn split_sizes_and_determinism() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64);
        let y = Array1::from_shape_fn(10, |i| i as f64);
        let s = split(&x, &y, 0.8, 42).unwrap();
        assert_eq!(s.train_x.nrows(), 8);
        assert_eq!(s.test_x.nrows(), 2);

        // partition is disjoint and exhaustive: target values are distinct ids
        let mut seen: Vec<f64> = s.train_y.iter().chain(s.test_y.iter()).copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());

        let s2 = split(&x, &y, 0.8, 42).unwrap();
        assert_eq!(s.train_y, s2.train_y);
        let s3 = split(&x, &y, 0.8, 43).unwrap();
        assert_ne!(s.train_y, s3.train_y);
    }

    #[test]
    fn split_matches_floor_arithmetic_at_dataset_scale() {
        let x = Array2::zeros((2970, 1));
        let y = Array1::zeros(2970);
        let s = split(&x, &y, 0.8, 0).unwrap();
        assert_eq!(s.train_x.nrows(), 2376);
        assert_eq!(s.test_x.nrows(), 594);
    }

    #[test]
    fn separable_classification_reaches_full_accuracy() {
        let (x, y) = toy_classification(60);
        let config = small_config(Task::Classification { num_classes: 2 }, 1);
        let s = split(&x, &y, 0.8, 1).unwrap();
        let net = train(&s.train_x, &s.train_y, &config).unwrap();
        let pred = net.predict_values(&s.test_x).unwrap();
        let correct = pred
            .iter()
            .zip(s.test_y.iter())
            .filter(|(a, b)| a == b)
            .count();
        assert_eq!(correct, s.test_y.len());
    }

    #[test]
    fn constant_regression_fits_constant() {
        let x = Array2::from_shape_fn((50, 3), |(i, j)| ((i + j) % 10) as f64 / 10.0);
        let y = Array1::from_elem(50, 5.0);
        // full hidden width: reaching the constant needs the whole layer's
        // capacity within the fixed step budget
        let config = NetworkConfig::regression(2);
        let net = train(&x, &y, &config).unwrap();
        let pred = net.predict_values(&x).unwrap();
        for &p in pred.iter() {
            assert!((p - 5.0).abs() / 5.0 < 0.01, "prediction {p} not near 5");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = array![[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0], [0.0, 0.0, 0.0]];
        let p = softmax_rows(&z);
        for row in p.outer_iter() {
            assert!(row.iter().all(|&v| v > 0.0 || v == 0.0));
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_matches_hand_computation() {
        // constant gradient 0.5 from theta = 1: with exact bias correction
        // m_hat = 0.5 and v_hat = 0.25 at every step, so each step subtracts
        // lr * 0.5 / (0.5 + eps)
        let p = AdamParams::default();
        let mut theta = [1.0];
        let mut m = [0.0];
        let mut v = [0.0];
        let per_step = 0.001 * 0.5 / (0.5 + 1e-7);
        let g = [0.5];
        for t in 1..=3u64 {
            let bc1 = 1.0 - p.beta1.powi(t as i32);
            let bc2 = 1.0 - p.beta2.powi(t as i32);
            adam_update(
                theta.iter_mut(),
                m.iter_mut(),
                v.iter_mut(),
                g.iter(),
                p,
                bc1,
                bc2,
            );
            assert_abs_diff_eq!(theta[0], 1.0 - t as f64 * per_step, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(m[0], 0.5 * (1.0 - 0.9f64.powi(3)), epsilon = 1e-15);
        assert_abs_diff_eq!(v[0], 0.25 * (1.0 - 0.999f64.powi(3)), epsilon = 1e-15);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (x, y) = toy_classification(40);
        let config = small_config(Task::Classification { num_classes: 2 }, 7);
        let a = train(&x, &y, &config).unwrap();
        let b = train(&x, &y, &config).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert!(la
                .weights
                .iter()
                .zip(lb.weights.iter())
                .all(|(u, v)| u.to_bits() == v.to_bits()));
            assert!(la
                .bias
                .iter()
                .zip(lb.bias.iter())
                .all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn zero_weight_prediction_takes_max_bias_lowest_index_ties() {
        let config = small_config(Task::Classification { num_classes: 3 }, 0);
        let layers = vec![DenseLayer {
            weights: Array2::zeros((2, 3)),
            bias: array![0.5, 2.0, 2.0],
        }];
        let mut cfg = config;
        cfg.hidden_layers = 0;
        let net = TrainedNetwork::from_parts(layers, cfg, 10).unwrap();
        let pred = net.predict(&array![[1.0, -1.0]]).unwrap();
        // classes 1 and 2 tie at bias 2.0; the lower index wins, plus offset
        assert_eq!(pred, Predictions::Labels(array![11]));
    }

    #[test]
    fn regression_predictions_are_nonnegative() {
        let layers = vec![DenseLayer {
            weights: array![[-5.0], [1.0]],
            bias: array![-3.0],
        }];
        let mut cfg = small_config(Task::Regression, 0);
        cfg.hidden_layers = 0;
        let net = TrainedNetwork::from_parts(layers, cfg, 0).unwrap();
        let pred = net.predict_values(&array![[10.0, 0.0], [0.0, 10.0]]).unwrap();
        assert_eq!(pred, array![0.0, 7.0]);
    }

    #[test]
    fn gradient_check_small_regression_net() {
        let mut config = small_config(Task::Regression, 3);
        config.hidden_width = 2;
        // keep inputs away from 0: biases start at zero, so x = 0 would put
        // pre-activations exactly on the rectifier kink where one-sided and
        // analytic derivatives differ
        let x = Array2::from_shape_fn((12, 1), |(i, _)| (i as f64) / 7.0 - 0.95);
        let y = x.column(0).mapv(|v| v * v + 1.0);
        let report = gradient_check(&x, &y, &config).unwrap();
        assert!(
            report.max_relative_error <= 1e-4,
            "max rel err {}",
            report.max_relative_error
        );
    }

    #[test]
    fn gradient_check_small_classification_net() {
        let mut config = small_config(Task::Classification { num_classes: 3 }, 4);
        config.hidden_width = 3;
        let x = Array2::from_shape_fn((15, 2), |(i, j)| ((i * 3 + j) % 11) as f64 / 5.0 - 1.0);
        let y = Array1::from_shape_fn(15, |i| (i % 3) as f64);
        let report = gradient_check(&x, &y, &config).unwrap();
        assert!(
            report.max_relative_error <= 1e-4,
            "max rel err {}",
            report.max_relative_error
        );
    }

    #[test]
    fn gradient_check_footnote_loss_variant() {
        let mut config = small_config(Task::Classification { num_classes: 2 }, 5);
        config.hidden_width = 2;
        config.footnote_loss = true;
        let x = Array2::from_shape_fn((10, 2), |(i, j)| ((i + 2 * j) % 7) as f64 / 3.0 - 1.0);
        let y = Array1::from_shape_fn(10, |i| (i % 2) as f64);
        let report = gradient_check(&x, &y, &config).unwrap();
        assert!(
            report.max_relative_error <= 1e-4,
            "max rel err {}",
            report.max_relative_error
        );
    }

    #[test]
    fn softmax_cross_entropy_delta_closed_form() {
        let config = small_config(Task::Classification { num_classes: 3 }, 0);
        let z = array![[0.2, -1.0, 0.5], [2.0, 0.0, -2.0]];
        let p = softmax_rows(&z);
        let y = array![2.0, 0.0];
        let (_, delta) = head_loss_delta(&config, &z, &p, &y);
        let batch = 2.0;
        for i in 0..2 {
            for j in 0..3 {
                let one_hot = if y[i] as usize == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(delta[(i, j)], (p[(i, j)] - one_hot) / batch, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn rectifier_blocks_gradient_at_negative_preactivation() {
        // single hidden unit with a large negative bias is inactive, so the
        // loss gradient for its weights must vanish
        let layers = vec![
            DenseLayer {
                weights: array![[1.0]],
                bias: array![-100.0],
            },
            DenseLayer {
                weights: array![[1.0]],
                bias: array![1.0],
            },
        ];
        let mut cfg = small_config(Task::Regression, 0);
        cfg.hidden_layers = 1;
        cfg.hidden_width = 1;
        let net = TrainedNetwork::from_parts(layers, cfg.clone(), 0).unwrap();
        let x = array![[1.0], [2.0]];
        let y = array![5.0, 5.0];
        let trace = net.forward_trace(&x).unwrap();
        let (_, delta) = head_loss_delta(
            &cfg,
            trace.pre_activations.last().unwrap(),
            trace.activations.last().unwrap(),
            &y,
        );
        let grads = backward(&net, &trace, delta);
        assert_eq!(grads.dw[0][(0, 0)], 0.0);
        assert_eq!(grads.db[0][0], 0.0);
        // the head bias is active (z = 1 > 0), so its gradient is not zero
        assert!(grads.db[1][0] != 0.0);
    }

    #[test]
    fn loss_non_increasing_after_early_epochs() {
        let (x, y) = toy_classification(48);
        let config = small_config(Task::Classification { num_classes: 2 }, 11);
        let (_, history) = train_with_history(&x, &y, &config).unwrap();
        assert_eq!(history.len(), config.epochs);
        for e in 5..history.len() - 1 {
            assert!(
                history[e + 1] <= history[e] + 1e-9,
                "loss rose at epoch {}: {} -> {}",
                e,
                history[e],
                history[e + 1]
            );
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let (x, y) = toy_classification(30);
        let mut config = small_config(Task::Classification { num_classes: 2 }, 9);
        config.epochs = 5;
        let net = train(&x, &y, &config).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let restored = TrainedNetwork::read_from(&mut io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(net, restored);
    }

    #[test]
    fn diverging_training_reports_nonfinite_loss() {
        // squared error against a target this large overflows immediately
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y = Array1::from_elem(40, 1e200);
        let config = small_config(Task::Regression, 0);
        match train(&x, &y, &config) {
            Err(NetError::NonFiniteLoss { epoch: 0, batch: 0 }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::classification(1, 0).validate().is_err());
        let mut c = NetworkConfig::regression(0);
        c.train_fraction = 1.0;
        assert!(c.validate().is_err());
        c.train_fraction = 0.8;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let x = Array2::zeros((4, 1));
        let y = array![0.0, 1.0, 2.0, 0.5];
        let config = small_config(Task::Classification { num_classes: 2 }, 0);
        match train(&x, &y, &config) {
            Err(NetError::LabelOutOfRange { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected LabelOutOfRange, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_always_normalized(
            rows in proptest::collection::vec(
                proptest::collection::vec(-50.0f64..50.0, 4), 1..6)
        ) {
            let n = rows.len();
            let z = Array2::from_shape_fn((n, 4), |(i, j)| rows[i][j]);
            let p = softmax_rows(&z);
            for row in p.outer_iter() {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn split_partitions_rows(n in 2usize..40, seed in 0u64..1000) {
            let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
            let y = Array1::from_shape_fn(n, |i| i as f64);
            match split(&x, &y, 0.8, seed) {
                Ok(s) => {
                    prop_assert_eq!(s.train_x.nrows() + s.test_x.nrows(), n);
                    let mut all: Vec<f64> =
                        s.train_y.iter().chain(s.test_y.iter()).copied().collect();
                    all.sort_by(f64::total_cmp);
                    let expect: Vec<f64> = (0..n).map(|i| i as f64).collect();
                    prop_assert_eq!(all, expect);
                }
                Err(NetError::InsufficientData { .. }) => prop_assert!(n < 2),
                Err(e) => prop_assert!(false, "unexpected error {:?}", e),
            }
        }
    }
}
