//! Small fully-connected networks trained with exact gradients.
//!
//! Parameters live in one flat vector described by a [`LayerMap`]. For
//! layer `l` the weights (`outputs x inputs`, row-major) come first, then
//! the biases. Hidden units use `tanh`; the output layer is linear and
//! feeds a softmax cross-entropy loss.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{self, KvDoc, RawRecord};
use crate::numkit::{DenseMatrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlice {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMap {
    sizes: Vec<usize>,
    layers: Vec<LayerSlice>,
    len: usize,
}

impl LayerMap {
    /// `sizes` lists the width of every layer, input first. At least one
    /// hidden layer is required.
    pub fn new(sizes: &[usize]) -> Result<Arc<Self>> {
        if sizes.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "architecture {sizes:?} needs input, output and at least one hidden layer"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "architecture {sizes:?} has an empty layer"
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, w) in sizes.windows(2).enumerate() {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = offset..offset + inputs * outputs;
            let bias = weights.end..weights.end + outputs;
            offset = bias.end;
            let name = if l + 2 == sizes.len() {
                "output".to_string()
            } else {
                format!("hidden{}", l + 1)
            };
            layers.push(LayerSlice {
                name,
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        Ok(Arc::new(Self {
            sizes: sizes.to_vec(),
            layers,
            len: offset,
        }))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[LayerSlice] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_classes(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    /// Filter slices: each output unit's incoming weight row, and each
    /// layer's bias vector as one slice. Together they partition the vector.
    pub fn filters(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for o in 0..layer.outputs {
                let start = layer.weights.start + o * layer.inputs;
                out.push(start..start + layer.inputs);
            }
            out.push(layer.bias.clone());
        }
        out
    }

    /// Ranges covered by weight decay (all weights, no biases).
    pub fn weight_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.layers.iter().map(|l| l.weights.clone())
    }

    pub fn arch_string(&self) -> String {
        self.sizes
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn parse_arch(text: &str) -> Result<Arc<Self>> {
        let sizes = text
            .split(['-', ','])
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad architecture `{text}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&sizes)
    }
}

/// Flat parameter vector tied to its layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<LayerMap>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<LayerMap>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<LayerMap>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} values for an architecture with {} parameters",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Arc<LayerMap> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self + c * direction`.
    pub fn offset(&self, direction: &[f64], c: f64) -> Self {
        debug_assert_eq!(direction.len(), self.values.len());
        Self {
            values: self
                .values
                .iter()
                .zip(direction)
                .map(|(t, d)| t + c * d)
                .collect(),
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn norm(&self) -> f64 {
        crate::numkit::norm(&self.values)
    }

    pub fn weight_norm(&self) -> f64 {
        self.layout
            .weight_ranges()
            .flat_map(|r| self.values[r].iter())
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        crate::numkit::euclidean(&self.values, &other.values)
    }
}

/// He-style uniform initialisation: weights in `+-sqrt(6 / fan_in)`, zero
/// biases.
pub fn init_params(sizes: &[usize], seed: u64) -> Result<ParamVector> {
    let layout = LayerMap::new(sizes)?;
    let mut params = ParamVector::zeros(Arc::clone(&layout));
    let mut rng = SeededRng::new(seed, 0);
    for layer in layout.layers() {
        let bound = (6.0 / layer.inputs as f64).sqrt();
        for w in &mut params.values[layer.weights.clone()] {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    TwoMoons,
    TwoGaussians,
    RingVsBlob,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::TwoGaussians => "two_gaussians",
            DatasetKind::RingVsBlob => "ring_vs_blob",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(Self::TwoMoons),
            "two_gaussians" => Ok(Self::TwoGaussians),
            "ring_vs_blob" => Ok(Self::RingVsBlob),
            other => Err(Error::InvalidArgument(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LabelMode {
    #[default]
    True,
    Randomized,
}

impl LabelMode {
    pub fn name(self) -> &'static str {
        match self {
            LabelMode::True => "true",
            LabelMode::Randomized => "randomized",
        }
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Self::True),
            "randomized" => Ok(Self::Randomized),
            other => Err(Error::InvalidArgument(format!("unknown label mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub seed: u64,
    pub label_mode: LabelMode,
}

impl DatasetSpec {
    pub fn two_moons(n_train: usize, n_test: usize, noise: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::TwoMoons,
            n_train,
            n_test,
            noise,
            seed,
            label_mode: LabelMode::True,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub n_classes: usize,
    pub label_mode: LabelMode,
    /// Seed of the label permutation in randomized mode.
    pub label_seed: u64,
}

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const LABEL_STREAM: u64 = 2;

fn sample_class(kind: DatasetKind, class: usize, noise: f64, rng: &mut SeededRng) -> [f64; 2] {
    use std::f64::consts::PI;
    let base = match (kind, class) {
        (DatasetKind::TwoMoons, 0) => {
            let t = rng.uniform_range(0.0, PI);
            [t.cos(), t.sin()]
        }
        (DatasetKind::TwoMoons, _) => {
            let t = rng.uniform_range(0.0, PI);
            [1.0 - t.cos(), 0.5 - t.sin()]
        }
        (DatasetKind::TwoGaussians, 0) => [2.0, 2.0],
        (DatasetKind::TwoGaussians, _) => [-2.0, -2.0],
        (DatasetKind::RingVsBlob, 0) => {
            let r = rng.uniform().sqrt();
            let a = rng.uniform_range(0.0, 2.0 * PI);
            [r * a.cos(), r * a.sin()]
        }
        (DatasetKind::RingVsBlob, _) => {
            let a = rng.uniform_range(0.0, 2.0 * PI);
            [2.5 * a.cos(), 2.5 * a.sin()]
        }
    };
    [base[0] + noise * rng.normal(), base[1] + noise * rng.normal()]
}

fn generate_split(kind: DatasetKind, n: usize, noise: f64, rng: &mut SeededRng) -> (Vec<[f64; 2]>, Vec<usize>) {
    let n0 = n.div_ceil(2);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n0);
        xs.push(sample_class(kind, class, noise, rng));
        ys.push(class);
    }
    (xs, ys)
}

/// Balanced two-class toy data, standardised with training statistics.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {}",
            spec.noise
        )));
    }
    if spec.n_train < 4 || spec.n_test < 4 {
        return Err(Error::InvalidArgument(
            "need at least 2 samples per class in each split".into(),
        ));
    }
    let (train_x, mut train_y) =
        generate_split(spec.kind, spec.n_train, spec.noise, &mut SeededRng::new(spec.seed, TRAIN_STREAM));
    let (test_x, test_y) =
        generate_split(spec.kind, spec.n_test, spec.noise, &mut SeededRng::new(spec.seed, TEST_STREAM));

    let n = train_x.len() as f64;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for c in 0..2 {
        mean[c] = train_x.iter().map(|x| x[c]).sum::<f64>() / n;
        let var = train_x.iter().map(|x| (x[c] - mean[c]).powi(2)).sum::<f64>() / n;
        std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let standardize = |xs: &[[f64; 2]]| {
        let rows: Vec<[f64; 2]> = xs
            .iter()
            .map(|x| [(x[0] - mean[0]) / std[0], (x[1] - mean[1]) / std[1]])
            .collect();
        DenseMatrix::from_rows(&rows)
    };

    if spec.label_mode == LabelMode::Randomized {
        SeededRng::new(spec.seed, LABEL_STREAM).shuffle(&mut train_y);
    }
    Ok(Dataset {
        train: Split {
            inputs: standardize(&train_x)?,
            labels: train_y,
        },
        test: Split {
            inputs: standardize(&test_x)?,
            labels: test_y,
        },
        n_classes: 2,
        label_mode: spec.label_mode,
        label_seed: spec.seed,
    })
}

/// Activations kept from a forward pass: the input to every layer followed
/// by the output logits.
#[derive(Clone, Debug)]
pub struct Activations {
    pub layers: Vec<DenseMatrix>,
}

impl Activations {
    pub fn logits(&self) -> &DenseMatrix {
        self.layers.last().expect("forward pass stores the logits")
    }
}

pub fn forward(params: &ParamVector, inputs: &DenseMatrix) -> Result<Activations> {
    let layout = params.layout();
    if inputs.cols() != layout.sizes()[0] {
        return Err(Error::Shape(format!(
            "inputs have {} features, network expects {}",
            inputs.cols(),
            layout.sizes()[0]
        )));
    }
    let theta = params.as_slice();
    let n = inputs.rows();
    let mut acts = Vec::with_capacity(layout.layers().len() + 1);
    acts.push(inputs.clone());
    for (l, layer) in layout.layers().iter().enumerate() {
        let x = &acts[l];
        let w = &theta[layer.weights.clone()];
        let b = &theta[layer.bias.clone()];
        let hidden = l + 1 < layout.layers().len();
        let mut z = DenseMatrix::zeros(n, layer.outputs);
        for i in 0..n {
            let xi = x.row(i);
            let zi = z.row_mut(i);
            for o in 0..layer.outputs {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let s = b[o] + row.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
                zi[o] = if hidden { s.tanh() } else { s };
            }
        }
        if !z.is_finite() {
            return Err(Error::NonFiniteLoss {
                layer: layer.name.clone(),
            });
        }
        acts.push(z);
    }
    Ok(Activations { layers: acts })
}

fn check_labels(labels: &[usize], rows: usize, n_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{} labels for {rows} samples",
            labels.len()
        )));
    }
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy, accuracy and per-sample softmax of the logits.
fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> (f64, f64, DenseMatrix) {
    let n = logits.rows();
    let mut probs = DenseMatrix::zeros(n, logits.cols());
    let mut total = 0.0;
    let mut correct = 0usize;
    for i in 0..n {
        let z = logits.row(i);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - z[labels[i]];
        for (p, v) in probs.row_mut(i).iter_mut().zip(z) {
            *p = (v - lse).exp();
        }
        if argmax(z) == labels[i] {
            correct += 1;
        }
    }
    (total / n as f64, correct as f64 / n as f64, probs)
}

fn decay_term(params: &ParamVector, weight_decay: f64) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    0.5 * weight_decay * params.weight_norm().powi(2)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss (cross-entropy plus `weight_decay/2 * |weights|^2`) and accuracy.
pub fn evaluate(
    params: &ParamVector,
    inputs: &DenseMatrix,
    labels: &[usize],
    weight_decay: f64,
) -> Result<Evaluation> {
    check_labels(labels, inputs.rows(), params.layout().n_classes())?;
    let acts = forward(params, inputs)?;
    let (ce, accuracy, _) = cross_entropy(acts.logits(), labels);
    let loss = ce + decay_term(params, weight_decay);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { layer: "loss".into() });
    }
    Ok(Evaluation { loss, accuracy })
}

#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub accuracy: f64,
    pub grad: ParamVector,
}

/// Loss, accuracy and the exact gradient by backpropagation.
pub fn loss_and_grad(
    params: &ParamVector,
    inputs: &DenseMatrix,
    labels: &[usize],
    weight_decay: f64,
) -> Result<LossGrad> {
    let layout = Arc::clone(params.layout());
    check_labels(labels, inputs.rows(), layout.n_classes())?;
    let acts = forward(params, inputs)?;
    let (ce, accuracy, probs) = cross_entropy(acts.logits(), labels);
    let loss = ce + decay_term(params, weight_decay);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { layer: "loss".into() });
    }

    let n = inputs.rows();
    let theta = params.as_slice();
    let mut grad = ParamVector::zeros(Arc::clone(&layout));
    // dL/dz for the current layer's pre-activation
    let mut delta = probs;
    for i in 0..n {
        delta[(i, labels[i])] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    for (l, layer) in layout.layers().iter().enumerate().rev() {
        let x = &acts.layers[l];
        let g = grad.as_mut_slice();
        for i in 0..n {
            let xi = x.row(i);
            let di = delta.row(i);
            for o in 0..layer.outputs {
                let d = di[o] * inv_n;
                g[layer.bias.start + o] += d;
                let row = layer.weights.start + o * layer.inputs;
                for (gw, xv) in g[row..row + layer.inputs].iter_mut().zip(xi) {
                    *gw += d * xv;
                }
            }
        }
        if l == 0 {
            break;
        }
        // back through the weights and the tanh of the previous layer
        let w = &theta[layer.weights.clone()];
        let mut prev = DenseMatrix::zeros(n, layer.inputs);
        for i in 0..n {
            let di = delta.row(i);
            let xi = x.row(i);
            let pi = prev.row_mut(i);
            for o in 0..layer.outputs {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, wv) in pi.iter_mut().zip(row) {
                    *p += di[o] * wv;
                }
            }
            for (p, a) in pi.iter_mut().zip(xi) {
                *p *= 1.0 - a * a;
            }
        }
        delta = prev;
    }
    if weight_decay != 0.0 {
        let g = grad.as_mut_slice();
        for r in layout.weight_ranges() {
            for idx in r {
                g[idx] += weight_decay * theta[idx];
            }
        }
    }
    Ok(LossGrad { loss, accuracy, grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sgd_momentum" => Ok(Self::SgdMomentum),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// Optimizer with its moment buffers. Weight decay enters through the loss
/// gradient, not through the update rule.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    lr: f64,
    steps: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let second = if config.kind == OptimizerKind::Adam {
            vec![0.0; n_params]
        } else {
            Vec::new()
        };
        Self {
            lr: config.lr,
            config,
            steps: 0,
            first: vec![0.0; n_params],
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        let theta = params.as_mut_slice();
        let g = grad.as_slice();
        if theta.len() != g.len() || self.first.len() != g.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters got {} / {}",
                self.first.len(),
                theta.len(),
                g.len()
            )));
        }
        self.steps += 1;
        let lr = self.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (t, gv) in theta.iter_mut().zip(g) {
                    *t -= lr * gv;
                }
            }
            OptimizerKind::SgdMomentum => {
                let beta = self.config.momentum;
                for ((t, v), gv) in theta.iter_mut().zip(&mut self.first).zip(g) {
                    *v = beta * *v + gv;
                    *t -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let c1 = 1.0 - b1.powi(self.steps as i32);
                let c2 = 1.0 - b2.powi(self.steps as i32);
                for (((t, m), v), gv) in theta
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(g)
                {
                    *m = b1 * *m + (1.0 - b1) * gv;
                    *v = b2 * *v + (1.0 - b2) * gv * gv;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *t -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Step decay: the rate is multiplied by `factor` at each milestone epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LrSchedule {
    pub factor: f64,
    pub milestones: Vec<u32>,
}

impl LrSchedule {
    pub fn constant() -> Self {
        Self::default()
    }

    /// Rate used during `epoch` (1-based).
    pub fn rate(&self, base: f64, epoch: u32) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch > m).count();
        base * self.factor.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    /// Standard deviation of gaussian noise added to training inputs each
    /// step; zero disables it.
    pub input_noise: f64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, epochs: u32, batch_size: usize, shuffle_seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            shuffle_seed,
            optimizer,
            schedule: LrSchedule::constant(),
            input_noise: 0.0,
        }
    }

    pub fn weight_decay(&self) -> f64 {
        self.optimizer.weight_decay
    }

    /// Canonical text used for hashing and metadata.
    pub fn describe(&self) -> KvDoc {
        let o = &self.optimizer;
        let mut kv = KvDoc::new();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("shuffle_seed", self.shuffle_seed);
        kv.set("optimizer", o.kind);
        kv.set("lr", io::fmt_f64(o.lr));
        kv.set("momentum", io::fmt_f64(o.momentum));
        kv.set("beta1", io::fmt_f64(o.beta1));
        kv.set("beta2", io::fmt_f64(o.beta2));
        kv.set("eps", io::fmt_f64(o.eps));
        kv.set("weight_decay", io::fmt_f64(o.weight_decay));
        kv.set("lr_decay_factor", io::fmt_f64(self.schedule.factor));
        kv.set(
            "lr_milestones",
            self.schedule
                .milestones
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set("input_noise", io::fmt_f64(self.input_noise));
        kv
    }

    pub fn hash(&self) -> u64 {
        io::fnv1a(self.describe().to_text().as_bytes())
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.optimizer.weight_decay >= 0.0) || !(self.input_noise >= 0.0) {
            return Err(Error::InvalidArgument(
                "weight decay and input noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub params: ParamVector,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub step_size: f64,
    pub optimizer: OptimizerKind,
    pub config_hash: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<EpochRecord>,
    pub provenance: Provenance,
}

/// Training loss includes the decay term; test loss is plain cross-entropy.
pub fn measure(
    params: &ParamVector,
    data: &Dataset,
    weight_decay: f64,
    epoch: u32,
) -> Result<EpochRecord> {
    let train = evaluate(params, &data.train.inputs, &data.train.labels, weight_decay)?;
    let test = evaluate(params, &data.test.inputs, &data.test.labels, 0.0)?;
    Ok(EpochRecord {
        epoch,
        params: params.clone(),
        train_loss: train.loss,
        train_acc: train.accuracy,
        test_loss: test.loss,
        test_acc: test.accuracy,
    })
}

const NOISE_STREAM_BASE: u64 = 1 << 32;

/// Minibatch training from `start`, recording epoch 0 and every epoch after.
pub fn train(cfg: &TrainConfig, data: &Dataset, start: &ParamVector) -> Result<Trajectory> {
    cfg.validate()?;
    let weight_decay = cfg.weight_decay();
    let mut params = start.clone();
    let mut opt = OptimizerState::new(cfg.optimizer.clone(), params.len());
    let mut records = vec![measure(&params, data, weight_decay, 0)?];
    let n = data.train.len();
    let dim = data.train.inputs.cols();
    for epoch in 1..=cfg.epochs {
        opt.set_learning_rate(cfg.schedule.rate(cfg.optimizer.lr, epoch));
        let order = SeededRng::new(cfg.shuffle_seed, u64::from(epoch)).permutation(n);
        let mut noise = SeededRng::new(cfg.shuffle_seed, NOISE_STREAM_BASE + u64::from(epoch));
        for batch in order.chunks(cfg.batch_size) {
            let mut rows = Vec::with_capacity(batch.len() * dim);
            for &i in batch {
                rows.extend_from_slice(data.train.inputs.row(i));
            }
            if cfg.input_noise > 0.0 {
                for v in &mut rows {
                    *v += cfg.input_noise * noise.normal();
                }
            }
            let x = DenseMatrix::from_vec(batch.len(), dim, rows)?;
            let y: Vec<usize> = batch.iter().map(|&i| data.train.labels[i]).collect();
            let lg = loss_and_grad(&params, &x, &y, weight_decay)?;
            opt.step(&mut params, &lg.grad)?;
        }
        records.push(measure(&params, data, weight_decay, epoch)?);
    }
    Ok(Trajectory {
        records,
        provenance: Provenance {
            seed: cfg.shuffle_seed,
            step_size: 0.0,
            optimizer: cfg.optimizer.kind,
            config_hash: cfg.hash(),
        },
    })
}

impl Trajectory {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("trajectories hold the epoch-0 record")
    }

    pub fn first(&self) -> &EpochRecord {
        &self.records[0]
    }

    pub fn metadata(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        if let Some(r) = self.records.first() {
            kv.set("arch", r.params.layout().arch_string());
        }
        kv.set("seed", self.provenance.seed);
        kv.set("step_size", io::fmt_f64(self.provenance.step_size));
        kv.set("optimizer", self.provenance.optimizer);
        kv.set("config_hash", format!("{:016x}", self.provenance.config_hash));
        kv
    }

    pub fn to_raw(&self) -> Vec<RawRecord> {
        self.records
            .iter()
            .map(|r| RawRecord {
                epoch: r.epoch,
                train_loss: r.train_loss,
                train_acc: r.train_acc,
                test_loss: r.test_loss,
                test_acc: r.test_acc,
                params: r.params.as_slice().to_vec(),
            })
            .collect()
    }

    /// Writes the container plus a `.meta` sidecar holding provenance and
    /// any `extra` fields.
    pub fn save(&self, path: &Path, extra: &KvDoc) -> Result<()> {
        let mut meta = self.metadata();
        for (k, v) in extra.entries() {
            meta.set(k, v);
        }
        io::write_trajectory_file(path, &self.to_raw(), &meta)
    }

    /// Loads a container; the layout comes from the sidecar's `arch` key.
    pub fn load(path: &Path) -> Result<(Self, KvDoc)> {
        let (raw, meta) = io::read_trajectory_file(path)?;
        let bad = |reason: String| Error::Format {
            path: io::meta_path(path),
            reason,
        };
        let field = |key: &str| meta.get(key).ok_or_else(|| bad(format!("missing `{key}`")));
        let layout = LayerMap::parse_arch(field("arch")?)?;
        let provenance = Provenance {
            seed: field("seed")?.parse().map_err(|_| bad("bad `seed`".into()))?,
            step_size: field("step_size")?
                .parse()
                .map_err(|_| bad("bad `step_size`".into()))?,
            optimizer: field("optimizer")?.parse()?,
            config_hash: u64::from_str_radix(field("config_hash")?, 16)
                .map_err(|_| bad("bad `config_hash`".into()))?,
        };
        let records = raw
            .into_iter()
            .map(|r| {
                Ok(EpochRecord {
                    epoch: r.epoch,
                    params: ParamVector::from_values(Arc::clone(&layout), r.params)?,
                    train_loss: r.train_loss,
                    train_acc: r.train_acc,
                    test_loss: r.test_loss,
                    test_acc: r.test_acc,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if records.is_empty() {
            return Err(bad("trajectory has no records".into()));
        }
        Ok((Self { records, provenance }, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(seed: u64, n: usize) -> (DenseMatrix, Vec<usize>) {
        let mut rng = SeededRng::new(seed, 5);
        let x = DenseMatrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let y = (0..n).map(|i| i % 2).collect();
        (x, y)
    }

    #[test]
    fn parameter_count_and_filters() {
        let layout = LayerMap::new(&[2, 16, 16, 2]).unwrap();
        assert_eq!(layout.len(), 354);
        let filters = layout.filters();
        let mut covered = vec![0u8; layout.len()];
        for f in &filters {
            for i in f.clone() {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(filters.len(), 16 + 1 + 16 + 1 + 2 + 1);
        assert!(LayerMap::new(&[2, 2]).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(&[2, 16, 16, 2], 3).unwrap();
        let b = init_params(&[2, 16, 16, 2], 3).unwrap();
        let c = init_params(&[2, 16, 16, 2], 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let layer = &a.layout().layers()[0];
        assert!(a.as_slice()[layer.bias.clone()].iter().all(|&b| b == 0.0));
        let bound = 3f64.sqrt();
        assert!(a.as_slice()[layer.weights.clone()].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn uniform_logits_give_log_two() {
        let params = ParamVector::zeros(LayerMap::new(&[2, 4, 2]).unwrap());
        let (x, y) = toy_batch(1, 6);
        let e = evaluate(&params, &x, &y, 0.0).unwrap();
        assert!((e.loss - 2f64.ln()).abs() < 1e-15);
        // ties pick class 0
        assert_eq!(e.accuracy, 0.5);
    }

    #[test]
    fn decay_adds_half_lambda_weight_norm() {
        let params = init_params(&[2, 8, 2], 9).unwrap();
        let (x, y) = toy_batch(2, 10);
        let base = evaluate(&params, &x, &y, 0.0).unwrap().loss;
        let lam = 2e-3;
        let with = evaluate(&params, &x, &y, lam).unwrap().loss;
        let w2: f64 = params
            .layout()
            .weight_ranges()
            .flat_map(|r| params.as_slice()[r].to_vec())
            .map(|w| w * w)
            .sum();
        assert!((with - base - 0.5 * lam * w2).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let params = init_params(&[3, 4, 2], 0).unwrap();
        let (x, y) = toy_batch(0, 4);
        assert!(matches!(forward(&params, &x), Err(Error::Shape(_))));
        assert!(loss_and_grad(&params, &x, &y, 0.0).is_err());
    }

    #[test]
    fn non_finite_values_name_the_layer() {
        let mut params = init_params(&[2, 4, 2], 0).unwrap();
        let out_w = params.layout().layers()[1].weights.start;
        params.as_mut_slice()[out_w] = f64::INFINITY;
        let (x, y) = toy_batch(0, 4);
        match evaluate(&params, &x, &y, 0.0) {
            Err(Error::NonFiniteLoss { layer }) => assert_eq!(layer, "output"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sgd_step() {
        let layout = LayerMap::new(&[1, 1, 1]).unwrap();
        let mut p = ParamVector::from_values(Arc::clone(&layout), vec![1.0; 4]).unwrap();
        let g = ParamVector::from_values(layout, vec![1.0; 4]).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1), 4);
        opt.step(&mut p, &g).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn momentum_second_step_is_one_point_nine() {
        let layout = LayerMap::new(&[1, 1, 1]).unwrap();
        let mut p = ParamVector::zeros(Arc::clone(&layout));
        let g = ParamVector::from_values(layout, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::SgdMomentum, 0.1), 4);
        opt.step(&mut p, &g).unwrap();
        let after_one = p.clone();
        opt.step(&mut p, &g).unwrap();
        for i in 0..4 {
            let update = p.as_slice()[i] - after_one.as_slice()[i];
            assert!((update + 0.1 * 1.9 * g.as_slice()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let layout = LayerMap::new(&[1, 1, 1]).unwrap();
        let mut p = ParamVector::zeros(Arc::clone(&layout));
        let gv = vec![0.3, -2.0, 1e-3, 50.0];
        let g = ParamVector::from_values(layout, gv.clone()).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 0.01), 4);
        opt.step(&mut p, &g).unwrap();
        for (i, gi) in gv.iter().enumerate() {
            // m_hat = g, v_hat = g^2 at t = 1
            let expect = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((p.as_slice()[i] - expect).abs() < 1e-15);
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn schedule_decays_after_milestones() {
        let s = LrSchedule { factor: 0.1, milestones: vec![10, 20] };
        assert_eq!(s.rate(1.0, 10), 1.0);
        assert!((s.rate(1.0, 11) - 0.1).abs() < 1e-15);
        assert!((s.rate(1.0, 25) - 0.01).abs() < 1e-15);
        assert_eq!(LrSchedule::constant().rate(0.5, 100), 0.5);
    }

    #[test]
    fn dataset_balance_and_determinism() {
        let spec = DatasetSpec::two_moons(200, 100, 0.15, 4);
        let d = make_dataset(&spec).unwrap();
        assert_eq!(d.train.labels.iter().filter(|&&y| y == 0).count(), 100);
        assert_eq!(d.train.labels.iter().filter(|&&y| y == 1).count(), 100);
        for c in 0..2 {
            let mean: f64 = (0..200).map(|i| d.train.inputs[(i, c)]).sum::<f64>() / 200.0;
            assert!(mean.abs() < 1e-12);
        }
        let random = DatasetSpec { label_mode: LabelMode::Randomized, ..spec.clone() };
        let r1 = make_dataset(&random).unwrap();
        let r2 = make_dataset(&random).unwrap();
        assert_eq!(r1.train.labels, r2.train.labels);
        assert_ne!(r1.train.labels, d.train.labels);
        assert_eq!(r1.test.labels, d.test.labels);
        let bad = DatasetSpec { noise: -0.1, ..spec };
        assert!(make_dataset(&bad).is_err());
    }

    #[test]
    fn zero_epochs_records_only_the_start() {
        let data = make_dataset(&DatasetSpec::two_moons(20, 20, 0.1, 0)).unwrap();
        let start = init_params(&[2, 4, 2], 1).unwrap();
        let cfg = TrainConfig::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1), 0, 8, 0);
        let t = train(&cfg, &data, &start).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].epoch, 0);
        assert_eq!(t.records[0].params, start);
    }
}
