//! Quantitative experiments on swept networks: which sampler's features
//! best predict training hyperparameters and generalization, whether PHATE
//! keeps retraining trajectories intact, and how total persistence tracks
//! test loss.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{self, KvDoc};
use crate::numkit::{self, parallel_map, DenseMatrix, SeededRng};
use crate::phate::{phate_potential, PhateConfig};
use crate::sampler::{
    grid_sample, jump_and_retrain, naive_sample, GridConfig, JumpRetrainConfig, NaiveConfig,
    SampleMethod, SampleSet,
};
use crate::topo::{loss_level_diagrams, total_persistence, EssentialPolicy};
use crate::trainer::{
    init_params, make_dataset, train, Dataset, DatasetSpec, LrSchedule, OptimizerConfig,
    OptimizerKind, ParamVector, TrainConfig, Trajectory,
};

/// Factor lists of a training sweep plus everything held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub batch_sizes: Vec<usize>,
    pub weight_decays: Vec<f64>,
    pub augment: Vec<bool>,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub hidden_layers: usize,
    /// Input-noise standard deviation used by cells with augmentation on.
    pub noise_sigma: f64,
    pub dataset: DatasetSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: u32,
    pub schedule: LrSchedule,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            batch_sizes: vec![10, 20, 50],
            weight_decays: vec![0.0, 1e-4, 1e-3],
            augment: vec![false, true],
            widths: vec![16],
            seeds: vec![0, 1],
            hidden_layers: 2,
            noise_sigma: 0.1,
            dataset: DatasetSpec::two_moons(200, 200, 0.15, 1),
            optimizer: OptimizerConfig::new(OptimizerKind::SgdMomentum, 0.1),
            epochs: 200,
            schedule: LrSchedule::constant(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSpec {
    pub id: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub augment: bool,
    pub width: usize,
    pub seed: u64,
}

impl SweepSpec {
    /// Cells in factor order: batch size, decay, augmentation, width, seed.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        if self.batch_sizes.is_empty()
            || self.weight_decays.is_empty()
            || self.augment.is_empty()
            || self.widths.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::InvalidArgument("every sweep factor list needs a value".into()));
        }
        let mut cells = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &weight_decay in &self.weight_decays {
                for &augment in &self.augment {
                    for &width in &self.widths {
                        for &seed in &self.seeds {
                            cells.push(CellSpec {
                                id: cells.len(),
                                batch_size,
                                weight_decay,
                                augment,
                                width,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn arch(&self, cell: &CellSpec) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend(std::iter::repeat_n(cell.width, self.hidden_layers));
        sizes.push(2);
        sizes
    }

    pub fn train_config(&self, cell: &CellSpec) -> TrainConfig {
        let mut cfg = TrainConfig::new(
            self.optimizer.clone().with_weight_decay(cell.weight_decay),
            self.epochs,
            cell.batch_size,
            cell.seed,
        );
        cfg.schedule = self.schedule.clone();
        cfg.input_noise = if cell.augment { self.noise_sigma } else { 0.0 };
        cfg
    }

    pub fn describe(&self) -> KvDoc {
        let list = |items: Vec<String>| items.join(",");
        let mut kv = KvDoc::new();
        kv.set("batch_sizes", list(self.batch_sizes.iter().map(|v| v.to_string()).collect()));
        kv.set("weight_decays", list(self.weight_decays.iter().map(|v| io::fmt_f64(*v)).collect()));
        kv.set("augment", list(self.augment.iter().map(|v| v.to_string()).collect()));
        kv.set("widths", list(self.widths.iter().map(|v| v.to_string()).collect()));
        kv.set("seeds", list(self.seeds.iter().map(|v| v.to_string()).collect()));
        kv.set("hidden_layers", self.hidden_layers);
        kv.set("noise_sigma", io::fmt_f64(self.noise_sigma));
        kv.set("dataset", self.dataset.kind.name());
        kv.set("n_train", self.dataset.n_train);
        kv.set("n_test", self.dataset.n_test);
        kv.set("data_noise", io::fmt_f64(self.dataset.noise));
        kv.set("data_seed", self.dataset.seed);
        kv.set("label_mode", self.dataset.label_mode.name());
        kv.set("optimizer", self.optimizer.kind);
        kv.set("lr", io::fmt_f64(self.optimizer.lr));
        kv.set("epochs", self.epochs);
        kv
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub spec: CellSpec,
    pub trajectory: Option<Trajectory>,
    /// Why training failed, for flagged cells.
    pub diverged: Option<String>,
}

impl SweepCell {
    pub fn optimum(&self) -> Option<&ParamVector> {
        self.trajectory.as_ref().map(|t| &t.last().params)
    }

    pub fn test_loss(&self) -> Option<f64> {
        self.trajectory.as_ref().map(|t| t.last().test_loss)
    }

    pub fn test_acc(&self) -> Option<f64> {
        self.trajectory.as_ref().map(|t| t.last().test_acc)
    }

    pub fn weight_norm(&self) -> Option<f64> {
        self.optimum().map(ParamVector::weight_norm)
    }
}

/// Trains every cell. A cell whose loss turns non-finite is flagged and
/// the sweep carries on.
pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<Vec<SweepCell>> {
    let cells = spec.cells()?;
    let data = make_dataset(&spec.dataset)?;
    let results = parallel_map(&cells, threads, |_, cell| -> Result<SweepCell> {
        let start = init_params(&spec.arch(cell), cell.seed)?;
        match train(&spec.train_config(cell), &data, &start) {
            Ok(t) => Ok(SweepCell {
                spec: cell.clone(),
                trajectory: Some(t),
                diverged: None,
            }),
            Err(e @ Error::NonFiniteLoss { .. }) => Ok(SweepCell {
                spec: cell.clone(),
                trajectory: None,
                diverged: Some(e.to_string()),
            }),
            Err(e) => Err(e),
        }
    });
    results.into_iter().collect()
}

/// Sampler settings shared by every network in a study.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSuite {
    pub jr: JumpRetrainConfig,
    pub grid: GridConfig,
    pub naive: NaiveConfig,
}

impl Default for SamplerSuite {
    fn default() -> Self {
        Self {
            jr: JumpRetrainConfig::default(),
            grid: GridConfig::default(),
            naive: NaiveConfig::default(),
        }
    }
}

/// The three sample sets of one trained cell, J&R first.
pub fn sample_cell(
    spec: &SweepSpec,
    cell: &SweepCell,
    data: &Dataset,
    suite: &SamplerSuite,
) -> Result<[SampleSet; 3]> {
    let optimum = cell
        .optimum()
        .ok_or_else(|| Error::InvalidArgument(format!("cell {} has no optimum", cell.spec.id)))?;
    let cfg = spec.train_config(&cell.spec);
    let (jr, _) = jump_and_retrain(optimum, data, &cfg, &suite.jr)?;
    let grid = grid_sample(optimum, data, cell.spec.weight_decay, &suite.grid)?;
    let naive = naive_sample(optimum, data, cell.spec.weight_decay, &suite.naive)?;
    Ok([jr, grid, naive])
}

/// Train losses then train accuracies of the counted points, in sampling
/// order.
pub fn feature_vector(set: &SampleSet) -> Vec<f64> {
    let points: Vec<_> = set.counted_points().collect();
    points
        .iter()
        .map(|p| p.train_loss)
        .chain(points.iter().map(|p| p.train_acc))
        .collect()
}

pub fn feature_matrix(sets: &[&SampleSet]) -> Result<DenseMatrix> {
    let rows: Vec<Vec<f64>> = sets.iter().map(|s| feature_vector(s)).collect();
    DenseMatrix::from_rows(&rows)
}

/// Quantile classes by value: class 0 holds the lowest values. Ties are
/// ordered by index.
pub fn assign_classes(values: &[f64], n_classes: usize) -> Result<Vec<usize>> {
    if n_classes == 0 || n_classes > values.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} networks into {n_classes} classes",
            values.len()
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut labels = vec![0; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * n_classes / values.len();
    }
    Ok(labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Classifier {
    Knn { k: usize },
    SoftmaxRegression,
    GaussianNb,
}

impl Classifier {
    pub const DEFAULT_SET: [Classifier; 3] = [
        Classifier::Knn { k: 5 },
        Classifier::SoftmaxRegression,
        Classifier::GaussianNb,
    ];

    pub fn name(self) -> String {
        match self {
            Classifier::Knn { k } => format!("knn{k}"),
            Classifier::SoftmaxRegression => "softmax".into(),
            Classifier::GaussianNb => "gaussian_nb".into(),
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::SoftmaxRegression),
            "gaussian_nb" => Ok(Self::GaussianNb),
            _ => s
                .strip_prefix("knn")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(|k| Self::Knn { k })
                .ok_or_else(|| Error::InvalidArgument(format!("unknown classifier `{s}`"))),
        }
    }
}

pub const SOFTMAX_STEPS: usize = 500;
pub const SOFTMAX_LR: f64 = 0.1;

/// Per-feature mean and standard deviation of the training rows; constant
/// features get unit scale.
fn standardizer(x: &DenseMatrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &i in rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn standardize_rows(x: &DenseMatrix, rows: &[usize], mean: &[f64], std: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&i| {
            x.row(i)
                .iter()
                .zip(mean)
                .zip(std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect()
}

fn knn_predict(train: &[Vec<f64>], labels: &[usize], n_classes: usize, k: usize, query: &[f64]) -> usize {
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, r)| (numkit::euclidean(r, query), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &dist[..k.min(dist.len())];
    let mut votes = vec![0usize; n_classes];
    for &(_, i) in nearest {
        votes[labels[i]] += 1;
    }
    let top = *votes.iter().max().expect("at least one class");
    // among tied classes, the one holding the closest neighbour wins
    nearest
        .iter()
        .map(|&(_, i)| labels[i])
        .find(|&c| votes[c] == top)
        .expect("a voted class exists")
}

/// Multinomial logistic regression by full-batch gradient descent from
/// zero. Because the weights start at zero they stay in the row span of the
/// training inputs, so the iteration runs on `W = X^T A` with the Gram
/// matrix instead of the (much wider) weight matrix.
pub fn softmax_logits(
    train: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    test: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = train.len();
    let gram: Vec<Vec<f64>> = train
        .iter()
        .map(|a| train.iter().map(|b| numkit::dot(a, b)).collect())
        .collect();
    let mut coef = vec![vec![0.0; n_classes]; n];
    let mut bias = vec![0.0; n_classes];
    let mut logits = vec![vec![0.0; n_classes]; n];
    for _ in 0..SOFTMAX_STEPS {
        for i in 0..n {
            for c in 0..n_classes {
                logits[i][c] = bias[c] + (0..n).map(|j| gram[i][j] * coef[j][c]).sum::<f64>();
            }
        }
        let mut bias_grad = vec![0.0; n_classes];
        for i in 0..n {
            let z = &logits[i];
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            for c in 0..n_classes {
                let p = (z[c] - m).exp() / s;
                let g = (p - f64::from(u8::from(labels[i] == c))) / n as f64;
                coef[i][c] -= SOFTMAX_LR * g;
                bias_grad[c] += g;
            }
        }
        for (b, g) in bias.iter_mut().zip(bias_grad) {
            *b -= SOFTMAX_LR * g;
        }
    }
    test.iter()
        .map(|q| {
            let k: Vec<f64> = train.iter().map(|r| numkit::dot(r, q)).collect();
            (0..n_classes)
                .map(|c| bias[c] + (0..n).map(|j| k[j] * coef[j][c]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Fits `classifier` on standardized rows and predicts `test`.
pub fn classify(
    classifier: Classifier,
    train: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    test: &[Vec<f64>],
) -> Vec<usize> {
    match classifier {
        Classifier::Knn { k } => test
            .iter()
            .map(|q| knn_predict(train, labels, n_classes, k, q))
            .collect(),
        Classifier::SoftmaxRegression => softmax_logits(train, labels, n_classes, test)
            .iter()
            .map(|z| crate::trainer::argmax(z))
            .collect(),
        Classifier::GaussianNb => gaussian_nb_fit_predict(train, labels, n_classes, test),
    }
}

fn gaussian_nb_fit_predict(
    train: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    test: &[Vec<f64>],
) -> Vec<usize> {
    let d = train[0].len();
    let n = train.len() as f64;
    let mut max_var: f64 = 0.0;
    for f in 0..d {
        let m = train.iter().map(|r| r[f]).sum::<f64>() / n;
        max_var = max_var.max(train.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n);
    }
    let smoothing = 1e-9 * max_var.max(1.0);
    let mut params = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let rows: Vec<&Vec<f64>> = train.iter().zip(labels).filter(|(_, &y)| y == c).map(|(r, _)| r).collect();
        let nc = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / nc).collect();
        let var: Vec<f64> = (0..d)
            .map(|f| rows.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / nc + smoothing)
            .collect();
        params.push(((nc / n).ln(), mean, var));
    }
    test.iter()
        .map(|q| {
            let scores: Vec<f64> = params
                .iter()
                .map(|(prior, mean, var)| {
                    prior
                        - 0.5
                            * q.iter()
                                .zip(mean)
                                .zip(var)
                                .map(|((x, m), v)| (2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v)
                                .sum::<f64>()
                })
                .collect();
            crate::trainer::argmax(&scores)
        })
        .collect()
}

/// Stratified fold of every sample. Within each class samples are ranked
/// by a hash of the seed and their feature values, so the assignment
/// follows the samples when the input is reordered.
pub fn stratified_folds(features: &DenseMatrix, labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let key = |i: usize| {
        let mut bytes = seed.to_le_bytes().to_vec();
        for v in features.row(i) {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        io::fnv1a(&bytes)
    };
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut members: Vec<(u64, usize)> = (0..labels.len())
            .filter(|&i| labels[i] == c)
            .map(|i| (key(i), i))
            .collect();
        members.sort_unstable();
        for (rank, &(_, i)) in members.iter().enumerate() {
            fold[i] = (offset + rank) % folds;
        }
        offset += members.len();
    }
    fold
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub standard_error: f64,
}

pub fn mean_and_se(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    if scores.len() < 2 {
        return (mean, 0.0);
    }
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Accuracy of each held-out fold, with standardization fitted on the
/// training folds only.
pub fn cross_validate(
    features: &DenseMatrix,
    labels: &[usize],
    classifier: Classifier,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let n = labels.len();
    if features.rows() != n {
        return Err(Error::Shape(format!("{} feature rows for {n} labels", features.rows())));
    }
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!("{folds} folds for {n} samples")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let assignment = stratified_folds(features, labels, folds, seed);
    let mut accuracies = Vec::with_capacity(folds);
    for f in 0..folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
        for c in 0..n_classes {
            if !train_idx.iter().any(|&i| labels[i] == c) {
                return Err(Error::MissingClassInFold { class: c, fold: f });
            }
        }
        if test_idx.is_empty() {
            continue;
        }
        let (mean, std) = standardizer(features, &train_idx);
        let train = standardize_rows(features, &train_idx, &mean, &std);
        let test = standardize_rows(features, &test_idx, &mean, &std);
        let accuracy = fold_accuracy(classifier, &train, &train_idx, &test, &test_idx, labels, n_classes);
        accuracies.push(accuracy);
    }
    let (mean, standard_error) = mean_and_se(&accuracies);
    Ok(CvResult {
        fold_accuracies: accuracies,
        mean,
        standard_error,
    })
}

fn fold_accuracy(
    classifier: Classifier,
    train: &[Vec<f64>],
    train_idx: &[usize],
    test: &[Vec<f64>],
    test_idx: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> f64 {
    let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let predictions = classify(classifier, train, &train_y, n_classes, test);
    let correct = predictions
        .iter()
        .zip(test_idx)
        .filter(|(p, &i)| **p == labels[i])
        .count();
    correct as f64 / test_idx.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationResult {
    pub observed: f64,
    pub permuted: Vec<f64>,
    pub p_value: f64,
}

impl PermutationResult {
    pub fn permuted_mean(&self) -> f64 {
        if self.permuted.is_empty() {
            return f64::NAN;
        }
        self.permuted.iter().sum::<f64>() / self.permuted.len() as f64
    }
}

/// `p = (1 + #{permuted >= observed}) / (1 + n_perm)` for a statistic
/// computed on the true labels and on `n_perm` shuffles of them.
pub fn permutation_p<F>(labels: &[usize], n_perm: usize, seed: u64, threads: usize, statistic: F) -> Result<PermutationResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    let observed = statistic(labels)?;
    let perms: Vec<u64> = (0..n_perm as u64).collect();
    let permuted = parallel_map(&perms, threads, |_, &p| {
        let mut shuffled = labels.to_vec();
        SeededRng::new(seed, p + 1).shuffle(&mut shuffled);
        statistic(&shuffled)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let hits = permuted.iter().filter(|&&s| s >= observed).count();
    Ok(PermutationResult {
        observed,
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        permuted,
    })
}

/// Permutation test of mean cross-validated accuracy.
pub fn permutation_test(
    features: &DenseMatrix,
    labels: &[usize],
    classifier: Classifier,
    folds: usize,
    n_perm: usize,
    seed: u64,
    threads: usize,
) -> Result<PermutationResult> {
    permutation_p(labels, n_perm, seed, threads, |y| {
        Ok(cross_validate(features, y, classifier, folds, seed)?.mean)
    })
}

/// Fraction of `pairs` whose endpoints are mutual k-nearest neighbours in
/// `coords`. `k` is clamped to `n - 1`.
pub fn trajectory_preservation_score(coords: &DenseMatrix, pairs: &[(usize, usize)], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no trajectory pairs to score".into()));
    }
    let n = coords.rows();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::InvalidArgument(format!("pair ({a}, {b}) outside {n} embedded points")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two embedded points".into()));
    }
    let d = numkit::pairwise_distances(coords, numkit::Metric::Euclidean)?;
    let nn = numkit::knn(&d, k.min(n - 1))?;
    let is_nb = |i: usize, j: usize| nn.neighbors(i).iter().any(|x| x.index == j);
    let hits = pairs.iter().filter(|&&(a, b)| is_nb(a, b) && is_nb(b, a)).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Scores after randomly reassigning embedded positions to points.
pub fn shuffled_preservation_baseline(
    coords: &DenseMatrix,
    pairs: &[(usize, usize)],
    k: usize,
    n_shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n_shuffles as u64)
        .map(|s| {
            let perm = SeededRng::new(seed, s).permutation(coords.rows());
            let moved: Vec<&[f64]> = perm.iter().map(|&i| coords.row(i)).collect();
            trajectory_preservation_score(&DenseMatrix::from_rows(&moved)?, pairs, k)
        })
        .collect()
}

/// Consecutive-epoch index pairs of every jump-and-retrain run.
pub fn epoch_pairs(set: &SampleSet) -> Vec<(usize, usize)> {
    set.runs()
        .iter()
        .flat_map(|run| run.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .collect()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman correlation: Pearson correlation of average ranks. Zero when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs two equal series of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// One-sided permutation p-value for a positive Spearman correlation.
pub fn spearman_permutation(x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Result<(f64, f64)> {
    let rho = spearman(x, y)?;
    let ry = average_ranks(y);
    let rx = average_ranks(x);
    let mut hits = 0;
    let mut rng = SeededRng::new(seed, 0);
    for _ in 0..n_perm {
        let mut shuffled = ry.clone();
        rng.shuffle(&mut shuffled);
        if pearson(&rx, &shuffled) >= rho {
            hits += 1;
        }
    }
    Ok((rho, (1 + hits) as f64 / (1 + n_perm) as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceRow {
    pub network: usize,
    pub weight_decay: f64,
    pub test_loss: f64,
    pub total_h0: f64,
    pub total_h1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceSettings {
    pub phate: PhateConfig,
    pub graph_k: usize,
    pub policy: EssentialPolicy,
}

impl Default for PersistenceSettings {
    fn default() -> Self {
        Self {
            phate: PhateConfig {
                metric: numkit::Metric::Cosine,
                ..PhateConfig::default()
            },
            graph_k: crate::topo::DEFAULT_GRAPH_K,
            policy: EssentialPolicy::Cap,
        }
    }
}

/// Total persistence of the loss-level filtration over all points of a
/// sample set, on the kNN graph of their potential distances.
pub fn sample_set_persistence(set: &SampleSet, settings: &PersistenceSettings) -> Result<(f64, f64)> {
    let rows: Vec<&[f64]> = set.points.iter().map(|p| p.params.as_slice()).collect();
    let points = DenseMatrix::from_rows(&rows)?;
    let potential = phate_potential(&points, &settings.phate)?;
    let values: Vec<f64> = set.points.iter().map(|p| p.train_loss).collect();
    let (h0, h1) = loss_level_diagrams(&potential.distances, &values, settings.graph_k)?;
    Ok((
        total_persistence(&h0, settings.policy),
        total_persistence(&h1, settings.policy),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Generalization,
    WeightDecay,
    Augmentation,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Generalization, Task::WeightDecay, Task::Augmentation];

    pub fn name(self) -> &'static str {
        match self {
            Task::Generalization => "generalization",
            Task::WeightDecay => "weight_decay",
            Task::Augmentation => "augmentation",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn task_labels(task: Task, spec: &SweepSpec, cells: &[&SweepCell], n_classes: usize) -> Result<Vec<usize>> {
    match task {
        Task::Generalization => {
            let losses: Vec<f64> = cells.iter().map(|c| c.test_loss().unwrap_or(f64::NAN)).collect();
            assign_classes(&losses, n_classes)
        }
        Task::WeightDecay => Ok(cells
            .iter()
            .map(|c| {
                spec.weight_decays
                    .iter()
                    .position(|&w| w == c.spec.weight_decay)
                    .expect("cell decay comes from the sweep")
            })
            .collect()),
        Task::Augmentation => Ok(cells.iter().map(|c| usize::from(c.spec.augment)).collect()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub tasks: Vec<Task>,
    pub classifiers: Vec<Classifier>,
    pub folds: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub generalization_classes: usize,
    pub persistence: PersistenceSettings,
    pub threads: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            tasks: Task::ALL.to_vec(),
            classifiers: Classifier::DEFAULT_SET.to_vec(),
            folds: 10,
            n_perm: 200,
            seed: 0,
            generalization_classes: 3,
            persistence: PersistenceSettings::default(),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub task: Task,
    pub sampler: SampleMethod,
    pub classifier: Classifier,
    pub mean: f64,
    pub standard_error: f64,
    pub permuted_mean: f64,
    pub p_value: f64,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSummary {
    pub task: Task,
    pub sampler: SampleMethod,
    pub mean: f64,
    pub standard_error: f64,
    pub permuted_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<SamplerSummary>,
    pub persistence: Vec<PersistenceRow>,
    pub spearman_h0: f64,
    pub spearman_h0_p: f64,
    pub flagged_cells: Vec<usize>,
}

/// Classification study over the sample sets of the usable cells plus the
/// persistence table. `samples[i]` belongs to `cells[i]` and holds the J&R,
/// grid and naive sets in that order.
pub fn run_study(
    spec: &SweepSpec,
    cells: &[SweepCell],
    samples: &[Option<[SampleSet; 3]>],
    cfg: &StudyConfig,
) -> Result<StudyReport> {
    if samples.len() != cells.len() {
        return Err(Error::Shape(format!("{} sample groups for {} cells", samples.len(), cells.len())));
    }
    let flagged_cells: Vec<usize> = cells
        .iter()
        .zip(samples)
        .filter(|(c, s)| c.trajectory.is_none() || s.is_none())
        .map(|(c, _)| c.spec.id)
        .collect();
    let usable: Vec<(&SweepCell, &[SampleSet; 3])> = cells
        .iter()
        .zip(samples)
        .filter_map(|(c, s)| s.as_ref().filter(|_| c.trajectory.is_some()).map(|s| (c, s)))
        .collect();
    let usable_cells: Vec<&SweepCell> = usable.iter().map(|(c, _)| *c).collect();

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &task in &cfg.tasks {
        let labels = task_labels(task, spec, &usable_cells, cfg.generalization_classes)?;
        for (si, sampler) in SampleMethod::ALL.into_iter().enumerate() {
            let sets: Vec<&SampleSet> = usable.iter().map(|(_, s)| &s[si]).collect();
            let features = feature_matrix(&sets)?;
            let mut pooled = Vec::new();
            let mut permuted = Vec::new();
            for &classifier in &cfg.classifiers {
                let cv = cross_validate(&features, &labels, classifier, cfg.folds, cfg.seed)?;
                let perm = permutation_test(&features, &labels, classifier, cfg.folds, cfg.n_perm, cfg.seed, cfg.threads)?;
                pooled.extend_from_slice(&cv.fold_accuracies);
                permuted.push(perm.permuted_mean());
                rows.push(ReportRow {
                    task,
                    sampler,
                    classifier,
                    mean: cv.mean,
                    standard_error: cv.standard_error,
                    permuted_mean: perm.permuted_mean(),
                    p_value: perm.p_value,
                    fold_accuracies: cv.fold_accuracies,
                });
            }
            let (mean, standard_error) = mean_and_se(&pooled);
            summaries.push(SamplerSummary {
                task,
                sampler,
                mean,
                standard_error,
                permuted_mean: permuted.iter().sum::<f64>() / permuted.len() as f64,
            });
        }
    }

    let totals = parallel_map(&usable, cfg.threads, |_, (_, s)| sample_set_persistence(&s[0], &cfg.persistence))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let persistence: Vec<PersistenceRow> = usable
        .iter()
        .zip(totals)
        .map(|((c, _), (h0, h1))| PersistenceRow {
            network: c.spec.id,
            weight_decay: c.spec.weight_decay,
            test_loss: c.test_loss().expect("usable cells are trained"),
            total_h0: h0,
            total_h1: h1,
        })
        .collect();
    let test_losses: Vec<f64> = persistence.iter().map(|r| r.test_loss).collect();
    let h0: Vec<f64> = persistence.iter().map(|r| r.total_h0).collect();
    let (spearman_h0, spearman_h0_p) = if persistence.len() >= 2 {
        spearman_permutation(&test_losses, &h0, cfg.n_perm, cfg.seed)?
    } else {
        (f64::NAN, 1.0)
    };
    Ok(StudyReport {
        rows,
        summaries,
        persistence,
        spearman_h0,
        spearman_h0_p,
        flagged_cells,
    })
}

pub const REPORT_CSV_HEADER: &str = "task,sampler,classifier,mean_accuracy,standard_error,permutation_accuracy,p_value";
pub const PERSISTENCE_CSV_HEADER: &str = "network,weight_decay,test_loss,total_persistence_h0,total_persistence_h1";

impl StudyReport {
    pub fn summary(&self, task: Task, sampler: SampleMethod) -> Option<&SamplerSummary> {
        self.summaries.iter().find(|s| s.task == task && s.sampler == sampler)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.task,
                r.sampler,
                r.classifier,
                io::fmt_f64_17(r.mean),
                io::fmt_f64_17(r.standard_error),
                io::fmt_f64_17(r.permuted_mean),
                io::fmt_f64_17(r.p_value)
            );
        }
        out
    }

    pub fn persistence_csv(&self) -> String {
        let mut out = format!("{PERSISTENCE_CSV_HEADER}\n");
        for r in &self.persistence {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.network,
                io::fmt_f64_17(r.weight_decay),
                io::fmt_f64_17(r.test_loss),
                io::fmt_f64_17(r.total_h0),
                io::fmt_f64_17(r.total_h1)
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Sampler comparison (mean accuracy % +- standard error over classifiers and folds)");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "  {:<15} {:<6} {:6.1} +- {:4.1}   permuted {:6.1}",
                s.task.name(),
                s.sampler.name(),
                100.0 * s.mean,
                100.0 * s.standard_error,
                100.0 * s.permuted_mean
            );
        }
        let _ = writeln!(out, "Per classifier");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "  {:<15} {:<6} {:<12} {:6.1} +- {:4.1}   p = {:.4}",
                r.task.name(),
                r.sampler.name(),
                r.classifier.name(),
                100.0 * r.mean,
                100.0 * r.standard_error,
                r.p_value
            );
        }
        let _ = writeln!(
            out,
            "Spearman(test loss, H0 total persistence) = {:.4}, permutation p = {:.4} over {} networks",
            self.spearman_h0,
            self.spearman_h0_p,
            self.persistence.len()
        );
        if !self.flagged_cells.is_empty() {
            let _ = writeln!(out, "Flagged cells (diverged or unsampled): {:?}", self.flagged_cells);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_sizes() {
        let v: Vec<f64> = (0..10).map(|i| (10 - i) as f64).collect();
        let c = assign_classes(&v, 5).unwrap();
        for k in 0..5 {
            assert_eq!(c.iter().filter(|&&x| x == k).count(), 2);
        }
        // lowest loss in class 0
        assert_eq!(c[9], 0);
        let flat = assign_classes(&[1.0; 6], 3).unwrap();
        assert_eq!(flat, vec![0, 0, 1, 1, 2, 2]);
        let c36 = assign_classes(&(0..36).map(|i| i as f64).collect::<Vec<_>>(), 3).unwrap();
        for k in 0..3 {
            assert_eq!(c36.iter().filter(|&&x| x == k).count(), 12);
        }
        assert!(assign_classes(&[1.0], 2).is_err());
    }

    #[test]
    fn sweep_cell_count() {
        assert_eq!(SweepSpec::default().cells().unwrap().len(), 36);
        let empty = SweepSpec { seeds: vec![], ..SweepSpec::default() };
        assert!(empty.cells().is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 300.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn zero_permutations_give_p_one() {
        let r = permutation_p(&[0, 1, 0, 1], 0, 0, 1, |_| Ok(1.0)).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn classifier_names_round_trip() {
        for c in Classifier::DEFAULT_SET {
            assert_eq!(c.name().parse::<Classifier>().unwrap(), c);
        }
        assert!("svm".parse::<Classifier>().is_err());
    }

    #[test]
    fn chain_placement_preserves_every_pair() {
        let coords = DenseMatrix::from_rows(&(0..30).map(|i| [i as f64, 0.0]).collect::<Vec<_>>()).unwrap();
        let pairs: Vec<_> = (0..29).map(|i| (i, i + 1)).collect();
        assert_eq!(trajectory_preservation_score(&coords, &pairs, 10).unwrap(), 1.0);
        let two = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(trajectory_preservation_score(&two, &[(0, 1)], 10).unwrap(), 1.0);
    }
}
