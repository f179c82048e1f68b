//! Sampling the loss landscape around a trained optimum: jump and retrain,
//! a 3-D grid, and naive rays, all along filter-normalized random
//! directions.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{self, KvDoc};
use crate::numkit::{norm, parallel_map, SeededRng};
use crate::trainer::{
    measure, train, Dataset, EpochRecord, LayerMap, ParamVector, Provenance, TrainConfig,
    Trajectory,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub values: Vec<f64>,
    pub seed: u64,
    pub normalized: bool,
}

/// Component-wise standard normal direction from stream `stream` of `seed`.
pub fn random_direction(layout: &LayerMap, seed: u64, stream: u64) -> Direction {
    let mut rng = SeededRng::new(seed, stream);
    Direction {
        values: (0..layout.len()).map(|_| rng.normal()).collect(),
        seed: stream,
        normalized: false,
    }
}

/// Rescales every filter slice of `d` to the norm of the same slice of
/// `reference`. Slices where either norm is zero become zero.
pub fn filter_normalize(d: &Direction, reference: &ParamVector) -> Result<Direction> {
    if d.values.len() != reference.len() {
        return Err(Error::Shape(format!(
            "direction has {} components, parameters {}",
            d.values.len(),
            reference.len()
        )));
    }
    let mut values = d.values.clone();
    for slice in reference.layout().filters() {
        let target = norm(&reference.as_slice()[slice.clone()]);
        let current = norm(&values[slice.clone()]);
        let scale = if target == 0.0 || current == 0.0 {
            0.0
        } else {
            target / current
        };
        for v in &mut values[slice] {
            *v *= scale;
        }
    }
    Ok(Direction {
        values,
        seed: d.seed,
        normalized: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleMethod {
    JumpRetrain,
    Grid,
    Naive,
}

impl SampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            SampleMethod::JumpRetrain => "jr",
            SampleMethod::Grid => "grid",
            SampleMethod::Naive => "naive",
        }
    }

    pub const ALL: [SampleMethod; 3] = [Self::JumpRetrain, Self::Grid, Self::Naive];
}

impl fmt::Display for SampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jr" => Ok(Self::JumpRetrain),
            "grid" => Ok(Self::Grid),
            "naive" => Ok(Self::Naive),
            other => Err(Error::InvalidArgument(format!("unknown sampling method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PointProvenance {
    JumpRetrain { seed: u64, step_size: f64, epoch: u32 },
    /// `lattice` holds doubled integer coordinates, so even axis counts
    /// stay integral.
    Grid { coords: [f64; 3], lattice: [i64; 3] },
    Naive { direction: usize, c: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub params: ParamVector,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub provenance: PointProvenance,
}

impl SamplePoint {
    fn from_record(r: EpochRecord, provenance: PointProvenance) -> Self {
        Self {
            params: r.params,
            train_loss: r.train_loss,
            train_acc: r.train_acc,
            test_loss: r.test_loss,
            test_acc: r.test_acc,
            provenance,
        }
    }

    pub fn is_jump_init(&self) -> bool {
        matches!(self.provenance, PointProvenance::JumpRetrain { epoch: 0, .. })
    }
}

/// Whether jump-init points count toward the sample budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BudgetAccounting {
    #[default]
    RetrainOnly,
    IncludeJumpInit,
}

impl BudgetAccounting {
    pub fn name(self) -> &'static str {
        match self {
            BudgetAccounting::RetrainOnly => "retrain_only",
            BudgetAccounting::IncludeJumpInit => "include_jump_init",
        }
    }
}

impl FromStr for BudgetAccounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrain_only" => Ok(Self::RetrainOnly),
            "include_jump_init" => Ok(Self::IncludeJumpInit),
            other => Err(Error::InvalidArgument(format!("unknown accounting `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub method: SampleMethod,
    pub points: Vec<SamplePoint>,
    pub optimum: ParamVector,
    pub accounting: BudgetAccounting,
}

impl SampleSet {
    /// Points counted toward the budget; the optimum is never among them.
    pub fn budget(&self) -> usize {
        match self.accounting {
            BudgetAccounting::IncludeJumpInit => self.points.len(),
            BudgetAccounting::RetrainOnly => {
                self.points.iter().filter(|p| !p.is_jump_init()).count()
            }
        }
    }

    /// Points in feature order, skipping jump-init points unless they are
    /// counted.
    pub fn counted_points(&self) -> impl Iterator<Item = &SamplePoint> {
        let skip_init = self.accounting == BudgetAccounting::RetrainOnly;
        self.points
            .iter()
            .filter(move |p| !(skip_init && p.is_jump_init()))
    }

    /// Groups jump-and-retrain points into per-run epoch chains.
    pub fn runs(&self) -> Vec<Vec<usize>> {
        let mut runs: Vec<Vec<usize>> = Vec::new();
        let mut last: Option<(u64, u64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            if let PointProvenance::JumpRetrain { seed, step_size, .. } = p.provenance {
                let key = (seed, step_size.to_bits());
                if last != Some(key) {
                    runs.push(Vec::new());
                    last = Some(key);
                }
                runs.last_mut().expect("pushed above").push(i);
            }
        }
        runs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpRetrainConfig {
    pub seeds: Vec<u64>,
    pub step_sizes: Vec<f64>,
    pub epochs: u32,
    /// Base seed of the direction RNG; direction `s` uses stream `s`.
    pub direction_seed: u64,
    pub accounting: BudgetAccounting,
    pub threads: usize,
}

impl Default for JumpRetrainConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            step_sizes: vec![0.25, 0.5, 0.75, 1.0],
            epochs: 32,
            direction_seed: 0,
            accounting: BudgetAccounting::RetrainOnly,
            threads: 1,
        }
    }
}

impl JumpRetrainConfig {
    pub fn describe(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        kv.set("seeds", join(self.seeds.iter().map(u64::to_string)));
        kv.set("step_sizes", join(self.step_sizes.iter().map(|v| io::fmt_f64(*v))));
        kv.set("epochs", self.epochs);
        kv.set("direction_seed", self.direction_seed);
        kv.set("accounting", self.accounting.name());
        kv
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(",")
}

fn run_shuffle_seed(base: u64, seed: u64, step_size: f64) -> u64 {
    io::fnv1a(format!("{base}/{seed}/{}", io::fmt_f64(step_size)).as_bytes())
}

/// One retraining run per (seed, step size): jump to
/// `optimum + step * normalized direction`, then retrain with `cfg` and a
/// fresh optimizer state. Points come out ordered by (seed, step, epoch).
pub fn jump_and_retrain(
    optimum: &ParamVector,
    data: &Dataset,
    cfg: &TrainConfig,
    jr: &JumpRetrainConfig,
) -> Result<(SampleSet, Vec<Trajectory>)> {
    let directions = jr
        .seeds
        .iter()
        .map(|&s| filter_normalize(&random_direction(optimum.layout(), jr.direction_seed, s), optimum))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (si, &seed) in jr.seeds.iter().enumerate() {
        for &step in &jr.step_sizes {
            jobs.push((si, seed, step));
        }
    }
    let runs = parallel_map(&jobs, jr.threads, |_, &(si, seed, step)| {
        let start = optimum.offset(&directions[si].values, step);
        let mut run_cfg = cfg.clone();
        run_cfg.epochs = jr.epochs;
        run_cfg.shuffle_seed = run_shuffle_seed(cfg.shuffle_seed, seed, step);
        let mut t = train(&run_cfg, data, &start)?;
        t.provenance = Provenance {
            seed,
            step_size: step,
            ..t.provenance
        };
        Ok(t)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for t in &runs {
        for r in &t.records {
            let provenance = PointProvenance::JumpRetrain {
                seed: t.provenance.seed,
                step_size: t.provenance.step_size,
                epoch: r.epoch,
            };
            points.push(SamplePoint::from_record(r.clone(), provenance));
        }
    }
    let set = SampleSet {
        method: SampleMethod::JumpRetrain,
        points,
        optimum: optimum.clone(),
        accounting: jr.accounting,
    };
    Ok((set, runs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub per_axis: usize,
    pub extent: f64,
    /// Keep only this many lattice points nearest the origin.
    pub budget: Option<usize>,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            per_axis: 9,
            extent: 1.0,
            budget: Some(640),
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn describe(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        kv.set("per_axis", self.per_axis);
        kv.set("extent", io::fmt_f64(self.extent));
        kv.set("budget", self.budget.map_or("all".to_string(), |b| b.to_string()));
        kv.set("seed", self.seed);
        kv
    }
}

/// Lattice points in sampling order: by squared norm, then
/// lexicographically. The origin is left out.
pub fn grid_lattice(per_axis: usize, budget: Option<usize>) -> Vec<[i64; 3]> {
    if per_axis == 0 {
        return Vec::new();
    }
    let top = per_axis as i64 - 1;
    let axis: Vec<i64> = (0..per_axis as i64).map(|i| 2 * i - top).collect();
    let mut points = Vec::with_capacity(per_axis.pow(3));
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                if [a, b, c] != [0, 0, 0] {
                    points.push([a, b, c]);
                }
            }
        }
    }
    points.sort_by_key(|p| (p.iter().map(|v| v * v).sum::<i64>(), *p));
    if let Some(n) = budget {
        points.truncate(n);
    }
    points
}

fn lattice_coords(lattice: [i64; 3], per_axis: usize, extent: f64) -> [f64; 3] {
    let top = per_axis.saturating_sub(1) as f64;
    lattice.map(|v| if top == 0.0 { 0.0 } else { extent * v as f64 / top })
}

/// Evaluates the loss at `optimum + sum c_i b_i` over a symmetric 3-D
/// lattice spanned by three normalized random directions.
pub fn grid_sample(
    optimum: &ParamVector,
    data: &Dataset,
    weight_decay: f64,
    cfg: &GridConfig,
) -> Result<SampleSet> {
    if !(cfg.extent >= 0.0) {
        return Err(Error::InvalidArgument("grid extent must be non-negative".into()));
    }
    let basis = (0..3)
        .map(|s| filter_normalize(&random_direction(optimum.layout(), cfg.seed, s), optimum))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (i, lattice) in grid_lattice(cfg.per_axis, cfg.budget).into_iter().enumerate() {
        let coords = lattice_coords(lattice, cfg.per_axis, cfg.extent);
        let mut values = optimum.as_slice().to_vec();
        for (b, c) in basis.iter().zip(coords) {
            for (v, d) in values.iter_mut().zip(&b.values) {
                *v += c * d;
            }
        }
        let params = ParamVector::from_values(Arc::clone(optimum.layout()), values)?;
        let r = measure(&params, data, weight_decay, i as u32)?;
        points.push(SamplePoint::from_record(r, PointProvenance::Grid { coords, lattice }));
    }
    Ok(SampleSet {
        method: SampleMethod::Grid,
        points,
        optimum: optimum.clone(),
        accounting: BudgetAccounting::RetrainOnly,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveConfig {
    pub n_dirs: usize,
    pub steps: Vec<f64>,
    pub seed: u64,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        Self {
            n_dirs: 64,
            steps: (1..=10).map(|i| i as f64 / 10.0).collect(),
            seed: 0,
        }
    }
}

impl NaiveConfig {
    pub fn describe(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        kv.set("n_dirs", self.n_dirs);
        kv.set("steps", join(self.steps.iter().map(|v| io::fmt_f64(*v))));
        kv.set("seed", self.seed);
        kv
    }
}

/// Evaluates `optimum + c * d_i` for every direction and nonzero step.
pub fn naive_sample(
    optimum: &ParamVector,
    data: &Dataset,
    weight_decay: f64,
    cfg: &NaiveConfig,
) -> Result<SampleSet> {
    if cfg.steps.iter().any(|&c| c == 0.0 || !c.is_finite()) {
        return Err(Error::InvalidArgument(
            "naive steps must be finite and nonzero (the optimum is excluded)".into(),
        ));
    }
    let mut points = Vec::with_capacity(cfg.n_dirs * cfg.steps.len());
    for dir in 0..cfg.n_dirs {
        let d = filter_normalize(&random_direction(optimum.layout(), cfg.seed, dir as u64), optimum)?;
        for (j, &c) in cfg.steps.iter().enumerate() {
            let r = measure(&optimum.offset(&d.values, c), data, weight_decay, j as u32)?;
            points.push(SamplePoint::from_record(r, PointProvenance::Naive { direction: dir, c }));
        }
    }
    Ok(SampleSet {
        method: SampleMethod::Naive,
        points,
        optimum: optimum.clone(),
        accounting: BudgetAccounting::RetrainOnly,
    })
}

pub const INDEX_FILE: &str = "index.kv";

fn run_file_name(set: &SampleSet, group: usize, p: &SamplePoint) -> String {
    match p.provenance {
        PointProvenance::JumpRetrain { seed, step_size, .. } => {
            format!("jr_seed{seed}_step{}.traj", io::fmt_f64(step_size))
        }
        PointProvenance::Grid { .. } => "grid.traj".to_string(),
        PointProvenance::Naive { .. } => format!("{}_dir{group:03}.traj", set.method),
    }
}

fn group_key(p: &SamplePoint) -> (u64, u64) {
    match p.provenance {
        PointProvenance::JumpRetrain { seed, step_size, .. } => (seed, step_size.to_bits()),
        PointProvenance::Grid { .. } => (0, 0),
        PointProvenance::Naive { direction, .. } => (direction as u64, 0),
    }
}

fn point_meta(p: &SamplePoint) -> KvDoc {
    let mut kv = KvDoc::new();
    kv.set("arch", p.params.layout().arch_string());
    match &p.provenance {
        PointProvenance::JumpRetrain { seed, step_size, .. } => {
            kv.set("seed", seed);
            kv.set("step_size", io::fmt_f64(*step_size));
        }
        PointProvenance::Grid { .. } => {}
        PointProvenance::Naive { direction, .. } => kv.set("direction", direction),
    }
    kv
}

/// Records of one file, with grid/naive provenance packed per record:
/// grid coordinates are recomputed from the lattice index stored in `epoch`,
/// naive steps from the step index.
fn to_record(p: &SamplePoint, epoch: u32) -> io::RawRecord {
    io::RawRecord {
        epoch,
        train_loss: p.train_loss,
        train_acc: p.train_acc,
        test_loss: p.test_loss,
        test_acc: p.test_acc,
        params: p.params.as_slice().to_vec(),
    }
}

/// Writes one trajectory file per run plus an index manifest. `config`
/// entries (sampler parameters) are copied into the index under `config.`.
/// Returns the written paths, index last.
pub fn save_sample_set(
    set: &SampleSet,
    dir: &Path,
    optimum_ref: &str,
    config: &KvDoc,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut index = KvDoc::new();
    index.set("method", set.method);
    index.set("budget", set.budget());
    index.set("points", set.points.len());
    index.set("accounting", set.accounting.name());
    index.set("optimum", optimum_ref);
    index.set("arch", set.optimum.layout().arch_string());
    for (k, v) in config.entries() {
        index.set(format!("config.{k}"), v);
    }
    let mut start = 0;
    let mut group = 0;
    while start < set.points.len() {
        let key = group_key(&set.points[start]);
        let end = start
            + set.points[start..]
                .iter()
                .take_while(|p| group_key(p) == key)
                .count();
        let chunk = &set.points[start..end];
        let records: Vec<_> = chunk
            .iter()
            .enumerate()
            .map(|(i, p)| match p.provenance {
                PointProvenance::JumpRetrain { epoch, .. } => to_record(p, epoch),
                _ => to_record(p, i as u32),
            })
            .collect();
        let name = run_file_name(set, group, &chunk[0]);
        let path = dir.join(&name);
        io::write_trajectory_file(&path, &records, &point_meta(&chunk[0]))?;
        index.set(format!("file.{group:03}"), &name);
        written.push(path);
        start = end;
        group += 1;
    }
    index.set("files", group);
    let index_path = dir.join(INDEX_FILE);
    index.write(&index_path)?;
    written.push(index_path);
    Ok(written)
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number list `{text}`")))
        })
        .collect()
}

/// Loads a sample set written by [`save_sample_set`]; the optimum is read
/// from `optimum` (its last record). Returns the set, the index document
/// and every file read.
pub fn load_sample_set(dir: &Path, optimum: &ParamVector) -> Result<(SampleSet, KvDoc, Vec<PathBuf>)> {
    let index_path = dir.join(INDEX_FILE);
    let index = KvDoc::read(&index_path)?;
    let bad = |reason: String| Error::Format {
        path: index_path.clone(),
        reason,
    };
    let get = |key: &str| index.get(key).ok_or_else(|| bad(format!("missing `{key}`")));
    let method: SampleMethod = get("method")?.parse()?;
    let accounting: BudgetAccounting = get("accounting")?.parse()?;
    let layout = LayerMap::parse_arch(get("arch")?)?;
    if layout.as_ref() != optimum.layout().as_ref() {
        return Err(bad("optimum architecture differs from the sample set".into()));
    }
    let n_files: usize = get("files")?
        .parse()
        .map_err(|_| bad("bad `files`".into()))?;
    let mut read = vec![index_path.clone()];
    let mut points = Vec::new();
    for g in 0..n_files {
        let path = dir.join(get(&format!("file.{g:03}"))?);
        let (records, meta) = io::read_trajectory_file(&path)?;
        read.push(path.clone());
        let meta_num = |key: &str| -> Result<f64> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format {
                    path: io::meta_path(&path),
                    reason: format!("missing or bad `{key}`"),
                })
        };
        for r in records {
            let provenance = match method {
                SampleMethod::JumpRetrain => PointProvenance::JumpRetrain {
                    seed: meta_num("seed")? as u64,
                    step_size: meta_num("step_size")?,
                    epoch: r.epoch,
                },
                SampleMethod::Grid => {
                    let per_axis: usize = get("config.per_axis")?
                        .parse()
                        .map_err(|_| bad("bad `config.per_axis`".into()))?;
                    let extent: f64 = get("config.extent")?
                        .parse()
                        .map_err(|_| bad("bad `config.extent`".into()))?;
                    let lattice = *grid_lattice(per_axis, None)
                        .get(r.epoch as usize)
                        .ok_or_else(|| bad("lattice index out of range".into()))?;
                    PointProvenance::Grid {
                        coords: lattice_coords(lattice, per_axis, extent),
                        lattice,
                    }
                }
                SampleMethod::Naive => {
                    let steps = parse_list(get("config.steps")?)?;
                    PointProvenance::Naive {
                        direction: meta_num("direction")? as usize,
                        c: *steps
                            .get(r.epoch as usize)
                            .ok_or_else(|| bad("step index out of range".into()))?,
                    }
                }
            };
            points.push(SamplePoint {
                params: ParamVector::from_values(Arc::clone(&layout), r.params)?,
                train_loss: r.train_loss,
                train_acc: r.train_acc,
                test_loss: r.test_loss,
                test_acc: r.test_acc,
                provenance,
            });
        }
    }
    let set = SampleSet {
        method,
        points,
        optimum: optimum.clone(),
        accounting,
    };
    Ok((set, index, read))
}
