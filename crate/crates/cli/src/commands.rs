//! One function per pipeline stage. Each writes its data files under the
//! output directory plus a manifest, and returns the data files written.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lltk_core::io::{self, fmt_f64_17, fnv1a, fnv1a_file, read_matrix, write_matrix, KvDoc};
use lltk_core::numkit::DenseMatrix;
use lltk_core::phate::phate_embed;
use lltk_core::sampler::{
    grid_sample, jump_and_retrain, load_sample_set, naive_sample, save_sample_set, SampleMethod,
    SampleSet, INDEX_FILE,
};
use lltk_core::studies::{
    feature_matrix, run_study, run_sweep, sample_cell, SamplerSuite, SweepCell,
};
use lltk_core::topo::{diagrams_from_csv, diagrams_to_csv, loss_level_diagrams, total_persistence};
use lltk_core::trainer::{init_params, make_dataset, train as train_model, ParamVector, Trajectory};
use lltk_core::Error;

use crate::config::{Config, LossColumn};
use crate::manifest::RunManifest;
use crate::svg::{self, ColorBy, PlotKind};
use crate::tables::{embedding_from_csv, embedding_rows, embedding_to_csv, persistence_from_csv};
use crate::CliError;

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const OPTIMUM_FILE: &str = "optimum.traj";
pub const TRAJECTORY_FILE: &str = "trajectory.traj";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const POTENTIAL_FILE: &str = "potential.bin";
pub const DIAGRAMS_FILE: &str = "diagrams.csv";
pub const TOTALS_FILE: &str = "total_persistence.kv";

/// Resolved settings shared by every stage.
pub struct Context {
    pub cfg: Config,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: Config, out: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&out).map_err(Error::from)?;
        Ok(Self { cfg, out })
    }

    pub fn optimum_path(&self) -> PathBuf {
        self.out.join(OPTIMUM_FILE)
    }

    pub fn samples_dir(&self, method: SampleMethod) -> PathBuf {
        self.out.join("samples").join(method.name())
    }

    pub fn embed_dir(&self, method: SampleMethod) -> PathBuf {
        self.out.join("embed").join(method.name())
    }

    pub fn persist_dir(&self, method: SampleMethod) -> PathBuf {
        self.out.join("persist").join(method.name())
    }

    pub fn study_dir(&self) -> PathBuf {
        self.out.join("study")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.out.join("plots")
    }
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn with_sidecar(path: &Path) -> [PathBuf; 2] {
    [path.to_path_buf(), io::meta_path(path)]
}

fn load_optimum(path: &Path) -> CliResult<ParamVector> {
    let (t, _) = Trajectory::load(path)?;
    Ok(t.last().params.clone())
}

/// Trains one network from the configured initialisation. Writes the full
/// trajectory and the final epoch on its own.
pub fn train(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::start("train", cfg);
    let data = make_dataset(&cfg.data)?;
    let start = init_params(&cfg.arch(), cfg.init_seed)?;
    let trajectory = train_model(&cfg.train, &data, &start)?;
    let mut extra = KvDoc::new();
    extra.set("init_seed", cfg.init_seed);
    for (k, v) in cfg.train.describe().entries() {
        extra.set(format!("train.{k}"), v);
    }
    let full = ctx.out.join(TRAJECTORY_FILE);
    trajectory.save(&full, &extra)?;
    let optimum = Trajectory {
        records: vec![trajectory.last().clone()],
        provenance: trajectory.provenance.clone(),
    };
    let opt_path = ctx.optimum_path();
    optimum.save(&opt_path, &extra)?;
    let last = trajectory.last();
    manifest.set("result.train_loss", fmt_f64_17(last.train_loss));
    manifest.set("result.train_acc", fmt_f64_17(last.train_acc));
    manifest.set("result.test_loss", fmt_f64_17(last.test_loss));
    manifest.set("result.test_acc", fmt_f64_17(last.test_acc));
    let mut written = Vec::new();
    for p in with_sidecar(&opt_path).into_iter().chain(with_sidecar(&full)) {
        manifest.output(&p);
        written.push(p);
    }
    manifest.finish(&ctx.out, "train")?;
    Ok(written)
}

fn sampler_config(cfg: &Config, method: SampleMethod) -> KvDoc {
    match method {
        SampleMethod::JumpRetrain => {
            let mut kv = cfg.jr.describe();
            for (k, v) in cfg.train.describe().entries() {
                kv.set(format!("train.{k}"), v);
            }
            kv
        }
        SampleMethod::Grid => cfg.grid.describe(),
        SampleMethod::Naive => cfg.naive.describe(),
    }
}

pub fn draw_samples(cfg: &Config, method: SampleMethod, optimum: &ParamVector) -> CliResult<SampleSet> {
    let data = make_dataset(&cfg.data)?;
    let decay = cfg.train.optimizer.weight_decay;
    Ok(match method {
        SampleMethod::JumpRetrain => jump_and_retrain(optimum, &data, &cfg.train, &cfg.jr)?.0,
        SampleMethod::Grid => grid_sample(optimum, &data, decay, &cfg.grid)?,
        SampleMethod::Naive => naive_sample(optimum, &data, decay, &cfg.naive)?,
    })
}

/// Samples around the optimum stored in `optimum` and writes the set to
/// `samples/<method>/`. The index names the optimum by file name and hash.
pub fn sample(ctx: &Context, method: SampleMethod, optimum: &Path) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::start("sample", cfg);
    manifest.set("method", method);
    for p in with_sidecar(optimum) {
        manifest.input(p);
    }
    let theta = load_optimum(optimum)?;
    let set = draw_samples(cfg, method, &theta)?;
    let dir = ctx.samples_dir(method);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(Error::from)?;
    }
    let name = optimum
        .file_name()
        .map_or_else(|| OPTIMUM_FILE.to_string(), |n| n.to_string_lossy().into_owned());
    let mut written = save_sample_set(&set, &dir, &name, &sampler_config(cfg, method))?;
    let index_path = written.pop().expect("index is always written");
    let mut index = KvDoc::read(&index_path)?;
    index.set("optimum_fnv1a", hex(fnv1a_file(optimum)?));
    index.write(&index_path)?;
    written.push(index_path);
    let mut files = Vec::new();
    for p in written {
        if p.extension().is_some_and(|e| e == "traj") {
            files.extend(with_sidecar(&p));
        } else {
            files.push(p);
        }
    }
    manifest.set("budget", set.budget());
    manifest.set("points", set.points.len());
    for p in &files {
        manifest.output(p);
    }
    manifest.finish(&ctx.out, &format!("sample_{}", method.name()))?;
    Ok(files)
}

fn sample_inputs(dir: &Path, read: &[PathBuf]) -> Vec<PathBuf> {
    let mut inputs = Vec::new();
    for p in read {
        if p.extension().is_some_and(|e| e == "traj") {
            inputs.extend(with_sidecar(p));
        } else {
            inputs.push(p.clone());
        }
    }
    if inputs.is_empty() {
        inputs.push(dir.join(INDEX_FILE));
    }
    inputs
}

/// Reads a sample set and checks that `optimum` is the file it was drawn
/// around.
pub fn read_samples(dir: &Path, optimum: &Path) -> CliResult<(SampleSet, Vec<PathBuf>)> {
    let theta = load_optimum(optimum)?;
    let (set, index, read) = load_sample_set(dir, &theta)?;
    if let Some(expected) = index.get("optimum_fnv1a") {
        let actual = hex(fnv1a_file(optimum)?);
        if actual != expected {
            return Err(Error::Format {
                path: dir.join(INDEX_FILE),
                reason: format!(
                    "sample set was drawn around an optimum with hash {expected}, {} has {actual}",
                    optimum.display()
                ),
            }
            .into());
        }
    }
    Ok((set, sample_inputs(dir, &read)))
}

/// PHATE embedding of every sampled parameter vector, with the potential
/// distances kept for the persistence stage.
pub fn embed(ctx: &Context, method: SampleMethod, samples: &Path, optimum: &Path) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::start("embed", cfg);
    manifest.set("method", method);
    let (set, inputs) = read_samples(samples, optimum)?;
    for p in inputs.into_iter().chain(with_sidecar(optimum)) {
        manifest.input(p);
    }
    let rows: Vec<&[f64]> = set.points.iter().map(|p| p.params.as_slice()).collect();
    let points = DenseMatrix::from_rows(&rows)?;
    let embedding = phate_embed(&points, &cfg.phate)?;
    let table = embedding_rows(&set, &embedding.coordinates)?;
    let dir = ctx.embed_dir(method);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let csv = dir.join(EMBEDDING_FILE);
    fs::write(&csv, embedding_to_csv(&table)).map_err(Error::from)?;
    let potential = dir.join(POTENTIAL_FILE);
    write_matrix(&potential, &embedding.potential)?;
    manifest.set("metric", cfg.phate.metric);
    manifest.set("diffusion_t", embedding.t);
    manifest.set("stress", fmt_f64_17(embedding.stress));
    manifest.set("rows", table.len());
    manifest.output(&csv);
    manifest.output(&potential);
    manifest.finish(&ctx.out, &format!("embed_{}", method.name()))?;
    Ok(vec![csv, potential])
}

pub struct PersistOutcome {
    pub total_h0: f64,
    pub total_h1: f64,
    pub files: Vec<PathBuf>,
}

/// Loss-level persistence on the kNN graph of the stored potential
/// distances.
pub fn persist(ctx: &Context, method: SampleMethod, embed_dir: &Path) -> CliResult<PersistOutcome> {
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::start("persist", cfg);
    manifest.set("method", method);
    let potential_path = embed_dir.join(POTENTIAL_FILE);
    let csv_path = embed_dir.join(EMBEDDING_FILE);
    let distances = read_matrix(&potential_path)?;
    let text = fs::read_to_string(&csv_path).map_err(Error::from)?;
    let rows = embedding_from_csv(&text, &csv_path)?;
    manifest.input(&potential_path);
    manifest.input(&csv_path);
    let values: Vec<f64> = rows
        .iter()
        .map(|r| match cfg.loss_column {
            LossColumn::TrainLoss => r.train_loss,
            LossColumn::TestLoss => r.test_loss,
        })
        .collect();
    let (h0, h1) = loss_level_diagrams(&distances, &values, cfg.graph_k)?;
    let total_h0 = total_persistence(&h0, cfg.policy);
    let total_h1 = total_persistence(&h1, cfg.policy);
    let dir = ctx.persist_dir(method);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let diagrams = dir.join(DIAGRAMS_FILE);
    fs::write(&diagrams, diagrams_to_csv(&[&h0, &h1])).map_err(Error::from)?;
    let mut totals = KvDoc::new();
    totals.set("values", cfg.loss_column.name());
    totals.set("k", cfg.graph_k);
    totals.set("policy", cfg.policy.name());
    totals.set("h0_pairs", h0.pairs.len());
    totals.set("h0_essential", h0.essential_count());
    totals.set("h1_pairs", h1.pairs.len());
    totals.set("h1_essential", h1.essential_count());
    totals.set("total_h0", fmt_f64_17(total_h0));
    totals.set("total_h1", fmt_f64_17(total_h1));
    let totals_path = dir.join(TOTALS_FILE);
    totals.write(&totals_path)?;
    manifest.output(&diagrams);
    manifest.output(&totals_path);
    manifest.finish(&ctx.out, &format!("persist_{}", method.name()))?;
    Ok(PersistOutcome {
        total_h0,
        total_h1,
        files: vec![diagrams, totals_path],
    })
}

/// Stable name of a sweep cell, derived from everything that determines
/// its training run.
pub fn cell_file_name(cfg: &Config, cell: &SweepCell) -> String {
    let spec = &cfg.sweep;
    let arch = spec.arch(&cell.spec).iter().map(usize::to_string).collect::<Vec<_>>().join("-");
    let text = format!(
        "arch={arch}\ninit_seed={}\n{}{}",
        cell.spec.seed,
        spec.train_config(&cell.spec).describe().to_text(),
        spec.describe().to_text()
    );
    format!("cell_{}.traj", hex(fnv1a(text.as_bytes())))
}

/// Trains the sweep, samples every trained cell with all three samplers and
/// runs the classification and persistence study.
pub fn study(ctx: &Context, threads: usize) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let mut manifest = RunManifest::start("study", cfg);
    for (k, v) in cfg.sweep.describe().entries() {
        manifest.set(&format!("sweep.{k}"), v);
    }
    let cells = run_sweep(&cfg.sweep, threads)?;
    let sweep_dir = ctx.out.join("sweep");
    fs::create_dir_all(&sweep_dir).map_err(Error::from)?;
    let mut written = Vec::new();
    for cell in &cells {
        let Some(t) = &cell.trajectory else {
            manifest.set(
                &format!("sweep.flagged.{:03}", cell.spec.id),
                cell.diverged.as_deref().unwrap_or("no trajectory"),
            );
            continue;
        };
        let mut extra = KvDoc::new();
        extra.set("cell", cell.spec.id);
        extra.set("batch_size", cell.spec.batch_size);
        extra.set("weight_decay", fmt_f64_17(cell.spec.weight_decay));
        extra.set("augment", cell.spec.augment);
        extra.set("width", cell.spec.width);
        extra.set("init_seed", cell.spec.seed);
        let optimum = Trajectory {
            records: vec![t.last().clone()],
            provenance: t.provenance.clone(),
        };
        let path = sweep_dir.join(cell_file_name(cfg, cell));
        optimum.save(&path, &extra)?;
        written.extend(with_sidecar(&path));
    }
    let data = make_dataset(&cfg.sweep.dataset)?;
    let suite = SamplerSuite {
        jr: lltk_core::sampler::JumpRetrainConfig {
            threads,
            ..cfg.jr.clone()
        },
        grid: cfg.grid.clone(),
        naive: cfg.naive.clone(),
    };
    let mut samples = Vec::with_capacity(cells.len());
    for cell in &cells {
        if cell.trajectory.is_none() {
            samples.push(None);
            continue;
        }
        match sample_cell(&cfg.sweep, cell, &data, &suite) {
            Ok(sets) => samples.push(Some(sets)),
            Err(e @ Error::NonFiniteLoss { .. }) => {
                manifest.set(&format!("sweep.unsampled.{:03}", cell.spec.id), e);
                samples.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut study_cfg = cfg.study.clone();
    study_cfg.threads = threads;
    let report = run_study(&cfg.sweep, &cells, &samples, &study_cfg)?;
    let dir = ctx.study_dir();
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let report_csv = dir.join("report.csv");
    fs::write(&report_csv, report.to_csv()).map_err(Error::from)?;
    let persistence_csv = dir.join("persistence.csv");
    fs::write(&persistence_csv, report.persistence_csv()).map_err(Error::from)?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, report.to_text()).map_err(Error::from)?;
    written.extend([report_csv, persistence_csv, summary]);
    for (m, method) in SampleMethod::ALL.into_iter().enumerate() {
        let sets: Vec<&SampleSet> = samples.iter().flatten().map(|s| &s[m]).collect();
        if sets.is_empty() {
            continue;
        }
        let path = dir.join(format!("features_{}.bin", method.name()));
        write_matrix(&path, &feature_matrix(&sets)?)?;
        written.push(path);
    }
    manifest.set("spearman_h0", fmt_f64_17(report.spearman_h0));
    manifest.set("spearman_h0_p", fmt_f64_17(report.spearman_h0_p));
    for p in &written {
        manifest.output(p);
    }
    manifest.finish(&ctx.out, "study")?;
    Ok(written)
}

/// Renders `kind` from `input` into `output`; `stamp` is the unix time
/// written into the comment line.
pub fn render_plot(kind: PlotKind, input: &Path, color: ColorBy, stamp: u64) -> CliResult<String> {
    let text = fs::read_to_string(input).map_err(Error::from)?;
    Ok(match kind {
        PlotKind::EmbeddingScatter => svg::embedding_scatter(&embedding_from_csv(&text, input)?, color, stamp),
        PlotKind::PersistenceDiagram => {
            let diagrams = diagrams_from_csv(&text).map_err(|e| match e {
                Error::Format { reason, .. } => Error::Format {
                    path: input.to_path_buf(),
                    reason,
                },
                other => other,
            })?;
            svg::persistence_diagram(&diagrams, stamp)
        }
        PlotKind::TotalPersistenceScatter => {
            svg::total_persistence_scatter(&persistence_from_csv(&text, input)?, stamp)
        }
    })
}

pub fn plot(kind: PlotKind, input: &Path, color: ColorBy, output: &Path, manifest_dir: &Path) -> CliResult<PathBuf> {
    let mut manifest = RunManifest::bare("plot");
    manifest.set("kind", kind.name());
    manifest.set("color", color.name());
    manifest.input(input);
    let svg_text = render_plot(kind, input, color, unix_now())?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    fs::create_dir_all(manifest_dir).map_err(Error::from)?;
    fs::write(output, svg_text).map_err(Error::from)?;
    manifest.output(output);
    let stem = output
        .file_stem()
        .map_or_else(|| kind.name().to_string(), |s| s.to_string_lossy().into_owned());
    manifest.finish(manifest_dir, &format!("plot_{stem}"))?;
    Ok(output.to_path_buf())
}

/// Every stage in order with one config: train, sample and embed and
/// persist with all three samplers, the study, then the plots.
pub fn pipeline(ctx: &Context, threads: usize) -> CliResult<Vec<PathBuf>> {
    let mut manifest = RunManifest::start("pipeline", &ctx.cfg);
    let mut written = train(ctx)?;
    let optimum = ctx.optimum_path();
    let plots = ctx.plots_dir();
    for method in SampleMethod::ALL {
        written.extend(sample(ctx, method, &optimum)?);
        written.extend(embed(ctx, method, &ctx.samples_dir(method), &optimum)?);
        written.extend(persist(ctx, method, &ctx.embed_dir(method))?.files);
        let color = if method == SampleMethod::JumpRetrain {
            ColorBy::Epoch
        } else {
            ColorBy::LogLoss
        };
        written.push(plot(
            PlotKind::EmbeddingScatter,
            &ctx.embed_dir(method).join(EMBEDDING_FILE),
            color,
            &plots.join(format!("embedding_{}.svg", method.name())),
            &ctx.out,
        )?);
        written.push(plot(
            PlotKind::PersistenceDiagram,
            &ctx.persist_dir(method).join(DIAGRAMS_FILE),
            ColorBy::Epoch,
            &plots.join(format!("diagram_{}.svg", method.name())),
            &ctx.out,
        )?);
    }
    written.extend(study(ctx, threads)?);
    written.push(plot(
        PlotKind::TotalPersistenceScatter,
        &ctx.study_dir().join("persistence.csv"),
        ColorBy::Loss,
        &plots.join("total_persistence.svg"),
        &ctx.out,
    )?);
    for p in &written {
        manifest.output(p);
    }
    manifest.finish(&ctx.out, "pipeline")?;
    Ok(written)
}
