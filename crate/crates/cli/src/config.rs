//! Run configuration: one flat `key = value` file with `[section]` headers.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use lltk_core::io::KvDoc;
use lltk_core::numkit::Metric;
use lltk_core::phate::{DiffusionTime, PhateConfig};
use lltk_core::sampler::{
    BudgetAccounting, GridConfig, JumpRetrainConfig, NaiveConfig, SampleMethod,
};
use lltk_core::studies::{Classifier, StudyConfig, SweepSpec, Task};
use lltk_core::topo::EssentialPolicy;
use lltk_core::trainer::{
    DatasetKind, DatasetSpec, LabelMode, LrSchedule, OptimizerConfig, OptimizerKind, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Which recorded loss weights the vertices of the persistence filtration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossColumn {
    TrainLoss,
    TestLoss,
}

impl LossColumn {
    pub fn name(self) -> &'static str {
        match self {
            LossColumn::TrainLoss => "train_loss",
            LossColumn::TestLoss => "test_loss",
        }
    }
}

impl FromStr for LossColumn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train_loss" => Ok(Self::TrainLoss),
            "test_loss" => Ok(Self::TestLoss),
            other => Err(format!("unknown loss column `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Config {
    pub data: DatasetSpec,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub sample_method: SampleMethod,
    pub jr: JumpRetrainConfig,
    pub grid: GridConfig,
    pub naive: NaiveConfig,
    pub phate: PhateConfig,
    pub graph_k: usize,
    pub policy: EssentialPolicy,
    pub loss_column: LossColumn,
    pub sweep: SweepSpec,
    pub study: StudyConfig,
    /// The parsed document, echoed into manifests.
    pub doc: KvDoc,
}

struct Reader<'a> {
    doc: &'a KvDoc,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Reader<'a> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(key.to_string());
        self.doc.get(key)
    }

    fn error(&self, key: &str, message: String) -> ConfigError {
        ConfigError {
            line: self.doc.line(key),
            message: format!("key `{key}`: {message}"),
        }
    }

    fn parse_with<T, F>(&self, key: &str, parse: F) -> Result<Option<T>, ConfigError>
    where
        F: Fn(&str) -> Result<T, String>,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse(v).map(Some).map_err(|m| self.error(key, m)),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.parse_with(key, |v| v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}")))
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| ConfigError {
            line: None,
            message: format!("missing required key `{key}`"),
        })
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parse_with(key, parse_list::<T>)?.unwrap_or(default))
    }

    fn check_unused(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self.doc.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(ConfigError {
                line: self.doc.line(k),
                message: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("cannot parse list item `{s}`: {e}")))
        .collect()
}

fn wrap<T, E: fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

impl Config {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc = KvDoc::parse(text).map_err(|e| ConfigError {
            line: Some(e.line),
            message: e.message,
        })?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: KvDoc) -> Result<Self, ConfigError> {
        let r = Reader {
            doc: &doc,
            used: RefCell::new(BTreeSet::new()),
        };

        let kind: DatasetKind = r
            .parse_with("data.kind", |v| wrap(v.parse::<DatasetKind>()))?
            .ok_or_else(|| ConfigError {
                line: None,
                message: "missing required key `data.kind`".into(),
            })?;
        let data = DatasetSpec {
            kind,
            n_train: r.or("data.n_train", 200)?,
            n_test: r.or("data.n_test", 200)?,
            noise: r.or("data.noise", 0.15)?,
            seed: r.or("data.seed", 1)?,
            label_mode: r
                .parse_with("data.label_mode", |v| wrap(v.parse::<LabelMode>()))?
                .unwrap_or_default(),
        };
        let hidden = r.list("model.hidden", vec![16usize, 16])?;
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(r.error("model.hidden", "needs at least one positive width".into()));
        }
        let init_seed = r.or("model.init_seed", 0)?;

        let kind: OptimizerKind = r
            .parse_with("train.optimizer", |v| wrap(v.parse::<OptimizerKind>()))?
            .ok_or_else(|| ConfigError {
                line: None,
                message: "missing required key `train.optimizer`".into(),
            })?;
        let mut optimizer = OptimizerConfig::new(kind, r.required("train.lr")?);
        optimizer.momentum = r.or("train.momentum", optimizer.momentum)?;
        optimizer.beta1 = r.or("train.beta1", optimizer.beta1)?;
        optimizer.beta2 = r.or("train.beta2", optimizer.beta2)?;
        optimizer.eps = r.or("train.eps", optimizer.eps)?;
        optimizer.weight_decay = r.or("train.weight_decay", 0.0)?;
        let mut train = TrainConfig::new(
            optimizer,
            r.required("train.epochs")?,
            r.or("train.batch_size", 20)?,
            r.or("train.shuffle_seed", 0)?,
        );
        train.input_noise = r.or("train.input_noise", 0.0)?;
        train.schedule = LrSchedule {
            factor: r.or("train.lr_decay_factor", 1.0)?,
            milestones: r.list("train.lr_milestones", Vec::new())?,
        };

        let sample_method = r
            .parse_with("sample.method", |v| wrap(v.parse::<SampleMethod>()))?
            .unwrap_or(SampleMethod::JumpRetrain);
        let jr_default = JumpRetrainConfig::default();
        let jr = JumpRetrainConfig {
            seeds: r.list("sample.seeds", jr_default.seeds)?,
            step_sizes: r.list("sample.step_sizes", jr_default.step_sizes)?,
            epochs: r.or("sample.epochs", jr_default.epochs)?,
            direction_seed: r.or("sample.direction_seed", 0)?,
            accounting: r
                .parse_with("sample.accounting", |v| wrap(v.parse::<BudgetAccounting>()))?
                .unwrap_or_default(),
            threads: 1,
        };
        let grid_default = GridConfig::default();
        let grid = GridConfig {
            per_axis: r.or("sample.grid_per_axis", grid_default.per_axis)?,
            extent: r.or("sample.grid_extent", grid_default.extent)?,
            budget: r
                .parse_with("sample.grid_budget", |v| {
                    if v == "all" {
                        Ok(None)
                    } else {
                        wrap(v.parse::<usize>()).map(Some)
                    }
                })?
                .unwrap_or(grid_default.budget),
            seed: r.or("sample.grid_seed", 0)?,
        };
        let naive_default = NaiveConfig::default();
        let naive = NaiveConfig {
            n_dirs: r.or("sample.naive_dirs", naive_default.n_dirs)?,
            steps: r.list("sample.naive_steps", naive_default.steps)?,
            seed: r.or("sample.naive_seed", 0)?,
        };

        let phate_default = PhateConfig::default();
        let phate = PhateConfig {
            metric: r.or("embed.metric", Metric::Cosine)?,
            k: r.or("embed.k", phate_default.k)?,
            alpha: r.or("embed.alpha", phate_default.alpha)?,
            dim: r.or("embed.dim", phate_default.dim)?,
            t: r
                .parse_with("embed.t", |v| {
                    if v == "auto" {
                        Ok(DiffusionTime::Auto)
                    } else {
                        wrap(v.parse::<usize>()).map(DiffusionTime::Fixed)
                    }
                })?
                .unwrap_or(DiffusionTime::Auto),
            t_max: r.or("embed.t_max", phate_default.t_max)?,
            floor: r.or("embed.floor", phate_default.floor)?,
            max_iter: r.or("embed.max_iter", phate_default.max_iter)?,
            rel_tol: r.or("embed.rel_tol", phate_default.rel_tol)?,
        };
        let graph_k = r.or("persist.k", lltk_core::topo::DEFAULT_GRAPH_K)?;
        let policy = r
            .parse_with("persist.policy", |v| wrap(v.parse::<EssentialPolicy>()))?
            .unwrap_or_default();
        let loss_column = r.or("persist.values", LossColumn::TrainLoss)?;

        let sweep_default = SweepSpec::default();
        let sweep = SweepSpec {
            batch_sizes: r.list("sweep.batch_sizes", sweep_default.batch_sizes)?,
            weight_decays: r.list("sweep.weight_decays", sweep_default.weight_decays)?,
            augment: r.list("sweep.augment", sweep_default.augment)?,
            widths: r.list("sweep.widths", sweep_default.widths)?,
            seeds: r.list("sweep.seeds", sweep_default.seeds)?,
            hidden_layers: r.or("sweep.hidden_layers", sweep_default.hidden_layers)?,
            noise_sigma: r.or("sweep.noise_sigma", sweep_default.noise_sigma)?,
            dataset: data.clone(),
            optimizer: OptimizerConfig {
                weight_decay: 0.0,
                ..train.optimizer.clone()
            },
            epochs: r.or("sweep.epochs", train.epochs)?,
            schedule: train.schedule.clone(),
        };
        let study_default = StudyConfig::default();
        let study = StudyConfig {
            tasks: r
                .parse_with("study.tasks", |v| {
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            Task::ALL
                                .into_iter()
                                .find(|t| t.name() == s)
                                .ok_or_else(|| format!("unknown task `{s}`"))
                        })
                        .collect()
                })?
                .unwrap_or(study_default.tasks),
            classifiers: r
                .parse_with("study.classifiers", |v| wrap(parse_list::<Classifier>(v)))?
                .unwrap_or(study_default.classifiers),
            folds: r.or("study.folds", study_default.folds)?,
            n_perm: r.or("study.n_perm", study_default.n_perm)?,
            seed: r.or("study.seed", 0)?,
            generalization_classes: r.or("study.generalization_classes", study_default.generalization_classes)?,
            persistence: lltk_core::studies::PersistenceSettings {
                phate: phate.clone(),
                graph_k,
                policy,
            },
            threads: 1,
        };
        r.check_unused()?;
        Ok(Self {
            data,
            hidden,
            init_seed,
            train,
            sample_method,
            jr,
            grid,
            naive,
            phate,
            graph_k,
            policy,
            loss_column,
            sweep,
            study,
            doc,
        })
    }

    /// Full layer sizes: two input features, two classes.
    pub fn arch(&self) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend(&self.hidden);
        sizes.push(2);
        sizes
    }

    /// `--seed` replaces every seed that drives a stochastic choice of the
    /// run (initialisation, shuffling, directions, folds). The dataset seed
    /// is part of the data's identity and stays.
    pub fn apply_seed(&mut self, seed: u64) {
        self.init_seed = seed;
        self.train.shuffle_seed = seed;
        self.jr.direction_seed = seed;
        self.grid.seed = seed;
        self.naive.seed = seed;
        self.study.seed = seed;
        self.doc.set("model.init_seed", seed);
        self.doc.set("train.shuffle_seed", seed);
        self.doc.set("sample.direction_seed", seed);
        self.doc.set("sample.grid_seed", seed);
        self.doc.set("sample.naive_seed", seed);
        self.doc.set("study.seed", seed);
    }

    pub fn apply_metric(&mut self, metric: Metric) {
        self.phate.metric = metric;
        self.study.persistence.phate.metric = metric;
        self.doc.set("embed.metric", metric.name());
    }

    pub fn apply_policy(&mut self, policy: EssentialPolicy) {
        self.policy = policy;
        self.study.persistence.policy = policy;
        self.doc.set("persist.policy", policy.name());
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.jr.threads = threads;
        self.study.threads = threads;
    }

    /// Seeds recorded in manifests.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("data", self.data.seed),
            ("init", self.init_seed),
            ("shuffle", self.train.shuffle_seed),
            ("direction", self.jr.direction_seed),
            ("grid", self.grid.seed),
            ("naive", self.naive.seed),
            ("study", self.study.seed),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nkind = two_moons\n[train]\noptimizer = sgd_momentum\nlr = 0.1\nepochs = 10\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.arch(), vec![2, 16, 16, 2]);
        assert_eq!(c.train.batch_size, 20);
        assert_eq!(c.phate.metric, Metric::Cosine);
        assert_eq!(c.jr.seeds.len() * c.jr.step_sizes.len() * c.jr.epochs as usize, 640);
        assert_eq!(c.sweep.cells().unwrap().len(), 36);
    }

    #[test]
    fn missing_key_is_named() {
        let e = Config::parse("[data]\nkind = two_moons\n[train]\noptimizer = sgd\nepochs = 3\n").unwrap_err();
        assert!(e.message.contains("train.lr"), "{e}");
    }

    #[test]
    fn bad_values_and_unknown_keys_carry_line_numbers() {
        let e = Config::parse(&format!("{MINIMAL}batch_size = many\n")).unwrap_err();
        assert_eq!(e.line, Some(7));
        assert!(e.to_string().contains("train.batch_size"));
        let e = Config::parse(&format!("{MINIMAL}[embed]\nmetrc = cosine\n")).unwrap_err();
        assert_eq!(e.line, Some(8));
        assert!(e.message.contains("embed.metrc"));
        let e = Config::parse("[data]\nkind two_moons\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut c = Config::parse(MINIMAL).unwrap();
        c.apply_seed(42);
        assert!(c.seeds().iter().filter(|(n, _)| *n != "data").all(|(_, s)| *s == 42));
        assert_eq!(c.doc.get("train.shuffle_seed"), Some("42"));
    }
}
