//! End-to-end experiment: ingest, train the classifier, estimate rates,
//! train QuaNet, run the protocol and write the results.
//!
//! Split topology, per seed: the labelled corpus is split 60/40 into a
//! classifier training part and a validation part (rates, QuaNet, MNB
//! smoothing sweep). The test pool is disjoint from both and only ever
//! feeds the protocol.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::classifier::{
    accuracy, train_lstm_classifier, train_mlp_classifier, train_mnb, Classifier, ClassifierOutput, MnbModel,
    NeuralTrainConfig, OracleClassifier, ScoredPool,
};
use crate::data::synthetic::{has_synthetic_sidecar, load_synthetic};
use crate::data::{
    featurize_hashed_bow, load_corpus_tsv, prevalence_grid, split_train_val, synthetic_corpus, LabeledCorpus,
    WeightScheme,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_report, plot_data, read_results, run_protocol, summarize, write_plot, write_results, write_summary,
    ProtocolConfig, ProtocolRow, Quantifier, Report, ScoredQuantifier,
};
use crate::quanet::{train_quanet, QuaNetConfig, QuaNetTrainConfig, QuaNetTrainReport};
use crate::quantifiers::{rate_estimates_from, Method, RateSource};

pub const MANIFEST: &str = "manifest.txt";
pub const FAILED: &str = "FAILED";
pub const RESULTS: &str = "results.csv";
pub const SUMMARY: &str = "summary.csv";
pub const PLOT: &str = "plot.csv";

const TEST_POOL_STREAM: u64 = 0x7465_7374;
const MNB_ALPHAS: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic,
    Tsv(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Mlp,
    Mnb,
    Lstm,
    Oracle,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Mnb => "mnb",
            ClassifierKind::Lstm => "lstm",
            ClassifierKind::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ClassifierKind::Mlp),
            "mnb" => Ok(ClassifierKind::Mnb),
            "lstm" => Ok(ClassifierKind::Lstm),
            "oracle" => Ok(ClassifierKind::Oracle),
            _ => Err(Error::invalid(format!(
                "unknown classifier `{s}` (mlp, mnb, lstm, oracle)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

/// Where EMQ takes its posteriors from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmqBase {
    /// MNB when every feature weight is nonnegative, else the main classifier.
    Auto,
    Mnb,
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Separate test pool; without one a stratified `test_fraction` of
    /// `data` is held out.
    pub test_data: Option<PathBuf>,
    pub test_fraction: f64,
    pub n_docs: usize,
    pub n_test: usize,
    pub separation: f64,
    pub dim: usize,
    pub train_prevalence: f64,
    pub test_prevalence: f64,
    pub data_seed: u64,
    pub hash_dim: usize,
    pub weighting: WeightScheme,
    pub split: f64,
    pub classifier: ClassifierKind,
    pub quantifiers: Vec<Method>,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub sample_size: usize,
    pub seeds: Vec<u64>,
    pub scale: Scale,
    pub oracle_tpr: f64,
    pub oracle_fpr: f64,
    pub mnb_alpha: f64,
    pub mnb_alpha_sweep: bool,
    pub emq_base: EmqBase,
    pub clf_max_iter: usize,
    pub clf_patience: usize,
    pub quanet_max_iter: usize,
    pub quanet_patience: usize,
    /// Size of QuaNet training samples; 0 means the protocol sample size.
    pub quanet_sample_size: usize,
    /// QuaNet training lengths span [size / spread, size * spread].
    pub quanet_length_spread: f64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic,
            test_data: None,
            test_fraction: 0.3,
            n_docs: 5000,
            n_test: 5000,
            separation: 4.0,
            dim: 10,
            train_prevalence: 0.5,
            test_prevalence: 0.5,
            data_seed: 0,
            hash_dim: 1 << 14,
            weighting: WeightScheme::LogTf,
            split: 0.6,
            classifier: ClassifierKind::Mlp,
            quantifiers: Method::ALL.to_vec(),
            grid: prevalence_grid(),
            trials: 100,
            sample_size: 500,
            seeds: vec![1, 2, 3],
            scale: Scale::Desk,
            oracle_tpr: 0.9,
            oracle_fpr: 0.1,
            mnb_alpha: 1.0,
            mnb_alpha_sweep: false,
            emq_base: EmqBase::Auto,
            clf_max_iter: 20_000,
            clf_patience: 20,
            quanet_max_iter: 20_000,
            quanet_patience: 20,
            quanet_sample_size: 0,
            quanet_length_spread: 3.0,
            out: PathBuf::from("prevalens-out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Every accepted key, in manifest order.
    pub const KEYS: [&'static str; 32] = [
        "data",
        "test_data",
        "test_fraction",
        "n_docs",
        "n_test",
        "separation",
        "dim",
        "train_prevalence",
        "test_prevalence",
        "data_seed",
        "hash_dim",
        "weighting",
        "split",
        "classifier",
        "quantifiers",
        "grid",
        "trials",
        "sample_size",
        "seeds",
        "scale",
        "oracle_tpr",
        "oracle_fpr",
        "mnb_alpha",
        "mnb_alpha_sweep",
        "emq_base",
        "clf_max_iter",
        "clf_patience",
        "quanet_max_iter",
        "quanet_patience",
        "quanet_sample_size",
        "quanet_length_spread",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => {
                self.data = if v == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Tsv(PathBuf::from(v))
                }
            }
            "test_data" => self.test_data = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "test_fraction" => self.test_fraction = parse_num(key, v)?,
            "n_docs" => self.n_docs = parse_num(key, v)?,
            "n_test" => self.n_test = parse_num(key, v)?,
            "separation" => self.separation = parse_num(key, v)?,
            "dim" => self.dim = parse_num(key, v)?,
            "train_prevalence" => self.train_prevalence = parse_num(key, v)?,
            "test_prevalence" => self.test_prevalence = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "hash_dim" => self.hash_dim = parse_num(key, v)?,
            "weighting" => self.weighting = v.parse()?,
            "split" => self.split = parse_num(key, v)?,
            "classifier" => self.classifier = v.parse()?,
            "quantifiers" => self.quantifiers = Method::parse_list(v)?,
            "grid" => {
                self.grid = if v == "default" {
                    prevalence_grid()
                } else {
                    parse_list(key, v)?
                }
            }
            "trials" => self.trials = parse_num(key, v)?,
            "sample_size" => self.sample_size = parse_num(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "scale" => {
                self.scale = match v {
                    "desk" => Scale::Desk,
                    "paper" => Scale::Paper,
                    _ => return Err(Error::invalid(format!("unknown scale `{v}` (desk, paper)"))),
                }
            }
            "oracle_tpr" => self.oracle_tpr = parse_num(key, v)?,
            "oracle_fpr" => self.oracle_fpr = parse_num(key, v)?,
            "mnb_alpha" => self.mnb_alpha = parse_num(key, v)?,
            "mnb_alpha_sweep" => self.mnb_alpha_sweep = parse_bool(key, v)?,
            "emq_base" => {
                self.emq_base = match v {
                    "auto" => EmqBase::Auto,
                    "mnb" => EmqBase::Mnb,
                    "classifier" => EmqBase::Classifier,
                    _ => {
                        return Err(Error::invalid(format!(
                            "unknown emq_base `{v}` (auto, mnb, classifier)"
                        )))
                    }
                }
            }
            "clf_max_iter" => self.clf_max_iter = parse_num(key, v)?,
            "clf_patience" => self.clf_patience = parse_num(key, v)?,
            "quanet_max_iter" => self.quanet_max_iter = parse_num(key, v)?,
            "quanet_patience" => self.quanet_patience = parse_num(key, v)?,
            "quanet_sample_size" => self.quanet_sample_size = parse_num(key, v)?,
            "quanet_length_spread" => self.quanet_length_spread = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data" => match &self.data {
                DataSource::Synthetic => "synthetic".into(),
                DataSource::Tsv(p) => p.display().to_string(),
            },
            "test_data" => self
                .test_data
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
            "test_fraction" => self.test_fraction.to_string(),
            "n_docs" => self.n_docs.to_string(),
            "n_test" => self.n_test.to_string(),
            "separation" => self.separation.to_string(),
            "dim" => self.dim.to_string(),
            "train_prevalence" => self.train_prevalence.to_string(),
            "test_prevalence" => self.test_prevalence.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "hash_dim" => self.hash_dim.to_string(),
            "weighting" => self.weighting.as_str().into(),
            "split" => self.split.to_string(),
            "classifier" => self.classifier.as_str().into(),
            "quantifiers" => join(&self.quantifiers),
            "grid" => join(&self.grid),
            "trials" => self.trials.to_string(),
            "sample_size" => self.sample_size.to_string(),
            "seeds" => join(&self.seeds),
            "scale" => match self.scale {
                Scale::Desk => "desk".into(),
                Scale::Paper => "paper".into(),
            },
            "oracle_tpr" => self.oracle_tpr.to_string(),
            "oracle_fpr" => self.oracle_fpr.to_string(),
            "mnb_alpha" => self.mnb_alpha.to_string(),
            "mnb_alpha_sweep" => self.mnb_alpha_sweep.to_string(),
            "emq_base" => match self.emq_base {
                EmqBase::Auto => "auto".into(),
                EmqBase::Mnb => "mnb".into(),
                EmqBase::Classifier => "classifier".into(),
            },
            "clf_max_iter" => self.clf_max_iter.to_string(),
            "clf_patience" => self.clf_patience.to_string(),
            "quanet_max_iter" => self.quanet_max_iter.to_string(),
            "quanet_patience" => self.quanet_patience.to_string(),
            "quanet_sample_size" => self.quanet_sample_size.to_string(),
            "quanet_length_spread" => self.quanet_length_spread.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key: value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 1,
                msg: format!("expected `key: value`, found `{line}`"),
            })?;
            self.set(key, value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    /// The config as `key: value` text that [`apply_text`](Self::apply_text)
    /// reads back unchanged.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}: {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantifiers.is_empty() {
            return Err(Error::invalid("no quantifiers selected"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("no seeds given"));
        }
        if self.quantifiers.contains(&Method::QuaNet) && self.classifier == ClassifierKind::Mnb {
            return Err(Error::invalid(
                "quanet needs document embeddings from a neural or oracle classifier",
            ));
        }
        if self.classifier == ClassifierKind::Lstm && self.data == DataSource::Synthetic {
            return Err(Error::invalid("the lstm classifier needs text documents"));
        }
        if self.grid.is_empty() || self.grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("grid prevalences must lie in [0, 1]"));
        }
        if self.trials == 0 || self.sample_size == 0 {
            return Err(Error::invalid("trials and sample_size must be positive"));
        }
        if !(self.split > 0.0 && self.split < 1.0) || !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("split and test_fraction must lie in (0, 1)"));
        }
        if !(self.quanet_length_spread >= 1.0) {
            return Err(Error::invalid("quanet_length_spread must be at least 1"));
        }
        Ok(())
    }

    pub fn classifier_config(&self) -> NeuralTrainConfig {
        let base = match self.scale {
            Scale::Desk => NeuralTrainConfig::desk(),
            Scale::Paper => NeuralTrainConfig::paper(),
        };
        NeuralTrainConfig {
            max_iterations: self.clf_max_iter,
            patience: self.clf_patience,
            ..base
        }
    }

    pub fn quanet_config(&self, embedding_dim: usize) -> QuaNetConfig {
        match self.scale {
            Scale::Desk => QuaNetConfig::desk(embedding_dim),
            Scale::Paper => QuaNetConfig::paper(embedding_dim),
        }
    }

    pub fn quanet_train_config(&self, seed: u64, progress: bool) -> QuaNetTrainConfig {
        QuaNetTrainConfig {
            max_iterations: self.quanet_max_iter,
            patience: self.quanet_patience,
            sample_size: if self.quanet_sample_size == 0 {
                self.sample_size
            } else {
                self.quanet_sample_size
            },
            length_spread: self.quanet_length_spread,
            seed,
            progress,
            ..QuaNetTrainConfig::default()
        }
    }

    pub fn protocol_config(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            grid: self.grid.clone(),
            trials: self.trials,
            sample_size: self.sample_size,
            seed,
        }
    }
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// The labelled corpus the classifier side draws from, and the test pool.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub labeled: LabeledCorpus,
    pub test: LabeledCorpus,
    pub text: bool,
}

fn featurize_text(c: &mut LabeledCorpus, cfg: &ExperimentConfig) -> Result<()> {
    featurize_hashed_bow(c, cfg.hash_dim, cfg.weighting)
}

fn load_one(path: &Path, cfg: &ExperimentConfig) -> Result<(LabeledCorpus, bool)> {
    if has_synthetic_sidecar(path) {
        return Ok((load_synthetic(path)?.0, false));
    }
    let mut c = load_corpus_tsv(path)?;
    featurize_text(&mut c, cfg)?;
    Ok((c, true))
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    match &cfg.data {
        DataSource::Synthetic => {
            let (labeled, gen) =
                synthetic_corpus(cfg.n_docs, cfg.train_prevalence, cfg.separation, cfg.dim, cfg.data_seed)?;
            let test = gen.sample_corpus(
                cfg.n_test,
                cfg.test_prevalence,
                cfg.data_seed ^ TEST_POOL_STREAM,
                cfg.n_docs,
            )?;
            Ok(Datasets {
                labeled,
                test,
                text: false,
            })
        }
        DataSource::Tsv(path) => {
            let (all, text) = load_one(path, cfg)?;
            let (labeled, test) = match &cfg.test_data {
                Some(tp) => {
                    let (test, test_text) = load_one(tp, cfg)?;
                    if test_text != text || test.feature_dim() != all.feature_dim() {
                        return Err(Error::invalid("training and test data have different feature spaces"));
                    }
                    (all, test)
                }
                None => split_train_val(&all, 1.0 - cfg.test_fraction, cfg.data_seed)?,
            };
            Ok(Datasets { labeled, test, text })
        }
    }
}

/// What one seed produced.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<ProtocolRow>,
    pub classifier_accuracy: f64,
    /// Wall time spent training the classifier and QuaNet, in seconds.
    pub training_seconds: f64,
    pub quanet: Option<QuaNetTrainReport>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub runs: Vec<SeedRun>,
    pub report: Report,
}

fn log(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn features_nonnegative(c: &LabeledCorpus) -> bool {
    c.documents().iter().all(|d| d.features.iter().all(|&(_, w)| w >= 0.0))
}

fn train_mnb_tuned(train: &LabeledCorpus, val: &LabeledCorpus, cfg: &ExperimentConfig) -> Result<(MnbModel, f64)> {
    if !cfg.mnb_alpha_sweep {
        return Ok((train_mnb(train, cfg.mnb_alpha)?, cfg.mnb_alpha));
    }
    let mut best: Option<(MnbModel, f64, f64)> = None;
    for alpha in MNB_ALPHAS {
        let m = train_mnb(train, alpha)?;
        let acc = accuracy(&m.predict(val.documents())?, val.documents());
        if best.as_ref().is_none_or(|b| acc > b.2) {
            best = Some((m, alpha, acc));
        }
    }
    let (m, alpha, _) = best.expect("alpha grid is not empty");
    Ok((m, alpha))
}

/// One seed of the pipeline, writing models and CSVs to `dir`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    data: &Datasets,
    seed: u64,
    dir: &Path,
    quiet: bool,
) -> std::result::Result<SeedRun, StageError> {
    fs::create_dir_all(dir).map_err(Error::from).stage("output")?;
    let mut notes = Vec::new();
    let (train, val) = split_train_val(&data.labeled, cfg.split, seed).stage("split")?;
    let train_prior = train.positive_prevalence();
    log(
        quiet,
        format!(
            "seed {seed}: {} train, {} validation, {} test documents",
            train.len(),
            val.len(),
            data.test.len()
        ),
    );

    let t0 = Instant::now();
    let clf_cfg = cfg.classifier_config();
    let mut mnb: Option<MnbModel> = None;
    let classifier: Box<dyn Classifier> = match cfg.classifier {
        ClassifierKind::Mlp | ClassifierKind::Lstm => {
            let (model, report) = if cfg.classifier == ClassifierKind::Mlp {
                train_mlp_classifier(&train, &clf_cfg, seed)
            } else {
                train_lstm_classifier(&train, &clf_cfg, seed)
            }
            .stage("classifier")?;
            model.save(dir.join("classifier.qnt")).stage("output")?;
            notes.push(format!(
                "classifier: {} iterations, best at {}, validation loss {} -> {}",
                report.iterations, report.best_iteration, report.initial_val_loss, report.best_val_loss
            ));
            Box::new(model)
        }
        ClassifierKind::Mnb => {
            let (model, alpha) = train_mnb_tuned(&train, &val, cfg).stage("classifier")?;
            model.save(dir.join("classifier.qnt")).stage("output")?;
            notes.push(format!("classifier: mnb alpha {alpha}"));
            mnb = Some(model.clone());
            Box::new(model)
        }
        ClassifierKind::Oracle => {
            Box::new(OracleClassifier::new(cfg.oracle_tpr, cfg.oracle_fpr, seed).stage("classifier")?)
        }
    };
    let val_pool = ScoredPool::new(val.clone(), &*classifier).stage("rates")?;
    let clf_acc = accuracy(&val_pool.outputs, val.documents());
    log(
        quiet,
        format!(
            "seed {seed}: {} trained in {:.1}s, validation accuracy {clf_acc:.4}",
            cfg.classifier.as_str(),
            t0.elapsed().as_secs_f64()
        ),
    );
    let rates = rate_estimates_from(&val_pool.outputs, &val.labels(), RateSource::HeldOut).stage("rates")?;
    notes.push(format!(
        "rates: tpr {} fpr {} (soft tpr {} fpr {})",
        rates.tpr_hard, rates.fpr_hard, rates.tpr_soft, rates.fpr_soft
    ));

    let test_outputs = Arc::new(classifier.predict(data.test.documents()).stage("classifier")?);

    let mut training_seconds = t0.elapsed().as_secs_f64();
    let mut quanet = None;
    let mut quanet_report = None;
    if cfg.quantifiers.contains(&Method::QuaNet) {
        let t1 = Instant::now();
        let (model, report) = train_quanet(
            &val_pool,
            &rates,
            cfg.quanet_config(val_pool.embedding_dim()),
            &cfg.quanet_train_config(seed, !quiet),
        )
        .stage("quanet")?;
        model
            .save(dir.join("quanet.qnt"), &[("seed".into(), seed.to_string())])
            .stage("output")?;
        log(
            quiet,
            format!(
                "seed {seed}: quanet {} iterations (best {}) in {:.1}s, validation mse {}",
                report.iterations,
                report.best_iteration,
                t1.elapsed().as_secs_f64(),
                report.best_val_mse
            ),
        );
        notes.push(format!(
            "quanet: {} iterations, best at {}, validation mse {}",
            report.iterations, report.best_iteration, report.best_val_mse
        ));
        training_seconds += t1.elapsed().as_secs_f64();
        quanet = Some(Arc::new(model));
        quanet_report = Some(report);
    }

    let mut emq_outputs = test_outputs.clone();
    if cfg.quantifiers.contains(&Method::Emq) {
        let use_mnb = match cfg.emq_base {
            EmqBase::Mnb => true,
            EmqBase::Classifier => false,
            EmqBase::Auto => features_nonnegative(&train),
        };
        if use_mnb && cfg.classifier != ClassifierKind::Mnb {
            let (model, alpha) = train_mnb_tuned(&train, &val, cfg).stage("emq")?;
            model.save(dir.join("mnb.qnt")).stage("output")?;
            mnb = Some(model);
            notes.push(format!("emq: mnb posteriors, alpha {alpha}"));
        } else if !use_mnb {
            notes.push(format!("emq: {} posteriors", cfg.classifier.as_str()));
        }
        if use_mnb {
            let model = mnb.as_ref().expect("trained above");
            emq_outputs = Arc::new(model.predict(data.test.documents()).stage("emq")?);
        }
    }

    let quantifiers: Vec<ScoredQuantifier> = cfg
        .quantifiers
        .iter()
        .map(|&m| {
            let outputs: Arc<Vec<ClassifierOutput>> = if m == Method::Emq {
                emq_outputs.clone()
            } else {
                test_outputs.clone()
            };
            ScoredQuantifier::new(m, outputs, rates.clone(), train_prior, quanet.clone())
        })
        .collect::<Result<_>>()
        .stage("protocol")?;
    let refs: Vec<&dyn Quantifier> = quantifiers.iter().map(|q| q as &dyn Quantifier).collect();
    let t2 = Instant::now();
    let rows = run_protocol(&refs, &data.test, &cfg.protocol_config(seed)).stage("protocol")?;
    log(
        quiet,
        format!(
            "seed {seed}: protocol {} rows in {:.1}s",
            rows.len(),
            t2.elapsed().as_secs_f64()
        ),
    );

    write_results(dir.join(RESULTS), &rows).stage("output")?;
    write_summary(dir.join(SUMMARY), &summarize(&rows).stage("output")?).stage("output")?;
    write_plot(dir.join(PLOT), &plot_data(&rows)).stage("output")?;
    Ok(SeedRun {
        seed,
        rows,
        classifier_accuracy: clf_acc,
        training_seconds,
        quanet: quanet_report,
        notes,
    })
}

fn manifest_text(cfg: &ExperimentConfig, runs: &[SeedRun]) -> String {
    let mut s = format!(
        "# prevalens {} run manifest; load with `prevalens run --config` to reproduce\n",
        env!("CARGO_PKG_VERSION")
    );
    s.push_str(&cfg.to_text());
    for r in runs {
        s.push_str(&format!(
            "# seed {}: classifier accuracy {}\n",
            r.seed, r.classifier_accuracy
        ));
        for n in &r.notes {
            s.push_str(&format!("# seed {}: {n}\n", r.seed));
        }
    }
    s
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn run_inner(cfg: &ExperimentConfig, quiet: bool) -> std::result::Result<RunOutcome, StageError> {
    cfg.validate().stage("config")?;
    fs::create_dir_all(&cfg.out).map_err(Error::from).stage("output")?;
    let _ = fs::remove_file(cfg.out.join(FAILED));
    fs::write(cfg.out.join(MANIFEST), manifest_text(cfg, &[]))
        .map_err(Error::from)
        .stage("output")?;
    let data = load_datasets(cfg).stage("data")?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        runs.push(run_seed(cfg, &data, seed, &seed_dir(&cfg.out, seed), quiet)?);
        fs::write(cfg.out.join(MANIFEST), manifest_text(cfg, &runs))
            .map_err(Error::from)
            .stage("output")?;
    }
    let all: Vec<ProtocolRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    write_summary(cfg.out.join(SUMMARY), &summarize(&all).stage("output")?).stage("output")?;
    write_plot(cfg.out.join(PLOT), &plot_data(&all)).stage("output")?;
    let per_run: Vec<Vec<ProtocolRow>> = runs.iter().map(|r| r.rows.clone()).collect();
    let report = build_report(&per_run).stage("report")?;
    Ok(RunOutcome { runs, report })
}

/// Runs every seed of the experiment. On failure the partial outputs stay
/// in place next to a `FAILED` file holding the error.
pub fn run_experiment(cfg: &ExperimentConfig, quiet: bool) -> std::result::Result<RunOutcome, StageError> {
    let result = run_inner(cfg, quiet);
    if let Err(e) = &result {
        if cfg.out.is_dir() {
            let _ = fs::write(cfg.out.join(FAILED), format!("{e}\n"));
        }
    }
    result
}

/// Result files under `dir`: `dir/results.csv` and `dir/*/results.csv`,
/// sorted by path. Each file is one run.
pub fn find_results(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", dir.display())));
    }
    let mut found = Vec::new();
    if dir.join(RESULTS).is_file() {
        found.push(dir.join(RESULTS));
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    found.extend(subdirs.into_iter().map(|d| d.join(RESULTS)).filter(|p| p.is_file()));
    if found.is_empty() {
        return Err(Error::invalid(format!("no {RESULTS} under {}", dir.display())));
    }
    Ok(found)
}

pub fn report_dir(dir: &Path) -> Result<Report> {
    let runs = find_results(dir)?
        .iter()
        .map(read_results)
        .collect::<Result<Vec<_>>>()?;
    build_report(&runs)
}

/// The smoke-test configuration: synthetic desk-scale data, grid 21 × 10
/// trials × size 100, all six quantifiers, one seed.
/// Validation error has flattened well before this on the synthetic demo data.
pub const DEMO_QUANET_MAX_ITER: usize = 2000;

pub fn demo_config(classifier: ClassifierKind, seed: u64, out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        classifier,
        trials: 10,
        sample_size: 100,
        seeds: vec![seed],
        data_seed: seed,
        quanet_max_iter: DEMO_QUANET_MAX_ITER,
        out,
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_roundtrip() {
        let mut c = ExperimentConfig::default();
        c.apply_text(
            "# comment\nclassifier: oracle\nquantifiers: cc, acc,cc\ngrid: 0.1,0.5\nseeds: 4\nout: /tmp/x # trailing\n",
            Path::new("cfg"),
        )
        .unwrap();
        assert_eq!(c.classifier, ClassifierKind::Oracle);
        assert_eq!(c.quantifiers, vec![Method::Cc, Method::Acc]);
        assert_eq!(c.grid, vec![0.1, 0.5]);
        let mut d = ExperimentConfig::default();
        d.apply_text(&c.to_text(), Path::new("manifest")).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn bad_configs() {
        let mut c = ExperimentConfig::default();
        assert!(c.apply_text("nonsense", Path::new("f")).is_err());
        assert!(c.apply_text("frobnicate: 3", Path::new("f")).is_err());
        c.set("quantifiers", "").unwrap();
        assert_eq!(
            c.validate().unwrap_err().to_string(),
            "invalid argument: no quantifiers selected"
        );
        let mut q = ExperimentConfig::default();
        q.set("classifier", "mnb").unwrap();
        assert!(q.validate().is_err());
    }

    #[test]
    fn synthetic_split_topology_is_disjoint() {
        let cfg = ExperimentConfig {
            n_docs: 200,
            n_test: 100,
            ..ExperimentConfig::default()
        };
        let d = load_datasets(&cfg).unwrap();
        let ids: std::collections::HashSet<usize> = d.labeled.documents().iter().map(|x| x.id).collect();
        assert!(d.test.documents().iter().all(|x| !ids.contains(&x.id)));
        assert_eq!(d.test.len(), 100);
    }
}
