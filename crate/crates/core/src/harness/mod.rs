//! Experiment orchestration: data preparation, seeded splits, per-seed runs,
//! aggregation, the labeled-anomaly sweep and the training-source ablation.
//!
//! One run is a (model, seed) pair. Its cross-validation fold is the seed's
//! position in the seed list modulo the fold count; that contiguous block of
//! training windows is held out for early stopping. The measured windows are
//! shuffled once per seed into a validation part (model selection, line
//! search) and a test part (reported metrics). Labeled anomalies are a
//! prefix of a per-seed permutation of all anomalous measured windows, so
//! smaller label sets are subsets of larger ones; they are removed from both
//! evaluation parts.

mod report;
mod search;

pub use report::{write_ablation, write_run_dir, write_sweep, RunDirManifest, RESULTS_HEADER};
pub use search::{line_search, validation_objective, with_value, DataCache, Dimension, SearchSpace, TraceEntry};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoders::{train_autoencoder, AutoencoderConfig, SiameseModel};
use crate::baselines::{fit_pca, mae_window_scores, PcaModel, PcaRank};
use crate::clustering::{choose_n_clusters, fit_kmeans, ClusterModel, ClusterSelection, KnnModel};
use crate::error::{Error, Result};
use crate::features::{apply_standardizer, extract_windows, fit_standardizer, FeatureConfig, FeatureDataset, Standardization};
use crate::metrics::{evaluate, pr_curve, roc_curve, EvalReport, PrPoint, RocPoint, RunMeta, ScoredSet};
use crate::synthgen::{benchmark_config, generate_real, generate_twin, twin_training_frame, AnomalyEvent, AnomalyKind, PlantConfig, TimeSeriesFrame};

const SPLIT_SALT: u64 = 0x7370_6c69_7400_0001;
const LABEL_SALT: u64 = 0x6c61_6265_6c00_0002;

/// Cluster count used when no labeled validation data is available.
pub const DEFAULT_N_CLUSTERS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcConfig {
    pub eta: f64,
    pub zeta: f64,
    pub candidates: Vec<usize>,
}

impl Default for CcConfig {
    fn default() -> Self {
        Self {
            eta: 0.15,
            zeta: 0.001,
            candidates: vec![8, 16, 32, 64],
        }
    }
}

impl CcConfig {
    pub fn unsupervised() -> Self {
        Self {
            eta: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PcaConfig {
    pub rank: PcaRank,
}

/// Model kind plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Sae(AutoencoderConfig),
    Ffae(AutoencoderConfig),
    Cc(CcConfig),
    Knn(KnnConfig),
    Pca(PcaConfig),
    Mae,
}

impl ModelSpec {
    /// Name used in reports: `cc-ws` for the penalized Cluster Centers
    /// score, `cc` for the unsupervised one.
    pub fn default_name(&self) -> &'static str {
        match self {
            ModelSpec::Sae(_) => "sae",
            ModelSpec::Ffae(_) => "ffae",
            ModelSpec::Cc(c) if c.eta > 0.0 => "cc-ws",
            ModelSpec::Cc(_) => "cc",
            ModelSpec::Knn(_) => "knn",
            ModelSpec::Pca(_) => "pca",
            ModelSpec::Mae => "mae",
        }
    }

    /// Parses a CLI model name into its default configuration.
    pub fn from_name(name: &str) -> Option<ModelSpec> {
        Some(match name {
            "sae" => ModelSpec::Sae(AutoencoderConfig::sae()),
            "ffae" => ModelSpec::Ffae(AutoencoderConfig::ffae()),
            "cc" => ModelSpec::Cc(CcConfig::unsupervised()),
            "cc-ws" => ModelSpec::Cc(CcConfig::default()),
            "knn" => ModelSpec::Knn(KnnConfig::default()),
            "pca" => ModelSpec::Pca(PcaConfig::default()),
            "mae" => ModelSpec::Mae,
            _ => return None,
        })
    }

    pub fn uses_labels(&self) -> bool {
        match self {
            ModelSpec::Sae(_) => true,
            ModelSpec::Cc(c) => c.eta > 0.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSource {
    /// Normal data from the twin.
    #[default]
    Twin,
    /// The unlabeled measured validation part, anomalies included.
    RealOnly,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_labeled() -> usize {
    10
}

fn default_folds() -> usize {
    10
}

fn default_validation_fraction() -> f64 {
    0.2
}

fn default_threshold_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Report name; defaults to the model's name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "benchmark_config")]
    pub plant: PlantConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    pub model: ModelSpec,
    #[serde(default = "default_labeled")]
    pub n_labeled_anomalies: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub training_source: TrainingSource,
    #[serde(default = "default_threshold_fraction")]
    pub threshold_fraction: f64,
    /// Write measured training time into the results; off by default so
    /// that repeated runs produce identical files.
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            name: None,
            plant: benchmark_config(),
            features: FeatureConfig::default(),
            model,
            n_labeled_anomalies: default_labeled(),
            folds: default_folds(),
            seeds: default_seeds(),
            validation_fraction: default_validation_fraction(),
            training_source: TrainingSource::Twin,
            threshold_fraction: default_threshold_fraction(),
            record_wall_clock: false,
        }
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.default_name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction must lie in (0, 1)"));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::config("threshold_fraction must lie in (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.training_source == TrainingSource::RealOnly && self.model == ModelSpec::Mae {
            return Err(Error::config("mae compares against the twin and cannot train on measured data"));
        }
        match &self.model {
            ModelSpec::Sae(c) | ModelSpec::Ffae(c) => c.validate()?,
            ModelSpec::Cc(c) => {
                if c.candidates.is_empty() || c.candidates.contains(&0) {
                    return Err(Error::config("cluster-count candidates must be positive and nonempty"));
                }
                if !(c.zeta > 0.0) || !(c.eta >= 0.0) {
                    return Err(Error::config("need eta >= 0 and zeta > 0"));
                }
            }
            ModelSpec::Knn(c) if c.k == 0 => return Err(Error::config("knn needs k >= 1")),
            _ => {}
        }
        self.features.validate()?;
        self.plant.validate()
    }
}

/// The seven models compared on the benchmark, in report order.
pub fn benchmark_suite() -> Vec<ExperimentConfig> {
    ["sae", "cc-ws", "ffae", "cc", "knn", "pca", "mae"]
        .iter()
        .map(|n| ExperimentConfig::new(ModelSpec::from_name(n).expect("known model")))
        .collect()
}

/// Raw (unstandardized) windows of both streams plus per-window side data.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub features: FeatureConfig,
    /// Windows of the twin training span.
    pub twin: FeatureDataset,
    /// Windows of the measured stream.
    pub real: FeatureDataset,
    /// MAE of each measured window against the aligned twin window.
    pub mae_scores: Vec<f64>,
    /// Measured windows that overlap a flat-line event.
    pub flatline_windows: Vec<bool>,
}

impl PreparedData {
    pub fn generate(plant: &PlantConfig, features: &FeatureConfig) -> Result<Self> {
        let twin = generate_twin(plant)?;
        let real = generate_real(plant, &twin)?;
        let training = twin_training_frame(plant, &twin)?;
        Self::from_frames(&twin, &training, &real, features, &plant.anomaly_spec)
    }

    /// `twin` must be time-aligned with `real`; `training` is the part of
    /// the twin used as normal training data.
    pub fn from_frames(
        twin: &TimeSeriesFrame,
        training: &TimeSeriesFrame,
        real: &TimeSeriesFrame,
        features: &FeatureConfig,
        events: &[AnomalyEvent],
    ) -> Result<Self> {
        features.validate()?;
        let twin_windows = extract_windows(training, features)?;
        let real_windows = extract_windows(real, features)?;
        let mae_scores = mae_window_scores(twin, real, features)?;
        let len = features.window_length_minutes;
        let flatline_windows = real_windows
            .window_start_indices
            .iter()
            .map(|&s| {
                events
                    .iter()
                    .any(|e| e.kind == AnomalyKind::FlatLine && e.overlaps(s, s + len))
            })
            .collect();
        Ok(Self {
            features: features.clone(),
            twin: twin_windows,
            real: real_windows,
            mae_scores,
            flatline_windows,
        })
    }

    pub fn labeled_pool_size(&self) -> usize {
        self.real.n_anomalous()
    }
}

/// Row indices of one run's partitions, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub fold: usize,
    /// Normal training rows: twin rows, or measured rows for `RealOnly`.
    pub train: Vec<usize>,
    /// Early-stopping rows from the same source as `train`.
    pub early_stopping: Vec<usize>,
    /// Measured rows for model selection.
    pub real_validation: Vec<usize>,
    /// Measured rows for reporting.
    pub real_test: Vec<usize>,
    /// Labeled anomalous measured rows, in draw order.
    pub labeled: Vec<usize>,
}

/// Contiguous block `fold` of `0..n` split into `folds` parts.
pub fn fold_block(n: usize, folds: usize, fold: usize) -> std::ops::Range<usize> {
    (fold * n / folds)..((fold + 1) * n / folds)
}

/// Per-seed permutation of all anomalous measured rows; the first `k`
/// entries are the labeled set for `k` labels.
pub fn labeled_order(real_labels: &[bool], seed: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..real_labels.len()).filter(|&i| real_labels[i]).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ LABEL_SALT));
    pool
}

/// Shuffled split of the measured rows into (validation, test).
pub fn real_split(n_real: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_real).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = ((n_real as f64) * validation_fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut test = idx[n_val..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    (val, test)
}

pub fn make_splits(data: &PreparedData, config: &ExperimentConfig, seed_index: usize) -> Result<Splits> {
    let seed = config.seeds[seed_index];
    let fold = seed_index % config.folds;
    let pool = labeled_order(&data.real.labels, seed);
    if config.n_labeled_anomalies > pool.len() {
        return Err(Error::NotEnoughSamples {
            what: "labeled anomalies",
            requested: config.n_labeled_anomalies,
            available: pool.len(),
        });
    }
    let labeled = pool[..config.n_labeled_anomalies].to_vec();
    let mut is_labeled = vec![false; data.real.n_windows()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let (val, test) = real_split(data.real.n_windows(), config.validation_fraction, seed);
    let real_validation: Vec<usize> = val.into_iter().filter(|&i| !is_labeled[i]).collect();
    let real_test: Vec<usize> = test.into_iter().filter(|&i| !is_labeled[i]).collect();
    let (train, early_stopping) = match config.training_source {
        TrainingSource::Twin => {
            let n = data.twin.n_windows();
            let block = fold_block(n, config.folds, fold);
            ((0..n).filter(|i| !block.contains(i)).collect(), block.collect())
        }
        TrainingSource::RealOnly => {
            let block = fold_block(real_validation.len(), config.folds, fold);
            let train: Vec<usize> = real_validation
                .iter()
                .enumerate()
                .filter(|(k, _)| !block.contains(k))
                .map(|(_, &i)| i)
                .collect();
            (train, real_validation[block].to_vec())
        }
    };
    if train.is_empty() || early_stopping.is_empty() || real_test.is_empty() {
        return Err(Error::EmptyInput("a split partition is empty"));
    }
    Ok(Splits {
        fold,
        train,
        early_stopping,
        real_validation,
        real_test,
        labeled,
    })
}

/// A fitted detector of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Autoencoder(SiameseModel),
    Cluster(ClusterModel),
    Knn(KnnModel),
    Pca(PcaModel),
    /// Scores come from the aligned twin stream, nothing is fitted.
    Mae,
}

impl TrainedModel {
    /// Scores standardized feature rows.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Autoencoder(m) => m.scores(x),
            TrainedModel::Cluster(m) => m.scores(x),
            TrainedModel::Knn(m) => m.scores(x),
            TrainedModel::Pca(m) => m.scores(x),
            TrainedModel::Mae => Err(Error::config("mae scores need the aligned twin frame")),
        }
    }

    /// Every fitted number, flattened; used to detect whether training saw
    /// data it should not have.
    pub fn fingerprint(&self) -> Vec<f64> {
        match self {
            TrainedModel::Autoencoder(m) => {
                let mut v = m.nets.flatten_params();
                v.extend(m.references.iter());
                v
            }
            TrainedModel::Cluster(m) => m.centers.iter().chain(m.anomalies.iter()).copied().collect(),
            TrainedModel::Knn(m) => m.train.iter().copied().collect(),
            TrainedModel::Pca(m) => m.mean.iter().chain(m.components.iter()).copied().collect(),
            TrainedModel::Mae => Vec::new(),
        }
    }
}

/// Result of fitting one run, before evaluation.
#[derive(Debug, Clone)]
pub struct FittedRun {
    pub splits: Splits,
    pub standardization: Standardization,
    pub model: TrainedModel,
    pub cluster_selection: Option<ClusterSelection>,
    pub epochs: Option<usize>,
    pub fit_seconds: f64,
}

fn rows(data: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    data.select(ndarray::Axis(0), idx)
}

/// Fits one (config, seed) run. Only training rows, early-stopping rows,
/// the measured validation rows and the labeled anomalies are read.
pub fn fit_run(data: &PreparedData, config: &ExperimentConfig, seed_index: usize) -> Result<FittedRun> {
    let splits = make_splits(data, config, seed_index)?;
    let seed = config.seeds[seed_index];
    let source = match config.training_source {
        TrainingSource::Twin => &data.twin,
        TrainingSource::RealOnly => &data.real,
    };
    let standardization = fit_standardizer(&source.select(&splits.train))?;
    let z_source = apply_standardizer(source, &standardization)?.matrix;
    let z_real = apply_standardizer(&data.real, &standardization)?.matrix;
    let train = rows(&z_source, &splits.train);
    let early = rows(&z_source, &splits.early_stopping);
    let anomalies = rows(&z_real, &splits.labeled);
    let validation = rows(&z_real, &splits.real_validation);
    let validation_labels: Vec<bool> = splits.real_validation.iter().map(|&i| data.real.labels[i]).collect();

    let start = Instant::now();
    let mut cluster_selection = None;
    let mut epochs = None;
    let model = match &config.model {
        ModelSpec::Sae(c) | ModelSpec::Ffae(c) => {
            let mut c = c.clone();
            c.train.seed = seed;
            let out = train_autoencoder(train.view(), early.view(), anomalies.view(), &c)?;
            epochs = Some(out.history.len());
            TrainedModel::Autoencoder(out.model)
        }
        ModelSpec::Cc(c) => {
            let (model, selection) = choose_n_clusters(
                train.view(),
                validation.view(),
                &validation_labels,
                &c.candidates,
                c.eta,
                c.zeta,
                anomalies.view(),
                seed,
            )?;
            cluster_selection = Some(selection);
            TrainedModel::Cluster(model)
        }
        ModelSpec::Knn(c) => TrainedModel::Knn(KnnModel::new(train, c.k)?),
        ModelSpec::Pca(c) => TrainedModel::Pca(fit_pca(train.view(), c.rank)?),
        ModelSpec::Mae => TrainedModel::Mae,
    };
    let fit_seconds = start.elapsed().as_secs_f64();
    Ok(FittedRun {
        splits,
        standardization,
        model,
        cluster_selection,
        epochs,
        fit_seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalPartition {
    Validation,
    Test,
}

/// Everything produced by one evaluated run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub scored: ScoredSet,
    /// Measured row of each entry of `scored`.
    pub rows: Vec<usize>,
    /// Recall on windows overlapping a flat-line event, if any were scored.
    pub flatline_recall: Option<f64>,
    pub cluster_selection: Option<ClusterSelection>,
    pub epochs: Option<usize>,
    pub fit_seconds: f64,
}

impl RunOutcome {
    pub fn pr_curve(&self) -> Vec<PrPoint> {
        pr_curve(&self.scored)
    }

    pub fn roc_curve(&self) -> Vec<RocPoint> {
        roc_curve(&self.scored)
    }
}

/// Scores measured rows with a fitted run.
pub fn score_rows(data: &PreparedData, fitted: &FittedRun, rows_idx: &[usize]) -> Result<Vec<f64>> {
    match &fitted.model {
        TrainedModel::Mae => Ok(rows_idx.iter().map(|&i| data.mae_scores[i]).collect()),
        model => {
            let mut x = rows(&data.real.matrix, rows_idx);
            for mut r in x.rows_mut() {
                fitted
                    .standardization
                    .transform_row(r.as_slice_mut().expect("standard layout"));
            }
            model.scores(x.view())
        }
    }
}

/// Fits and evaluates one run on the chosen measured partition.
pub fn run_single(data: &PreparedData, config: &ExperimentConfig, seed_index: usize, partition: EvalPartition) -> Result<RunOutcome> {
    let fitted = fit_run(data, config, seed_index)?;
    let eval_rows = match partition {
        EvalPartition::Validation => fitted.splits.real_validation.clone(),
        EvalPartition::Test => fitted.splits.real_test.clone(),
    };
    let scores = score_rows(data, &fitted, &eval_rows)?;
    let labels: Vec<bool> = eval_rows.iter().map(|&i| data.real.labels[i]).collect();
    let scored = ScoredSet::new(scores, labels)?;
    let meta = RunMeta {
        model: config.name(),
        seed: config.seeds[seed_index],
        fold: fitted.splits.fold,
    };
    let mut report = evaluate(&scored, config.threshold_fraction, meta)?;
    if config.record_wall_clock {
        report.train_seconds = fitted.fit_seconds;
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (k, &i) in eval_rows.iter().enumerate() {
        if data.flatline_windows[i] {
            total += 1;
            if scored.scores()[k] > report.threshold {
                hit += 1;
            }
        }
    }
    Ok(RunOutcome {
        report,
        scored,
        rows: eval_rows,
        flatline_recall: (total > 0).then(|| hit as f64 / total as f64),
        cluster_selection: fitted.cluster_selection,
        epochs: fitted.epochs,
        fit_seconds: fitted.fit_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub model: String,
    pub seed: u64,
    pub error: String,
}

/// Outcomes of a set of experiments, in (config, seed) order.
#[derive(Debug, Clone, Default)]
pub struct SuiteResult {
    pub outcomes: Vec<RunOutcome>,
    pub failures: Vec<RunFailure>,
}

impl SuiteResult {
    pub fn completed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn reports(&self) -> Vec<&EvalReport> {
        self.outcomes.iter().map(|o| &o.report).collect()
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        aggregate(&self.reports())
    }
}

/// Runs every seed of every config, concurrently, on one prepared dataset.
/// Results keep the input order regardless of scheduling.
pub fn run_experiments(data: &PreparedData, configs: &[ExperimentConfig], partition: EvalPartition) -> SuiteResult {
    let jobs: Vec<(usize, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.seeds.len()).map(move |s| (c, s)))
        .collect();
    let results: Vec<(usize, usize, Result<RunOutcome>)> = jobs
        .into_par_iter()
        .map(|(c, s)| {
            let cfg = &configs[c];
            let r = cfg.validate().and_then(|_| run_single(data, cfg, s, partition));
            (c, s, r)
        })
        .collect();
    let mut suite = SuiteResult::default();
    for (c, s, r) in results {
        match r {
            Ok(o) => suite.outcomes.push(o),
            Err(e) => {
                let failure = RunFailure {
                    model: configs[c].name(),
                    seed: configs[c].seeds[s],
                    error: e.to_string(),
                };
                log::error!("run {} seed {} failed: {}", failure.model, failure.seed, failure.error);
                suite.failures.push(failure);
            }
        }
    }
    suite
}

/// Groups configs by their data settings so each dataset is generated once.
pub fn run_suite(configs: &[ExperimentConfig], partition: EvalPartition) -> Result<SuiteResult> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in configs.iter().enumerate() {
        let key = serde_json::to_string(&(&c.plant, &c.features))?;
        groups.entry(key).or_default().push(i);
    }
    let mut per_config: Vec<Option<SuiteResult>> = vec![None; configs.len()];
    for members in groups.values() {
        let first = &configs[members[0]];
        let data = PreparedData::generate(&first.plant, &first.features)?;
        for &i in members {
            per_config[i] = Some(run_experiments(&data, std::slice::from_ref(&configs[i]), partition));
        }
    }
    let mut suite = SuiteResult::default();
    for r in per_config.into_iter().flatten() {
        suite.outcomes.extend(r.outcomes);
        suite.failures.extend(r.failures);
    }
    Ok(suite)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub n_runs: usize,
    pub ap: MeanSd,
    pub auc_roc: MeanSd,
    pub f2: MeanSd,
    pub train_seconds: MeanSd,
}

/// Mean and sample sd per model, models in order of first appearance.
pub fn aggregate(reports: &[&EvalReport]) -> Vec<Aggregate> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        if !groups.contains_key(&r.meta.model) {
            order.push(r.meta.model.clone());
        }
        groups.entry(r.meta.model.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|model| {
            let g = &groups[&model];
            let pick = |f: fn(&EvalReport) -> f64| MeanSd::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            Aggregate {
                n_runs: g.len(),
                ap: pick(|r| r.ap),
                auc_roc: pick(|r| r.auc_roc),
                f2: pick(|r| r.f2),
                train_seconds: pick(|r| r.train_seconds),
                model,
            }
        })
        .collect()
}

/// One model at one label count.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub model: String,
    pub n_labeled: usize,
    pub suite: SuiteResult,
}

impl SweepPoint {
    pub fn aggregate(&self) -> Option<Aggregate> {
        self.suite.aggregates().into_iter().next()
    }
}

pub const SWEEP_COUNTS: [usize; 6] = [5, 10, 50, 100, 500, 1000];

/// Runs each config at each labeled-anomaly count. Counts larger than the
/// anomaly pool are dropped with a warning.
pub fn anomaly_sweep(data: &PreparedData, configs: &[ExperimentConfig], counts: &[usize]) -> Vec<SweepPoint> {
    let pool = data.labeled_pool_size();
    let usable: Vec<usize> = counts
        .iter()
        .copied()
        .filter(|&c| {
            let ok = c <= pool;
            if !ok {
                log::warn!("dropping label count {c}: only {pool} anomalous windows");
            }
            ok
        })
        .collect();
    let mut out = Vec::new();
    for cfg in configs {
        for &n in &usable {
            let mut c = cfg.clone();
            c.n_labeled_anomalies = n;
            out.push(SweepPoint {
                model: cfg.name(),
                n_labeled: n,
                suite: run_experiments(data, &[c], EvalPartition::Test),
            });
        }
    }
    out
}

/// Twin-trained versus measured-data-trained comparison of one model.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub model: String,
    pub twin: Aggregate,
    pub real: Aggregate,
}

impl AblationRow {
    /// `100 * (real - twin) / twin` of the mean.
    pub fn delta_pct(twin: f64, real: f64) -> f64 {
        100.0 * (real - twin) / twin
    }

    pub fn delta_ap_pct(&self) -> f64 {
        Self::delta_pct(self.twin.ap.mean, self.real.ap.mean)
    }

    pub fn delta_auc_pct(&self) -> f64 {
        Self::delta_pct(self.twin.auc_roc.mean, self.real.auc_roc.mean)
    }

    pub fn delta_f2_pct(&self) -> f64 {
        Self::delta_pct(self.twin.f2.mean, self.real.f2.mean)
    }
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub twin: SuiteResult,
    pub real: SuiteResult,
}

/// Runs each config with twin training data and again with the measured
/// validation part as (unlabeled, contaminated) training data. MAE has no
/// training step and is skipped.
pub fn ablation_training_source(data: &PreparedData, configs: &[ExperimentConfig]) -> Ablation {
    let kept: Vec<ExperimentConfig> = configs
        .iter()
        .filter(|c| {
            let trainable = c.model != ModelSpec::Mae;
            if !trainable {
                log::warn!("ablation skips {}: nothing is trained", c.name());
            }
            trainable
        })
        .cloned()
        .collect();
    let with_source = |s: TrainingSource| -> Vec<ExperimentConfig> {
        kept.iter()
            .cloned()
            .map(|mut c| {
                c.training_source = s;
                c
            })
            .collect()
    };
    let twin = run_experiments(data, &with_source(TrainingSource::Twin), EvalPartition::Test);
    let real = run_experiments(data, &with_source(TrainingSource::RealOnly), EvalPartition::Test);
    let real_aggs = real.aggregates();
    let rows = twin
        .aggregates()
        .into_iter()
        .filter_map(|t| {
            let r = real_aggs.iter().find(|a| a.model == t.model)?.clone();
            Some(AblationRow {
                model: t.model.clone(),
                twin: t,
                real: r,
            })
        })
        .collect();
    Ablation { rows, twin, real }
}

/// Writes `value` as pretty JSON.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Standardizer plus fitted model, as saved by the command line tool.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_name: String,
    pub standardization: Standardization,
    pub feature_names: Vec<String>,
    pub model: TrainedModel,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    model: String,
    kind: String,
    standardization: Standardization,
    feature_names: Vec<String>,
}

const CHECKPOINT_FORMAT: &str = "twinguard-checkpoint-1";

impl Checkpoint {
    /// Fits `spec` on raw feature rows. The last tenth of `normals` is held
    /// out for early stopping. Without a labeled `validation` set the
    /// cluster count falls back to [`DEFAULT_N_CLUSTERS`] when it is a
    /// candidate, else the first candidate.
    pub fn train(
        spec: &ModelSpec,
        normals: &FeatureDataset,
        anomalies: &FeatureDataset,
        validation: Option<&FeatureDataset>,
        seed: u64,
    ) -> Result<Checkpoint> {
        let n = normals.n_windows();
        if n < 2 {
            return Err(Error::NotEnoughSamples {
                what: "normal training windows",
                requested: 2,
                available: n,
            });
        }
        if anomalies.n_windows() > 0 && anomalies.n_features() != normals.n_features() {
            return Err(Error::DimensionMismatch {
                expected: normals.n_features(),
                actual: anomalies.n_features(),
            });
        }
        let standardization = fit_standardizer(normals)?;
        let z = apply_standardizer(normals, &standardization)?.matrix;
        let za = if anomalies.n_windows() > 0 {
            apply_standardizer(anomalies, &standardization)?.matrix
        } else {
            Array2::zeros((0, normals.n_features()))
        };
        let model = match spec {
            ModelSpec::Sae(c) | ModelSpec::Ffae(c) => {
                let cut = n - (n / 10).max(1);
                let mut c = c.clone();
                c.train.seed = seed;
                let out = train_autoencoder(z.slice(s![..cut, ..]), z.slice(s![cut.., ..]), za.view(), &c)?;
                TrainedModel::Autoencoder(out.model)
            }
            ModelSpec::Cc(c) => match validation {
                Some(v) => {
                    let zv = apply_standardizer(v, &standardization)?.matrix;
                    let (m, _) = choose_n_clusters(z.view(), zv.view(), &v.labels, &c.candidates, c.eta, c.zeta, za.view(), seed)?;
                    TrainedModel::Cluster(m)
                }
                None => {
                    let k = if c.candidates.contains(&DEFAULT_N_CLUSTERS) {
                        DEFAULT_N_CLUSTERS
                    } else {
                        *c.candidates.first().ok_or(Error::config("no cluster-count candidates"))?
                    };
                    let fit = fit_kmeans(z.view(), k, seed)?;
                    TrainedModel::Cluster(ClusterModel::new(fit.centers, c.eta, c.zeta, za)?)
                }
            },
            ModelSpec::Knn(c) => TrainedModel::Knn(KnnModel::new(z, c.k)?),
            ModelSpec::Pca(c) => TrainedModel::Pca(fit_pca(z.view(), c.rank)?),
            ModelSpec::Mae => return Err(Error::config("mae has no trainable state")),
        };
        Ok(Checkpoint {
            model_name: spec.default_name().to_string(),
            standardization,
            feature_names: normals.feature_names.clone(),
            model,
        })
    }

    /// Scores raw feature rows.
    pub fn score(&self, data: &FeatureDataset) -> Result<Vec<f64>> {
        if data.n_features() != self.standardization.len() {
            return Err(Error::DimensionMismatch {
                expected: self.standardization.len(),
                actual: data.n_features(),
            });
        }
        let z = apply_standardizer(data, &self.standardization)?;
        self.model.scores(z.matrix.view())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let kind = match &self.model {
            TrainedModel::Autoencoder(m) => {
                m.save(dir)?;
                "autoencoder"
            }
            TrainedModel::Cluster(m) => {
                write_json(&dir.join("model.json"), m)?;
                "cluster"
            }
            TrainedModel::Knn(m) => {
                write_json(&dir.join("model.json"), m)?;
                "knn"
            }
            TrainedModel::Pca(m) => {
                write_json(&dir.join("model.json"), m)?;
                "pca"
            }
            TrainedModel::Mae => return Err(Error::config("mae has no trainable state")),
        };
        write_json(
            &dir.join("checkpoint.json"),
            &CheckpointManifest {
                format: CHECKPOINT_FORMAT.into(),
                model: self.model_name.clone(),
                kind: kind.into(),
                standardization: self.standardization.clone(),
                feature_names: self.feature_names.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let path = dir.join("checkpoint.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: CheckpointManifest = serde_json::from_str(&text)?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("unknown format {:?}", m.format),
            });
        }
        let read_model = || -> Result<String> {
            let p = dir.join("model.json");
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let model = match m.kind.as_str() {
            "autoencoder" => TrainedModel::Autoencoder(SiameseModel::load(dir)?),
            "cluster" => TrainedModel::Cluster(serde_json::from_str(&read_model()?)?),
            "knn" => TrainedModel::Knn(serde_json::from_str(&read_model()?)?),
            "pca" => TrainedModel::Pca(serde_json::from_str(&read_model()?)?),
            other => {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("unknown model kind {other:?}"),
                })
            }
        };
        Ok(Checkpoint {
            model_name: m.model,
            standardization: m.standardization,
            feature_names: m.feature_names,
            model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_blocks_tile_the_range() {
        let n = 103;
        let mut seen = vec![0; n];
        for f in 0..10 {
            for i in fold_block(n, 10, f) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(fold_block(10, 2, 1), 5..10);
    }

    #[test]
    fn real_split_sizes_and_determinism() {
        let (v, t) = real_split(1000, 0.2, 7);
        assert_eq!(v.len(), 200);
        assert_eq!(t.len(), 800);
        let mut all: Vec<usize> = v.iter().chain(&t).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(real_split(1000, 0.2, 7), (v.clone(), t));
        assert_ne!(real_split(1000, 0.2, 8).0, v);
    }

    #[test]
    fn labeled_sets_are_nested_anomalies() {
        let labels: Vec<bool> = (0..500).map(|i| i % 3 == 0).collect();
        let order = labeled_order(&labels, 3);
        assert_eq!(order.len(), labels.iter().filter(|&&l| l).count());
        assert!(order.iter().all(|&i| labels[i]));
        assert_eq!(labeled_order(&labels, 3), order);
    }

    #[test]
    fn mean_sd_uses_sample_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSd::of(&[0.7]).sd, 0.0);
    }

    #[test]
    fn model_names_round_trip() {
        for name in ["sae", "cc-ws", "ffae", "cc", "knn", "pca", "mae"] {
            assert_eq!(ModelSpec::from_name(name).unwrap().default_name(), name);
        }
        assert!(ModelSpec::from_name("svm").is_none());
    }

    #[test]
    fn config_defaults_from_minimal_json() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"model": "mae"}"#).unwrap();
        assert_eq!(c.folds, 10);
        assert_eq!(c.seeds.len(), 10);
        assert_eq!(c.n_labeled_anomalies, 10);
        assert_eq!(c.validation_fraction, 0.2);
        assert_eq!(c.plant, benchmark_config());
        c.validate().unwrap();
        let c: ExperimentConfig = serde_json::from_str(r#"{"model": {"knn": {"k": 3}}, "folds": 1}"#).unwrap();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(ModelSpec::Mae);
        c.training_source = TrainingSource::RealOnly;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_delta() {
        assert_eq!(AblationRow::delta_pct(0.5, 0.25), -50.0);
    }
}
