//! `twinguard`: generate plant data, build features, train and score single
//! models, and run the benchmark experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use twinguard::features::{extract_windows, FeatureConfig, FeatureDataset};
use twinguard::harness::{
    ablation_training_source, anomaly_sweep, benchmark_suite, line_search, run_suite, validation_objective,
    write_ablation, write_run_dir, write_sweep, Checkpoint, DataCache, EvalPartition, ExperimentConfig, ModelSpec,
    PreparedData, SearchSpace, SWEEP_COUNTS,
};
use twinguard::metrics::{evaluate, pr_curve, roc_curve, RunMeta, ScoredSet};
use twinguard::synthgen::{benchmark_config, demo_config, generate_real, generate_twin, PlantConfig, Source, TimeSeriesFrame};

#[derive(Parser)]
#[command(name = "twinguard", version, about = "Anomaly detection trained on digital-twin data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the twin and the measured plant.
    Generate {
        /// Plant config JSON; defaults to the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Benchmark)]
        preset: Preset,
        #[arg(long)]
        out_twin: PathBuf,
        #[arg(long)]
        out_real: PathBuf,
        /// Also write only the twin training span here.
        #[arg(long)]
        out_twin_train: Option<PathBuf>,
    },
    /// Turn a frame CSV into window features (plus a JSON sidecar).
    Featurize {
        /// Feature config JSON; defaults to the standard windows.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only windows with this label.
        #[arg(long, value_enum, default_value_t = Keep::All)]
        keep: Keep,
    },
    /// Fit one model on feature CSVs and save a checkpoint directory.
    Train {
        #[arg(long)]
        model: ModelName,
        #[arg(long)]
        normals: PathBuf,
        /// Labeled anomalous windows; required for sae and cc-ws.
        #[arg(long)]
        anomalies: Option<PathBuf>,
        /// Labeled windows used to choose the cluster count.
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Model hyperparameters as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a feature CSV with a checkpoint.
    Score {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run experiments and write a run directory, or evaluate a score CSV.
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Score CSV from `score`; evaluates it instead of running models.
        #[arg(long, conflicts_with = "config")]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0.25)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Line search over config fields, scored by validation AP.
    Search {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Search space JSON: {"dimensions": [{"pointer": ..., "values": [...]}]}.
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary the number of labeled anomalies.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare twin-trained with measured-data-trained models.
    Ablation {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON, one object or an array; defaults to the
    /// benchmark suite.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep only these models (by report name).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Use seeds 0..n.
    #[arg(long)]
    seeds: Option<u64>,
    /// Replace the plant of every config.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Benchmark,
    Demo,
}

impl Preset {
    fn plant(self) -> PlantConfig {
        match self {
            Preset::Benchmark => benchmark_config(),
            Preset::Demo => demo_config(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Keep {
    All,
    Normal,
    Anomalous,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    Sae,
    Ffae,
    Cc,
    #[value(name = "cc-ws")]
    CcWs,
    Knn,
    Pca,
    Mae,
}

impl ModelName {
    fn as_str(self) -> &'static str {
        match self {
            ModelName::Sae => "sae",
            ModelName::Ffae => "ffae",
            ModelName::Cc => "cc",
            ModelName::CcWs => "cc-ws",
            ModelName::Knn => "knn",
            ModelName::Pca => "pca",
            ModelName::Mae => "mae",
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_experiments(args: &ExperimentArgs) -> Result<Vec<ExperimentConfig>> {
    let mut configs = match &args.config {
        Some(path) => {
            let value: serde_json::Value = read_json(path)?;
            if value.is_array() {
                serde_json::from_value(value)?
            } else {
                vec![serde_json::from_value(value)?]
            }
        }
        None => benchmark_suite(),
    };
    if let Some(keep) = &args.models {
        configs.retain(|c| keep.contains(&c.name()));
        if configs.is_empty() {
            bail!("no config matches --models {}", keep.join(","));
        }
    }
    for c in &mut configs {
        if let Some(n) = args.seeds {
            c.seeds = (0..n).collect();
        }
        if let Some(p) = args.preset {
            c.plant = p.plant();
        }
    }
    for c in &configs {
        c.validate().with_context(|| format!("config {}", c.name()))?;
    }
    Ok(configs)
}

/// All configs of one command must share plant and feature settings.
fn prepare(configs: &[ExperimentConfig]) -> Result<PreparedData> {
    let first = &configs[0];
    if configs.iter().any(|c| c.plant != first.plant || c.features != first.features) {
        bail!("this command needs every config to use the same plant and features");
    }
    Ok(PreparedData::generate(&first.plant, &first.features)?)
}

fn model_spec(name: ModelName, config: Option<&Path>, eta: Option<f64>, zeta: Option<f64>) -> Result<ModelSpec> {
    let mut spec = ModelSpec::from_name(name.as_str()).expect("every cli name is a model");
    if let Some(path) = config {
        spec = match spec {
            ModelSpec::Sae(_) => ModelSpec::Sae(read_json(path)?),
            ModelSpec::Ffae(_) => ModelSpec::Ffae(read_json(path)?),
            ModelSpec::Cc(_) => ModelSpec::Cc(read_json(path)?),
            ModelSpec::Knn(_) => ModelSpec::Knn(read_json(path)?),
            ModelSpec::Pca(_) => ModelSpec::Pca(read_json(path)?),
            ModelSpec::Mae => bail!("mae has no hyperparameters"),
        };
    }
    if let ModelSpec::Cc(c) = &mut spec {
        if let Some(e) = eta {
            c.eta = e;
        }
        if let Some(z) = zeta {
            c.zeta = z;
        }
    } else if eta.is_some() || zeta.is_some() {
        bail!("--eta and --zeta only apply to cc models");
    }
    Ok(spec)
}

fn finish(failures: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failures} run(s) failed");
        ExitCode::FAILURE
    }
}

fn evaluate_scores(path: &Path, fraction: f64, out: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for rec in r.deserialize::<(usize, f64, u8)>() {
        let (_, s, l) = rec?;
        scores.push(s);
        labels.push(l == 1);
    }
    let set = ScoredSet::new(scores, labels)?;
    let meta = RunMeta {
        model: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        seed: 0,
        fold: 0,
    };
    let report = evaluate(&set, fraction, meta)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    let mut w = csv::Writer::from_path(out.join("pr.csv"))?;
    w.write_record(["threshold", "precision", "recall"])?;
    for p in pr_curve(&set) {
        w.serialize((p.threshold, p.precision, p.recall))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("roc.csv"))?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in roc_curve(&set) {
        w.serialize((p.threshold, p.fpr, p.tpr))?;
    }
    w.flush()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            config,
            preset,
            out_twin,
            out_real,
            out_twin_train,
        } => {
            let plant = match config {
                Some(p) => read_json(&p)?,
                None => preset.plant(),
            };
            plant.validate()?;
            let twin = generate_twin(&plant)?;
            let real = generate_real(&plant, &twin)?;
            twin.write_csv(&out_twin)?;
            real.write_csv(&out_real)?;
            if let Some(p) = out_twin_train {
                twinguard::synthgen::twin_training_frame(&plant, &twin)?.write_csv(&p)?;
            }
            log::info!("{} minutes, {:.1}% anomalous", real.len(), 100.0 * real.anomalous_fraction());
        }
        Command::Featurize {
            config,
            input,
            out,
            keep,
        } => {
            let fc: FeatureConfig = match config {
                Some(p) => read_json(&p)?,
                None => FeatureConfig::default(),
            };
            let frame = TimeSeriesFrame::read_csv(&input, Source::Real)?;
            let mut ds = extract_windows(&frame, &fc)?;
            if keep != Keep::All {
                let rows: Vec<usize> = (0..ds.n_windows()).filter(|&i| ds.labels[i] == (keep == Keep::Anomalous)).collect();
                ds = ds.select(&rows);
            }
            ds.write(&out, &fc)?;
            log::info!("{} windows, {} anomalous", ds.n_windows(), ds.n_anomalous());
        }
        Command::Train {
            model,
            normals,
            anomalies,
            validation,
            config,
            eta,
            zeta,
            seed,
            out,
        } => {
            let spec = model_spec(model, config.as_deref(), eta, zeta)?;
            let (normals, _) = FeatureDataset::read(&normals)?;
            let anomalies = match anomalies {
                Some(p) => FeatureDataset::read(&p)?.0,
                None if spec.uses_labels() => bail!("{} needs --anomalies", spec.default_name()),
                None => normals.select(&[]),
            };
            let validation = validation.map(|p| FeatureDataset::read(&p)).transpose()?.map(|v| v.0);
            let cp = Checkpoint::train(&spec, &normals, &anomalies, validation.as_ref(), seed)?;
            cp.save(&out)?;
        }
        Command::Score { model, input, out } => {
            let cp = Checkpoint::load(&model)?;
            let (data, _) = FeatureDataset::read(&input)?;
            if data.feature_names != cp.feature_names {
                bail!("feature columns of {} differ from the checkpoint's", input.display());
            }
            let scores = cp.score(&data)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["window_start", "score", "label"])?;
            for ((start, s), l) in data.window_start_indices.iter().zip(&scores).zip(&data.labels) {
                w.serialize((start, s, u8::from(*l)))?;
            }
            w.flush()?;
        }
        Command::Evaluate {
            exp,
            scores,
            fraction,
            out,
        } => {
            if let Some(path) = scores {
                evaluate_scores(&path, fraction, &out)?;
                return Ok(ExitCode::SUCCESS);
            }
            let configs = load_experiments(&exp)?;
            let suite = run_suite(&configs, EvalPartition::Test)?;
            write_run_dir(&out, &configs, &suite)?;
            for a in suite.aggregates() {
                println!("{:8} AP {:.4} ± {:.4}  AUC {:.4}  F2 {:.4}", a.model, a.ap.mean, a.ap.sd, a.auc_roc.mean, a.f2.mean);
            }
            return Ok(finish(suite.failures.len()));
        }
        Command::Search { exp, space, passes, out } => {
            let configs = load_experiments(&exp)?;
            let [base] = configs.as_slice() else {
                bail!("search needs exactly one base config (use --models to pick one)");
            };
            let space: SearchSpace = read_json(&space)?;
            let mut cache = DataCache::default();
            let (best, trace) = line_search(&space, base, passes, |c| validation_objective(&mut cache, c))?;
            fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("search_trace.csv"))?;
            w.write_record(["pass", "pointer", "value", "objective", "error", "selected"])?;
            for t in &trace {
                w.write_record([
                    t.pass.to_string(),
                    t.pointer.clone(),
                    t.value.clone(),
                    t.objective.map(|v| v.to_string()).unwrap_or_default(),
                    t.error.clone().unwrap_or_default(),
                    t.selected.to_string(),
                ])?;
            }
            w.flush()?;
            write_json(&out.join("best_config.json"), &best)?;
            write_json(&out.join("manifest.json"), &serde_json::json!({
                "tool_version": env!("CARGO_PKG_VERSION"),
                "base": base,
                "space": space,
                "passes": passes,
            }))?;
            let failed = trace.iter().filter(|t| t.error.is_some()).count();
            println!("{} candidates evaluated, {failed} failed", trace.len());
            return Ok(finish(failed));
        }
        Command::Sweep { exp, counts, out } => {
            let configs = load_experiments(&exp)?;
            let data = prepare(&configs)?;
            let counts = counts.unwrap_or_else(|| SWEEP_COUNTS.to_vec());
            let points = anomaly_sweep(&data, &configs, &counts);
            write_sweep(&out, &configs, &points)?;
            for p in &points {
                if let Some(a) = p.aggregate() {
                    println!("{:8} n={:5} AP {:.4} ± {:.4}", p.model, p.n_labeled, a.ap.mean, a.ap.sd);
                }
            }
            return Ok(finish(points.iter().map(|p| p.suite.failures.len()).sum()));
        }
        Command::Ablation { exp, out } => {
            let configs = load_experiments(&exp)?;
            let data = prepare(&configs)?;
            let ab = ablation_training_source(&data, &configs);
            write_ablation(&out, &configs, &ab)?;
            for r in &ab.rows {
                println!(
                    "{:8} AP twin {:.4} real {:.4} ({:+.1}%)",
                    r.model,
                    r.twin.ap.mean,
                    r.real.ap.mean,
                    r.delta_ap_pct()
                );
            }
            return Ok(finish(ab.twin.failures.len() + ab.real.failures.len()));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
