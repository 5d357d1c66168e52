//! Run directory layout.
//!
//! ```text
//! manifest.json        configs, counts, failures
//! results.csv          one row per (model, seed)
//! aggregate.csv        mean and sample sd per model
//! confusion.csv        counts at the quantile threshold
//! reports/             full per-run reports as JSON
//! curves/              PR and ROC points per run
//! timings.csv          measured fit time (not reproducible)
//! ```
//!
//! Everything except `timings.csv` depends only on the configs, so two runs
//! of the same experiment produce identical files. Floats are written in
//! shortest round-trip form, which lets aggregates be recomputed exactly
//! from `results.csv`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_json, Ablation, Aggregate, ExperimentConfig, RunFailure, RunOutcome, SuiteResult, SweepPoint};
use crate::error::{Error, Result};
use crate::metrics::spearman;

pub const RESULTS_HEADER: [&str; 12] = [
    "model", "seed", "fold", "ap", "auc_roc", "f2", "tp", "fp", "tn", "fn", "threshold", "train_seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDirManifest {
    pub tool_version: String,
    pub configs: Vec<ExperimentConfig>,
    pub completed_runs: usize,
    pub failures: Vec<RunFailure>,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn write_results(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RESULTS_HEADER)?;
    for o in outcomes {
        let r = &o.report;
        let c = &r.confusion;
        w.write_record([
            r.meta.model.clone(),
            r.meta.seed.to_string(),
            r.meta.fold.to_string(),
            f(r.ap),
            f(r.auc_roc),
            f(r.f2),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            f(r.threshold),
            f(r.train_seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_aggregates(path: &Path, aggs: &[Aggregate]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "model", "n_runs", "ap_mean", "ap_sd", "auc_roc_mean", "auc_roc_sd", "f2_mean", "f2_sd", "train_seconds_mean",
        "train_seconds_sd",
    ])?;
    for a in aggs {
        w.write_record([
            a.model.clone(),
            a.n_runs.to_string(),
            f(a.ap.mean),
            f(a.ap.sd),
            f(a.auc_roc.mean),
            f(a.auc_roc.sd),
            f(a.f2.mean),
            f(a.f2.sd),
            f(a.train_seconds.mean),
            f(a.train_seconds.sd),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_confusion(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "model", "seed", "n", "tp", "fp", "tn", "fn", "flagged", "flagged_fraction", "precision", "recall", "threshold",
        "flatline_recall",
    ])?;
    for o in outcomes {
        let r = &o.report;
        let c = &r.confusion;
        w.write_record([
            r.meta.model.clone(),
            r.meta.seed.to_string(),
            r.n.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            (c.tp + c.fp).to_string(),
            f(r.flagged_fraction),
            f(r.precision),
            f(r.recall),
            f(r.threshold),
            o.flatline_recall.map(f).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_curves(dir: &Path, o: &RunOutcome) -> Result<()> {
    let stem = format!("{}_seed{}", o.report.meta.model, o.report.meta.seed);
    let path = dir.join(format!("{stem}_pr.csv"));
    let mut w = writer(&path)?;
    w.write_record(["threshold", "precision", "recall"])?;
    for p in o.pr_curve() {
        w.write_record([f(p.threshold), f(p.precision), f(p.recall)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join(format!("{stem}_roc.csv"));
    let mut w = writer(&path)?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in o.roc_curve() {
        w.write_record([f(p.threshold), f(p.fpr), f(p.tpr)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn write_timings(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "seed", "fit_seconds", "epochs", "n_clusters"])?;
    for o in outcomes {
        w.write_record([
            o.report.meta.model.clone(),
            o.report.meta.seed.to_string(),
            format!("{:.3}", o.fit_seconds),
            o.epochs.map(|e| e.to_string()).unwrap_or_default(),
            o.cluster_selection.as_ref().map(|s| s.n_clusters.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every artifact of a finished suite into `dir`.
pub fn write_run_dir(dir: &Path, configs: &[ExperimentConfig], suite: &SuiteResult) -> Result<()> {
    let reports = dir.join("reports");
    let curves = dir.join("curves");
    for d in [dir, &reports, &curves] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    write_json(
        &dir.join("manifest.json"),
        &RunDirManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            configs: configs.to_vec(),
            completed_runs: suite.outcomes.len(),
            failures: suite.failures.clone(),
        },
    )?;
    write_results(&dir.join("results.csv"), &suite.outcomes)?;
    write_aggregates(&dir.join("aggregate.csv"), &suite.aggregates())?;
    write_confusion(&dir.join("confusion.csv"), &suite.outcomes)?;
    for o in &suite.outcomes {
        let m = &o.report.meta;
        write_json(&reports.join(format!("{}_seed{}.json", m.model, m.seed)), &o.report)?;
        write_curves(&curves, o)?;
    }
    write_timings(&dir.join("timings.csv"), &suite.outcomes)
}

/// Writes one run directory per label count (`n{count}/`) plus
/// `sweep.csv` with mean AP per (model, count) and `spearman.csv` with the
/// rank correlation of mean AP against count per model.
pub fn write_sweep(dir: &Path, configs: &[ExperimentConfig], points: &[SweepPoint]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sweep.csv");
    let mut w = writer(&path)?;
    w.write_record(["model", "n_labeled", "n_runs", "ap_mean", "ap_sd", "auc_roc_mean", "f2_mean"])?;
    for p in points {
        let sub = dir.join(format!("n{}", p.n_labeled));
        let cfgs: Vec<ExperimentConfig> = configs
            .iter()
            .filter(|c| c.name() == p.model)
            .cloned()
            .map(|mut c| {
                c.n_labeled_anomalies = p.n_labeled;
                c
            })
            .collect();
        let sub = sub.join(&p.model);
        write_run_dir(&sub, &cfgs, &p.suite)?;
        if let Some(a) = p.aggregate() {
            w.write_record([
                p.model.clone(),
                p.n_labeled.to_string(),
                a.n_runs.to_string(),
                f(a.ap.mean),
                f(a.ap.sd),
                f(a.auc_roc.mean),
                f(a.f2.mean),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("spearman.csv");
    let mut w = writer(&path)?;
    w.write_record(["model", "spearman_ap_vs_count"])?;
    let mut models: Vec<&str> = Vec::new();
    for p in points {
        if !models.contains(&p.model.as_str()) {
            models.push(&p.model);
        }
    }
    for m in models {
        let (counts, aps): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.model == m)
            .filter_map(|p| Some((p.n_labeled as f64, p.aggregate()?.ap.mean)))
            .unzip();
        let rho = spearman(&counts, &aps).map(f).unwrap_or_default();
        w.write_record([m.to_string(), rho])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `twin/` and `real/` run directories plus `ablation.csv` with the
/// relative change of each mean metric.
pub fn write_ablation(dir: &Path, configs: &[ExperimentConfig], ablation: &Ablation) -> Result<()> {
    let with_source = |s| -> Vec<ExperimentConfig> {
        configs
            .iter()
            .filter(|c| c.model != super::ModelSpec::Mae)
            .cloned()
            .map(|mut c| {
                c.training_source = s;
                c
            })
            .collect()
    };
    write_run_dir(&dir.join("twin"), &with_source(super::TrainingSource::Twin), &ablation.twin)?;
    write_run_dir(&dir.join("real"), &with_source(super::TrainingSource::RealOnly), &ablation.real)?;
    let path = dir.join("ablation.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "model", "ap_twin", "ap_real", "delta_ap_pct", "auc_roc_twin", "auc_roc_real", "delta_auc_roc_pct", "f2_twin",
        "f2_real", "delta_f2_pct",
    ])?;
    for r in &ablation.rows {
        w.write_record([
            r.model.clone(),
            f(r.twin.ap.mean),
            f(r.real.ap.mean),
            f(r.delta_ap_pct()),
            f(r.twin.auc_roc.mean),
            f(r.real.auc_roc.mean),
            f(r.delta_auc_pct()),
            f(r.twin.f2.mean),
            f(r.real.f2.mean),
            f(r.delta_f2_pct()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
