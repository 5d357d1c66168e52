use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use proptest::prelude::*;
use serde_json::json;
use twinguard::autoencoders::AutoencoderConfig;
use twinguard::harness::*;
use twinguard::synthgen::demo_config;
use twinguard::Error;

fn data() -> &'static PreparedData {
    static DATA: OnceLock<PreparedData> = OnceLock::new();
    DATA.get_or_init(|| PreparedData::generate(&demo_config(), &Default::default()).unwrap())
}

fn quick_sae() -> AutoencoderConfig {
    let mut c = AutoencoderConfig::sae();
    c.hidden = vec![16, 8];
    c.train.max_epochs = 4;
    c
}

fn config(model: ModelSpec, seeds: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(model);
    c.plant = demo_config();
    c.seeds = (0..seeds as u64).collect();
    c
}

fn quick_suite(seeds: usize) -> Vec<ExperimentConfig> {
    let mut ffae = AutoencoderConfig::ffae();
    ffae.hidden = vec![8];
    ffae.train.max_epochs = 3;
    vec![
        config(ModelSpec::Sae(quick_sae()), seeds),
        config(ModelSpec::Cc(CcConfig { candidates: vec![4, 8], ..CcConfig::default() }), seeds),
        config(ModelSpec::Ffae(ffae), seeds),
        config(ModelSpec::Knn(KnnConfig::default()), seeds),
        config(ModelSpec::Pca(PcaConfig::default()), seeds),
        config(ModelSpec::Mae, seeds),
    ]
}

#[test]
fn splits_are_disjoint_and_labels_nested() {
    let d = data();
    let mut prev: Option<Vec<usize>> = None;
    for n in [1, 5, 10, 40] {
        let mut c = config(ModelSpec::Mae, 3);
        c.n_labeled_anomalies = n;
        let s = make_splits(d, &c, 2).unwrap();
        assert_eq!(s.fold, 2);
        let val: BTreeSet<_> = s.real_validation.iter().collect();
        let test: BTreeSet<_> = s.real_test.iter().collect();
        let lab: BTreeSet<_> = s.labeled.iter().collect();
        assert!(val.is_disjoint(&test) && val.is_disjoint(&lab) && test.is_disjoint(&lab));
        assert_eq!(val.len() + test.len() + lab.len(), d.real.n_windows());
        assert!(s.labeled.iter().all(|&i| d.real.labels[i]));
        let train: BTreeSet<_> = s.train.iter().collect();
        assert!(s.early_stopping.iter().all(|i| !train.contains(i)));
        assert_eq!(s.train.len() + s.early_stopping.len(), d.twin.n_windows());
        if let Some(p) = &prev {
            assert_eq!(&s.labeled[..p.len()], &p[..]);
        }
        prev = Some(s.labeled);
    }
    let mut c = config(ModelSpec::Mae, 1);
    c.n_labeled_anomalies = d.labeled_pool_size() + 1;
    assert!(matches!(make_splits(d, &c, 0), Err(Error::NotEnoughSamples { .. })));
}

#[test]
fn real_only_training_uses_validation_rows() {
    let d = data();
    let mut c = config(ModelSpec::Knn(KnnConfig::default()), 2);
    c.training_source = TrainingSource::RealOnly;
    let s = make_splits(d, &c, 1).unwrap();
    let val: BTreeSet<_> = s.real_validation.iter().copied().collect();
    assert!(s.train.iter().chain(&s.early_stopping).all(|i| val.contains(i)));
    assert_eq!(s.train.len() + s.early_stopping.len(), val.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_invariants_hold_for_any_seed(seed in any::<u64>(), n in 1usize..60, idx in 0usize..10) {
        let d = data();
        let mut c = config(ModelSpec::Mae, 10);
        c.seeds[idx] = seed;
        c.n_labeled_anomalies = n;
        let s = make_splits(d, &c, idx).unwrap();
        prop_assert_eq!(s.fold, idx);
        prop_assert_eq!(s.labeled.len(), n);
        let lab: BTreeSet<_> = s.labeled.iter().collect();
        prop_assert!(s.real_test.iter().all(|i| !lab.contains(i)));
        prop_assert!(s.real_validation.iter().all(|i| !lab.contains(i)));
        prop_assert!(s.real_test.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(make_splits(d, &c, idx).unwrap(), s);
    }
}

/// Replaces the features of every test row with garbage. Labels stay: they
/// define the anomaly pool the labeled set is drawn from.
fn poison_test_rows(d: &PreparedData, splits: &Splits) -> PreparedData {
    let mut p = d.clone();
    for &i in &splits.real_test {
        p.real.matrix.row_mut(i).fill(1e6);
        p.mae_scores[i] = -1.0;
    }
    p
}

#[test]
fn test_rows_never_reach_training() {
    let d = data();
    for cfg in quick_suite(2) {
        for source in [TrainingSource::Twin, TrainingSource::RealOnly] {
            if cfg.model == ModelSpec::Mae && source == TrainingSource::RealOnly {
                continue;
            }
            let mut cfg = cfg.clone();
            cfg.training_source = source;
            let a = fit_run(d, &cfg, 1).unwrap();
            let poisoned = poison_test_rows(d, &a.splits);
            let b = fit_run(&poisoned, &cfg, 1).unwrap();
            assert_eq!(a.splits, b.splits, "{} {source:?}", cfg.name());
            assert_eq!(a.standardization, b.standardization);
            assert_eq!(a.model.fingerprint(), b.model.fingerprint(), "{} {source:?}", cfg.name());
        }
    }
}

#[test]
fn leakage_probe_detects_training_rows() {
    // sanity check of the probe itself: touching a training row must show
    let d = data();
    let mut cfg = config(ModelSpec::Knn(KnnConfig::default()), 1);
    cfg.training_source = TrainingSource::RealOnly;
    let a = fit_run(d, &cfg, 0).unwrap();
    let mut p = d.clone();
    p.real.matrix.row_mut(a.splits.train[0]).fill(3.0);
    let b = fit_run(&p, &cfg, 0).unwrap();
    assert_ne!(a.model.fingerprint(), b.model.fingerprint());
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn run_directories_are_reproducible() {
    let configs = quick_suite(2);
    let a = run_suite(&configs, EvalPartition::Test).unwrap();
    let b = run_suite(&configs, EvalPartition::Test).unwrap();
    assert!(a.completed() && b.completed());
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_run_dir(da.path(), &configs, &a).unwrap();
    write_run_dir(db.path(), &configs, &b).unwrap();
    for f in ["results.csv", "aggregate.csv", "confusion.csv", "manifest.json", "curves/sae_seed1_roc.csv", "reports/mae_seed0.json"] {
        assert_eq!(read(&da.path().join(f)), read(&db.path().join(f)), "{f}");
    }
    assert!(da.path().join("timings.csv").exists());
}

#[test]
fn aggregates_recompute_exactly_from_results_csv() {
    let configs = quick_suite(3);
    let suite = run_suite(&configs, EvalPartition::Test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &configs, &suite).unwrap();
    let mut rows = csv::Reader::from_path(dir.path().join("results.csv")).unwrap();
    let header = rows.headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), twinguard::harness::RESULTS_HEADER.to_vec());
    let mut per_model: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in rows.records() {
        let r = r.unwrap();
        let (model, ap, f2) = (r[0].to_string(), r[3].parse::<f64>().unwrap(), r[5].parse::<f64>().unwrap());
        let tp: usize = r[6].parse().unwrap();
        let fp: usize = r[7].parse().unwrap();
        let tn: usize = r[8].parse().unwrap();
        let fn_: usize = r[9].parse().unwrap();
        assert!(tp + fp + tn + fn_ > 0);
        match per_model.iter_mut().find(|m| m.0 == model) {
            Some(m) => {
                m.1.push(ap);
                m.2.push(f2);
            }
            None => per_model.push((model, vec![ap], vec![f2])),
        }
    }
    let mut agg = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let aggs: Vec<csv::StringRecord> = agg.records().map(|r| r.unwrap()).collect();
    assert_eq!(aggs.len(), per_model.len());
    for (rec, (model, aps, f2s)) in aggs.iter().zip(&per_model) {
        assert_eq!(&rec[0], model);
        let n = aps.len() as f64;
        let mean = aps.iter().sum::<f64>() / n;
        let sd = (aps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert_eq!(rec[2].parse::<f64>().unwrap(), mean, "{model}");
        assert_eq!(rec[3].parse::<f64>().unwrap(), sd, "{model}");
        assert_eq!(rec[6].parse::<f64>().unwrap(), f2s.iter().sum::<f64>() / n, "{model}");
    }
}

#[test]
fn reports_are_internally_consistent() {
    let d = data();
    for cfg in quick_suite(1) {
        let o = run_single(d, &cfg, 0, EvalPartition::Test).unwrap();
        let r = &o.report;
        assert_eq!(r.confusion.total(), r.n);
        assert_eq!(r.n, o.rows.len());
        let flagged = o.scored.scores().iter().filter(|&&s| s > r.threshold).count();
        assert_eq!(flagged, r.confusion.tp + r.confusion.fp);
        assert_eq!(r.train_seconds, 0.0);
        assert!(o.flatline_recall.is_some());
    }
}

#[test]
fn failed_runs_are_reported_not_fatal() {
    let d = data();
    let mut bad = config(ModelSpec::Knn(KnnConfig { k: 0 }), 2);
    bad.name = Some("bad".into());
    let good = config(ModelSpec::Mae, 2);
    let suite = run_experiments(d, &[bad, good], EvalPartition::Test);
    assert!(!suite.completed());
    assert_eq!(suite.failures.len(), 2);
    assert_eq!(suite.outcomes.len(), 2);
    assert!(suite.failures.iter().all(|f| f.model == "bad"));
}

#[test]
fn stub_line_search_picks_the_best_and_breaks_ties_early() {
    let base = config(ModelSpec::Knn(KnnConfig::default()), 1);
    let space = SearchSpace {
        dimensions: vec![
            Dimension {
                pointer: "/model/knn/k".into(),
                values: vec![json!(1), json!(3), json!(0), json!(7), json!(9)],
            },
            Dimension {
                pointer: "/threshold_fraction".into(),
                values: vec![json!(0.25), json!(0.5)],
            },
        ],
    };
    let mut calls = 0;
    let objective = |c: &ExperimentConfig| -> twinguard::Result<f64> {
        calls += 1;
        let ModelSpec::Knn(k) = &c.model else { unreachable!() };
        if k.k == 9 {
            return Err(Error::InvalidConfig("stub failure".into()));
        }
        // 3 and 7 tie; the threshold dimension is flat
        Ok(-((k.k as f64 - 5.0).abs()))
    };
    let (best, trace) = line_search(&space, &base, 2, objective).unwrap();
    assert_eq!(best.model, ModelSpec::Knn(KnnConfig { k: 3 }));
    assert_eq!(best.threshold_fraction, 0.25);
    assert_eq!(trace.len(), 2 * (5 + 2));
    let bad: Vec<_> = trace.iter().filter(|t| t.error.is_some()).map(|t| t.value.as_str()).collect();
    assert_eq!(bad, ["0", "9", "0", "9"]);
    assert_eq!(trace.iter().filter(|t| t.selected).count(), 4);
    // k=1,3,7,9 plus the 0.5 threshold variant are evaluated once each
    assert_eq!(calls, 5);
}

#[test]
fn line_search_with_validation_objective_runs() {
    let base = config(ModelSpec::Knn(KnnConfig::default()), 2);
    let space = SearchSpace {
        dimensions: vec![Dimension {
            pointer: "/model/knn/k".into(),
            values: vec![json!(1), json!(5)],
        }],
    };
    let mut cache = DataCache::default();
    let (best, trace) = line_search(&space, &base, 1, |c| validation_objective(&mut cache, c)).unwrap();
    assert_eq!(trace.len(), 2);
    assert!(trace.iter().all(|t| t.objective.is_some_and(|v| (0.0..=1.0).contains(&v))));
    let winner = trace.iter().find(|t| t.selected).unwrap();
    assert_eq!(serde_json::to_string(&best.model).unwrap(), format!("{{\"knn\":{{\"k\":{}}}}}", winner.value));
}

#[test]
fn sweep_drops_oversized_counts_and_keeps_order() {
    let d = data();
    let cfg = config(ModelSpec::Knn(KnnConfig::default()), 2);
    let pool = d.labeled_pool_size();
    let points = anomaly_sweep(d, &[cfg], &[5, 10, pool + 1]);
    assert_eq!(points.iter().map(|p| p.n_labeled).collect::<Vec<_>>(), [5, 10]);
    assert!(points.iter().all(|p| p.suite.completed() && p.suite.outcomes.len() == 2));
    let dir = tempfile::tempdir().unwrap();
    write_sweep(dir.path(), &[config(ModelSpec::Knn(KnnConfig::default()), 2)], &points).unwrap();
    assert!(dir.path().join("n10/knn/results.csv").exists());
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn ablation_skips_mae_and_reports_relative_change() {
    let d = data();
    let configs = vec![config(ModelSpec::Knn(KnnConfig::default()), 2), config(ModelSpec::Mae, 2)];
    let ab = ablation_training_source(d, &configs);
    assert_eq!(ab.rows.len(), 1);
    let r = &ab.rows[0];
    assert_eq!(r.model, "knn");
    assert_eq!(r.delta_ap_pct(), 100.0 * (r.real.ap.mean - r.twin.ap.mean) / r.twin.ap.mean);
    let dir = tempfile::tempdir().unwrap();
    write_ablation(dir.path(), &configs, &ab).unwrap();
    for f in ["ablation.csv", "twin/results.csv", "real/results.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn checkpoints_round_trip_for_every_trainable_model() {
    let d = data();
    let normals = d.twin.select(&(0..400).collect::<Vec<_>>());
    let anomalies = d.real.select(&(0..d.real.n_windows()).filter(|&i| d.real.labels[i]).take(5).collect::<Vec<_>>());
    let probe = d.real.select(&(0..50).collect::<Vec<_>>());
    let specs = [
        ModelSpec::Sae(quick_sae()),
        ModelSpec::Cc(CcConfig::default()),
        ModelSpec::Cc(CcConfig::unsupervised()),
        ModelSpec::Knn(KnnConfig::default()),
        ModelSpec::Pca(PcaConfig::default()),
    ];
    for spec in specs {
        let cp = Checkpoint::train(&spec, &normals, &anomalies, None, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cp.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.model_name, spec.default_name());
        assert_eq!(cp.score(&probe).unwrap(), back.score(&probe).unwrap(), "{}", spec.default_name());
    }
    assert!(Checkpoint::train(&ModelSpec::Mae, &normals, &anomalies, None, 0).is_err());
}

#[test]
fn cc_ws_without_labels_matches_unsupervised_cc() {
    let d = data();
    let cands = vec![4, 8, 16];
    let mut ws = config(ModelSpec::Cc(CcConfig { candidates: cands.clone(), ..CcConfig::default() }), 2);
    ws.n_labeled_anomalies = 0;
    let mut plain = config(ModelSpec::Cc(CcConfig { candidates: cands, ..CcConfig::unsupervised() }), 2);
    plain.n_labeled_anomalies = 0;
    for seed in 0..2 {
        let a = run_single(d, &ws, seed, EvalPartition::Test).unwrap();
        let b = run_single(d, &plain, seed, EvalPartition::Test).unwrap();
        assert_eq!(a.scored, b.scored);
        assert_eq!(a.cluster_selection, b.cluster_selection);
        assert_eq!((a.report.ap, a.report.auc_roc, a.report.f2), (b.report.ap, b.report.auc_roc, b.report.f2));
        assert_eq!(a.report.confusion, b.report.confusion);
    }
}

#[test]
fn adding_seeds_leaves_existing_runs_unchanged() {
    let d = data();
    let few: Vec<ExperimentConfig> = quick_suite(2);
    let mut many = few.clone();
    for c in &mut many {
        c.seeds = vec![0, 1, 2, 3];
    }
    let a = run_experiments(d, &few, EvalPartition::Test);
    let b = run_experiments(d, &many, EvalPartition::Test);
    assert!(a.completed() && b.completed());
    for ra in &a.outcomes {
        let rb = b
            .outcomes
            .iter()
            .find(|o| o.report.meta == ra.report.meta)
            .expect("run present in the larger suite");
        assert_eq!(ra.scored, rb.scored, "{:?}", ra.report.meta);
        assert_eq!(ra.report.ap, rb.report.ap);
    }
}
