use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn twinguard(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinguard"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = twinguard(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn generate_featurize_train_score_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["generate", "--preset", "demo", "--out-twin", "twin.csv", "--out-real", "real.csv", "--out-twin-train", "train.csv"],
    );
    ok(d, &["featurize", "--in", "train.csv", "--out", "normals.csv", "--keep", "normal"]);
    ok(d, &["featurize", "--in", "real.csv", "--out", "real_f.csv"]);
    ok(d, &["featurize", "--in", "real.csv", "--out", "anom.csv", "--keep", "anomalous"]);
    assert!(d.join("real_f.csv.json").exists());

    // every kept row really is anomalous
    let anom = fs::read_to_string(d.join("anom.csv")).unwrap();
    assert!(anom.lines().skip(1).all(|l| l.ends_with(",1")));

    for model in ["sae", "cc-ws", "knn"] {
        let ckpt = format!("ck_{model}");
        ok(
            d,
            &["train", "--model", model, "--normals", "normals.csv", "--anomalies", "anom.csv", "--out", &ckpt, "--seed", "3"],
        );
        let scores = format!("{model}.csv");
        ok(d, &["score", "--model", &ckpt, "--in", "real_f.csv", "--out", &scores]);
        assert_eq!(lines(&d.join(&scores)), lines(&d.join("real_f.csv")));
        // scoring twice gives identical bytes
        ok(d, &["score", "--model", &ckpt, "--in", "real_f.csv", "--out", "again.csv"]);
        assert_eq!(fs::read(d.join(&scores)).unwrap(), fs::read(d.join("again.csv")).unwrap());

        let eval_dir = format!("eval_{model}");
        let out = ok(d, &["evaluate", "--scores", &scores, "--out", &eval_dir]);
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let ap = report["ap"].as_f64().unwrap();
        assert!(ap > 0.5, "{model} AP {ap}");
        assert!(d.join(&eval_dir).join("pr.csv").exists());
    }
}

#[test]
fn train_rejects_bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--preset", "demo", "--out-twin", "twin.csv", "--out-real", "real.csv"]);
    ok(d, &["featurize", "--in", "twin.csv", "--out", "f.csv"]);
    let out = twinguard(d, &["train", "--model", "sae", "--normals", "f.csv", "--out", "ck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--anomalies"));
    let out = twinguard(d, &["train", "--model", "knn", "--normals", "f.csv", "--eta", "0.1", "--out", "ck"]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_writes_run_dir_and_reports_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["evaluate", "--preset", "demo", "--seeds", "2", "--models", "cc,knn", "--out", "run"]);
    let run = d.join("run");
    for f in ["manifest.json", "results.csv", "aggregate.csv", "confusion.csv", "timings.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(lines(&run.join("results.csv")), 1 + 4);

    // one impossible run: the others still complete, the exit code is 1
    fs::write(
        d.join("bad.json"),
        r#"[{"model": {"knn": {}}, "seeds": [0]},
            {"model": {"cc": {}}, "n_labeled_anomalies": 100000, "seeds": [0]}]"#,
    )
    .unwrap();
    let out = twinguard(d, &["evaluate", "--config", "bad.json", "--preset", "demo", "--out", "bad"]);
    assert_eq!(out.status.code(), Some(1));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("bad/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failures"].as_array().unwrap().len(), 1);
    assert_eq!(lines(&d.join("bad/results.csv")), 2);

    fs::write(d.join("invalid.json"), r#"{"model": "mae", "training_source": "real_only"}"#).unwrap();
    assert!(!twinguard(d, &["evaluate", "--config", "invalid.json", "--out", "x"]).status.success());
}

#[test]
fn search_sweep_and_ablation_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("space.json"),
        r#"{"dimensions": [{"pointer": "/model/cc/eta", "values": [0.05, 0.15]},
                           {"pointer": "/n_labeled_anomalies", "values": [5, 10]}]}"#,
    )
    .unwrap();
    let common = ["--preset", "demo", "--seeds", "2", "--models", "cc-ws"];

    let mut args = vec!["search", "--space", "space.json", "--passes", "2", "--out", "search"];
    args.extend(common);
    ok(d, &args);
    assert_eq!(lines(&d.join("search/search_trace.csv")), 1 + 8);
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("search/best_config.json")).unwrap()).unwrap();
    assert!(best["model"]["cc"]["eta"].is_number());

    let mut args = vec!["sweep", "--counts", "5,10", "--out", "sweep"];
    args.extend(common);
    ok(d, &args);
    assert!(d.join("sweep/n5/cc-ws/manifest.json").exists());
    assert_eq!(lines(&d.join("sweep/sweep.csv")), 1 + 2);

    let mut args = vec!["ablation", "--out", "ablation"];
    args.extend(common);
    ok(d, &args);
    assert_eq!(lines(&d.join("ablation/ablation.csv")), 2);
    assert!(d.join("ablation/real/results.csv").exists());
}
