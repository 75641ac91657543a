use std::fs;
use std::path::Path;
use std::process::Command;

use ratlab_cli::checkpoint;
use ratlab_cli::commands::{load_run, FinalRecord, FAILURE_FILE, METRICS_HEADER};
use ratlab_cli::{cmd_diagnose, cmd_eval, cmd_gen_data, cmd_train, DataSource, GenSpec, RunConfig, OUTPUT_ROOT_ENV};
use ratlab_core::data::{TextGenSpec, Example};
use ratlab_core::rationalization::{Batch, ObjectiveKind};
use ratlab_core::tensor::Tensor;

fn ratlab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ratlab"));
    cmd.env_remove(OUTPUT_ROOT_ENV);
    cmd
}

fn small_text() -> TextGenSpec {
    TextGenSpec {
        train_size: 200,
        dev_size: 40,
        test_size: 60,
        ..TextGenSpec::default()
    }
}

fn small_run(dir: &Path, name: &str, objective: ObjectiveKind) -> RunConfig {
    let mut cfg = RunConfig {
        name: Some(name.into()),
        data: DataSource::Text { spec: small_text() },
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.game.objective = objective;
    cfg.game.epochs = 2;
    cfg.game.hidden_dim = 6;
    cfg.game.embedding_dim = 6;
    cfg.game.batch_size = 32;
    cfg.game.lr = 3e-3;
    cfg
}

#[test]
fn gen_data_writes_default_splits_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let manifest = cmd_gen_data(&GenSpec::default(), &a).unwrap();
    cmd_gen_data(&GenSpec::default(), &b).unwrap();
    let sizes: Vec<usize> = manifest.files.iter().map(|f| f.examples).collect();
    assert_eq!(sizes, [2000, 500, 500]);
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_rejects_spans_that_do_not_fit() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"kind": "text", "doc_len": 6, "span_len": 4, "num_spans": 2}"#).unwrap();
    let out = ratlab()
        .args(["gen-data", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("num_spans * span_len"), "{err}");
}

#[test]
fn graph_data_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenSpec::from_json(r#"{"kind": "graph", "train_size": 30, "dev_size": 6, "test_size": 6}"#).unwrap();
    cmd_gen_data(&spec, &dir.path().join("g")).unwrap();
    let mut cfg = small_run(dir.path(), "g", ObjectiveKind::Mmi);
    cfg.data = DataSource::Files {
        train: dir.path().join("g/train.jsonl"),
        dev: dir.path().join("g/dev.jsonl"),
        test: dir.path().join("g/test.jsonl"),
    };
    cfg.game.sparsity = 0.2;
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.test.examples, 6);
}

#[test]
fn train_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&small_run(dir.path(), "n2r", ObjectiveKind::N2r)).unwrap();
    for f in ["config.json", "metrics.csv", "final.json", "params.bin"] {
        assert!(out.run_dir.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.run_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 3);

    let fin: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.run_dir.join("final.json")).unwrap()).unwrap();
    for key in ["examples", "s", "acc", "p", "r", "f1", "pred_loss", "mean_norm"] {
        assert!(fin.get(key).is_some(), "final.json lacks {key}");
    }
    let parsed: FinalRecord = serde_json::from_value(fin).unwrap();
    assert_eq!(parsed.metrics, out.test);

    let snapshot = fs::read_to_string(out.run_dir.join("config.json")).unwrap();
    let mut again = RunConfig::from_json(&snapshot).unwrap();
    again.resolve().unwrap();
    assert_eq!(again.snapshot(), snapshot);
}

#[test]
fn reruns_are_identical_and_objectives_differ() {
    let dir = tempfile::tempdir().unwrap();
    let csv = |name: &str, obj| {
        let out = cmd_train(&small_run(dir.path(), name, obj)).unwrap();
        fs::read_to_string(out.run_dir.join("metrics.csv")).unwrap()
    };
    let a = csv("a", ObjectiveKind::Mmi);
    let b = csv("b", ObjectiveKind::Mmi);
    let c = csv("c", ObjectiveKind::N2r);
    assert_eq!(a, b);
    let ext = |s: &str| -> Vec<String> { s.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect() };
    assert_ne!(ext(&a), ext(&c));
}

#[test]
fn eval_is_deterministic_and_needs_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&small_run(dir.path(), "e", ObjectiveKind::Mmi)).unwrap();
    let first = cmd_eval(&out.run_dir, "test").unwrap();
    let json1 = fs::read(out.run_dir.join("eval_test.json")).unwrap();
    let second = cmd_eval(&out.run_dir, "test").unwrap();
    assert_eq!(first, second);
    assert_eq!(first, out.test);
    assert_eq!(json1, fs::read(out.run_dir.join("eval_test.json")).unwrap());
    assert!(cmd_eval(&out.run_dir, "holdout").is_err());

    fs::remove_file(out.run_dir.join("params.bin")).unwrap();
    assert!(cmd_eval(&out.run_dir, "test").is_err());
    let status = ratlab().arg("eval").arg(&out.run_dir).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn eval_on_an_empty_split_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path(), "empty", ObjectiveKind::Mmi);
    cfg.game.epochs = 0;
    let out = cmd_train(&cfg).unwrap();
    let snapshot = out.run_dir.join("config.json");
    let text = fs::read_to_string(&snapshot).unwrap().replace("\"dev_size\": 40", "\"dev_size\": 0");
    fs::write(&snapshot, text).unwrap();
    assert!(cmd_eval(&out.run_dir, "dev").is_err());
}

#[test]
fn eval_scores_gold_selection_as_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path(), "gold", ObjectiveKind::Mmi);
    // One span covering the whole document: the gold mask is all ones.
    cfg.data = DataSource::Text {
        spec: TextGenSpec {
            doc_len: 4,
            span_len: 4,
            num_spans: 1,
            ..small_text()
        },
    };
    cfg.game.epochs = 0;
    let out = cmd_train(&cfg).unwrap();
    let (_, mut game, _) = load_run(&out.run_dir).unwrap();
    let bias = game.extractor_params.id("extractor.head.bias").unwrap();
    game.extractor_params.get_mut(bias).data_mut().copy_from_slice(&[5.0, -5.0]);
    checkpoint::save(&game, &out.run_dir.join("params.bin")).unwrap();
    let m = cmd_eval(&out.run_dir, "test").unwrap();
    assert_eq!(m.s, 1.0);
    assert_eq!((m.p, m.r, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn diagnose_emits_eleven_rows_consistent_with_gold_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&small_run(dir.path(), "d", ObjectiveKind::Mmi)).unwrap();
    let curve = cmd_diagnose(&out.run_dir).unwrap();
    let csv = fs::read_to_string(out.run_dir.join("degradation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert_eq!(csv.lines().next(), Some("rho,acc,ce,norm"));
    assert_eq!(cmd_diagnose(&out.run_dir).unwrap(), curve);
    assert_eq!(csv, fs::read_to_string(out.run_dir.join("degradation.csv")).unwrap());

    // At rho = 1 nothing is replaced: the CE is the predictor's CE on gold masks.
    let (_, game, splits) = load_run(&out.run_dir).unwrap();
    let refs: Vec<&Example> = splits.test.iter().collect();
    let batch = Batch::new(&refs).unwrap();
    let gold = batch.gold.as_ref().unwrap();
    let mask = Tensor::new(
        vec![batch.size, batch.positions],
        gold.iter().map(|&g| f64::from(u8::from(g))).collect(),
    )
    .unwrap();
    let o = game.predict_with_mask(&batch, &mask).unwrap();
    let ce = o.losses.iter().sum::<f64>() / o.losses.len() as f64;
    let last = curve.points.last().unwrap();
    assert_eq!(last.rho, 1.0);
    assert!((last.ce - ce).abs() < 1e-12, "{} vs {ce}", last.ce);
}

#[test]
fn diagnose_requires_gold_rationales() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_gen_data(&GenSpec::Text(small_text()), &data).unwrap();
    // Strip the rationale from the test split.
    let test = fs::read_to_string(data.join("test.jsonl")).unwrap();
    let stripped: String = test
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("rationale");
            format!("{v}\n")
        })
        .collect();
    fs::write(data.join("test.jsonl"), stripped).unwrap();
    let mut cfg = small_run(dir.path(), "nogold", ObjectiveKind::Mmi);
    cfg.data = DataSource::Files {
        train: data.join("train.jsonl"),
        dev: data.join("dev.jsonl"),
        test: data.join("test.jsonl"),
    };
    cfg.game.epochs = 1;
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.test.f1, None);
    let err = cmd_diagnose(&out.run_dir).unwrap_err();
    assert!(format!("{err:#}").contains("gold"));
}

#[test]
fn binary_train_honours_output_root_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"name": "bin", "data": {"source": "text", "spec": {"train_size": 40, "dev_size": 8, "test_size": 8}},
            "game": {"epochs": 1, "hidden_dim": 4, "embedding_dim": 4, "batch_size": 16}}"#,
    )
    .unwrap();
    let root = dir.path().join("root");
    let out = ratlab().arg("train").arg(&cfg_path).env(OUTPUT_ROOT_ENV, &root).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("bin/final.json").is_file());

    fs::write(&cfg_path, r#"{"game": {"epochs": 1}, "unknown": true}"#).unwrap();
    let out = ratlab().arg("train").arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));
}

#[test]
fn numerical_failure_leaves_partial_artifacts_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("nan.json");
    fs::write(
        &cfg_path,
        r#"{"name": "nan", "data": {"source": "text", "spec": {"train_size": 64, "dev_size": 8, "test_size": 8}},
            "game": {"epochs": 3, "hidden_dim": 4, "embedding_dim": 4, "batch_size": 16, "lr": 1e300}}"#,
    )
    .unwrap();
    let root = dir.path().join("root");
    let out = ratlab().arg("train").arg(&cfg_path).env(OUTPUT_ROOT_ENV, &root).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let run = root.join("nan");
    assert!(run.join(FAILURE_FILE).is_file());
    assert!(run.join("config.json").is_file());
    assert!(fs::read_to_string(run.join("metrics.csv")).unwrap().starts_with(METRICS_HEADER));
    assert!(!run.join("final.json").exists());
}

#[test]
fn oracles_command_reports_five_passing_checks() {
    let out = ratlab().arg("oracles").output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let checks: Vec<&str> = stdout.lines().filter(|l| l.starts_with("check ")).collect();
    assert_eq!(checks.len(), 5, "{stdout}");
    assert!(checks.iter().all(|l| l.ends_with("PASS")));
    assert!(stdout.contains("1.732050"), "{stdout}");
    assert!(stdout.contains("I(Y;R1,R2)"));
}

#[test]
fn grad_check_command_passes() {
    let out = ratlab().args(["grad-check", "--instances", "20"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().count() >= 10);
    assert!(!stdout.contains("FAIL"));
}
