mod support;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relclass::corpus::{parse_corpus, Relation};
use relclass_cli::Prediction;
use tempfile::TempDir;

fn relclass(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relclass"));
    cmd.env("RUST_LOG", "warn");
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Setup {
    dir: TempDir,
    corpus: PathBuf,
    table: PathBuf,
}

fn setup(seed: u64) -> Setup {
    let dir = TempDir::new().unwrap();
    let data = support::synthetic(seed);
    let (corpus, table) = support::write_synthetic(dir.path(), &data);
    Setup { dir, corpus, table }
}

fn small_clstm_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "seed = 3\nmin_lemma_freq = 1\n\n[clstm]\nnum_filters = 8\nfilter_width = 2\nrnn_units = 6\nepochs = 2\nbatch_size = 32\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn svm_train_predict_evaluate() {
    let s = setup(21);
    let model = s.dir.path().join("svm.model");
    ok(relclass(&[
        &"train",
        &"--model",
        &"svm",
        &"--train",
        &s.corpus,
        &"--embeddings",
        &s.table,
        &"--out",
        &model,
    ]));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(s.dir.path().join("svm.model.report.json")).unwrap()).unwrap();
    assert_eq!(report["binary_models"], 15);
    assert_eq!(report["instances"], 600);

    let preds = s.dir.path().join("preds.jsonl");
    ok(relclass(&[
        &"predict",
        &model,
        &s.corpus,
        &"--embeddings",
        &s.table,
        &"--out",
        &preds,
    ]));
    let predictions: Vec<Prediction> = read_jsonl(&preds);
    let gold = parse_corpus(&s.corpus).unwrap();
    assert_eq!(predictions.len(), gold.len());
    let correct = predictions
        .iter()
        .zip(&gold)
        .filter(|(p, g)| p.id == g.id && Some(p.label) == g.label)
        .count();
    assert!(correct as f64 >= 0.99 * gold.len() as f64, "{correct}/{}", gold.len());
    for p in &predictions {
        assert_eq!(p.proba.len(), 6);
        assert!((p.proba.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let scores = s.dir.path().join("scores.json");
    let out = ok(relclass(&[&"evaluate", &s.corpus, &preds, &"--out", &scores]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("macro"));
    let first: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&scores).unwrap()).unwrap();

    let mut lines: Vec<String> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines.reverse();
    let shuffled = s.dir.path().join("shuffled.jsonl");
    std::fs::write(&shuffled, lines.join("\n") + "\n").unwrap();
    ok(relclass(&[&"evaluate", &s.corpus, &shuffled, &"--out", &scores]));
    let second: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&scores).unwrap()).unwrap();
    assert_eq!(first["macro_f1"], second["macro_f1"]);
}

#[test]
fn evaluate_perfect_and_missing_id() {
    let s = setup(22);
    let gold = parse_corpus(&s.corpus).unwrap();
    let perfect: Vec<String> = gold
        .iter()
        .map(|i| {
            let label = i.label.unwrap();
            let proba: BTreeMap<Relation, f64> = Relation::ALL
                .iter()
                .map(|&r| (r, if r == label { 1.0 } else { 0.0 }))
                .collect();
            serde_json::to_string(&Prediction {
                id: i.id.clone(),
                label,
                proba,
            })
            .unwrap()
        })
        .collect();
    let preds = s.dir.path().join("perfect.jsonl");
    std::fs::write(&preds, perfect.join("\n") + "\n").unwrap();
    let scores = s.dir.path().join("scores.json");
    ok(relclass(&[&"evaluate", &s.corpus, &preds, &"--out", &scores]));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&scores).unwrap()).unwrap();
    assert_eq!(v["macro_f1"], 1.0);
    assert_eq!(v["micro_f1"], 1.0);

    std::fs::write(&preds, perfect[1..].join("\n") + "\n").unwrap();
    let out = relclass(&[&"evaluate", &s.corpus, &preds]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_corpus_predicts_nothing() {
    let s = setup(23);
    let model = s.dir.path().join("svm.model");
    let small = s.dir.path().join("small.jsonl");
    support::write_instances(&small, &parse_corpus(&s.corpus).unwrap()[..60]);
    ok(relclass(&[
        &"train",
        &"--model",
        &"svm",
        &"--train",
        &small,
        &"--embeddings",
        &s.table,
        &"--out",
        &model,
    ]));
    let empty = s.dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = ok(relclass(&[&"predict", &model, &empty, &"--embeddings", &s.table]));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_inputs_exit_with_code_2() {
    let s = setup(24);
    let mut instances = parse_corpus(&s.corpus).unwrap();
    instances.truncate(30);
    instances[4].label = None;
    let unlabeled = s.dir.path().join("unlabeled.jsonl");
    support::write_instances(&unlabeled, &instances);
    let out = relclass(&[
        &"train",
        &"--model",
        &"svm",
        &"--train",
        &unlabeled,
        &"--embeddings",
        &s.table,
        &"--out",
        &s.dir.path().join("m"),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = small_clstm_config(s.dir.path(), "");
    let model = s.dir.path().join("clstm.model");
    let small = s.dir.path().join("small.jsonl");
    support::write_instances(&small, &parse_corpus(&s.corpus).unwrap()[..60]);
    ok(relclass(&[
        &"train",
        &"--config",
        &cfg,
        &"--model",
        &"clstm",
        &"--train",
        &small,
        &"--embeddings",
        &s.table,
        &"--out",
        &model,
    ]));
    let toy = support::fixtures().join("toy_embeddings.txt");
    let out = relclass(&[&"predict", &model, &small, &"--embeddings", &toy]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = relclass(&[
        &"train",
        &"--model",
        &"svm",
        &"--train",
        &s.dir.path().join("missing.jsonl"),
        &"--embeddings",
        &s.table,
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn clstm_training_is_reproducible() {
    let s = setup(25);
    let cfg = small_clstm_config(s.dir.path(), "");
    let small = s.dir.path().join("small.jsonl");
    support::write_instances(&small, &parse_corpus(&s.corpus).unwrap()[..120]);
    let a = s.dir.path().join("a.model");
    let b = s.dir.path().join("b.model");
    for out in [&a, &b] {
        ok(relclass(&[
            &"train",
            &"--config",
            &cfg,
            &"--model",
            &"clstm",
            &"--train",
            &small,
            &"--embeddings",
            &s.table,
            &"--out",
            out,
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(s.dir.path().join("a.model.report.json")).unwrap()).unwrap();
    assert_eq!(report["hyperparams"]["num_filters"], 8);

    let c = s.dir.path().join("c.model");
    ok(relclass(&[
        &"train",
        &"--config",
        &cfg,
        &"--seed",
        &"4",
        &"--model",
        &"clstm",
        &"--train",
        &small,
        &"--embeddings",
        &s.table,
        &"--out",
        &c,
    ]));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn search_logs_one_line_per_trial() {
    let s = setup(26);
    let cfg = small_clstm_config(
        s.dir.path(),
        "\n[search]\nn_trials = 2\nnum_filters = [4, 8]\nrnn_units = [3, 6]\nfilter_width = [2, 3]\n",
    );
    let small = s.dir.path().join("small.jsonl");
    support::write_instances(&small, &parse_corpus(&s.corpus).unwrap()[..120]);
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let log = s.dir.path().join(format!("{name}.jsonl"));
        let summary = s.dir.path().join(format!("{name}.json"));
        ok(relclass(&[
            &"search",
            &"--config",
            &cfg,
            &"--train",
            &small,
            &"--embeddings",
            &s.table,
            &"--log",
            &log,
            &"--out",
            &summary,
        ]));
        let trials: Vec<serde_json::Value> = read_jsonl(&log);
        assert_eq!(trials.len(), 2);
        let best: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
        assert!(best["best_trial"].as_u64().unwrap() < 2);
        logs.push(
            trials
                .into_iter()
                .map(|mut t| {
                    t.as_object_mut().unwrap().remove("timing");
                    t
                })
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn crossval_smoke() {
    let s = setup(27);
    let small = s.dir.path().join("small.jsonl");
    support::write_instances(&small, &parse_corpus(&s.corpus).unwrap()[..120]);
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = s.dir.path().join(format!("{name}.json"));
        ok(relclass(&[
            &"crossval",
            &"--model",
            &"svm",
            &"--k",
            &"2",
            &"--train",
            &small,
            &"--embeddings",
            &s.table,
            &"--seed",
            &"5",
            &"--out",
            &out,
        ]));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["folds"].as_array().unwrap().len(), 2);
        reports.push(v["mean_macro_f1"].clone());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn features_are_deterministic() {
    let s = setup(28);
    let a = ok(relclass(&[
        &"features",
        &s.corpus,
        &"--embeddings",
        &s.table,
        &"--min-lemma-freq",
        &"1",
    ]))
    .stdout;
    let b = ok(relclass(&[
        &"features",
        &s.corpus,
        &"--embeddings",
        &s.table,
        &"--min-lemma-freq",
        &"1",
    ]))
    .stdout;
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 600);
}
