use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use layout_ner::doc::{Dataset, Entity, SyntheticSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layout-ner"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "--out", p(dir)]);
}

#[test]
fn synth_is_reproducible_and_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a);
    synth(&b);
    for f in ["train.json", "test.json"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap());
        Dataset::load(&a.join(f)).unwrap().validate().unwrap();
    }
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn infeasible_spec_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::forms();
    spec.labels[0].count_range = [50, 60];
    let path = tmp.path().join("spec.json");
    fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = run(&["synth", "--spec", p(&path), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("header"));
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let data = tmp.path().join("test.json");
    let missing = tmp.path().join("nope.ckpt");
    for cmd in ["eval", "decode"] {
        let out = run(&[
            cmd,
            "--checkpoint",
            p(&missing),
            "--data",
            p(&data),
            "--out",
            p(&tmp.path().join(cmd)),
        ]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
    }
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        p(&tmp.path().join("x.json")),
        "--labels",
        "bogus",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["fewshot-suite", "--out", p(tmp.path())]).status.code(), Some(2));
}

fn write_json(path: &Path, value: &serde_json::Value) {
    fs::write(path, value.to_string()).unwrap();
}

#[test]
fn train_decode_eval_heatmap_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let full = Dataset::load(&data.join("train.json")).unwrap();
    let two = Dataset::new(full.name.clone(), full.labels.clone(), full.pages[..2].to_vec());
    let pages = tmp.path().join("two.json");
    two.save(&pages).unwrap();
    let cfg = tmp.path().join("train.json");
    write_json(
        &cfg,
        &serde_json::json!({
            "model": {"d_model": 32, "n_layers": 2, "n_heads": 4, "d_ff": 128, "max_len": 256},
            "train": {"lr": 3e-3, "steps": 300, "batch_size": 2, "eval_every": 25}
        }),
    );
    let run_dir = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&pages),
        "--config",
        p(&cfg),
        "--seed",
        "0",
        "--out",
        p(&run_dir),
    ]);
    let ckpt = run_dir.join("model.ckpt");
    assert!(ckpt.is_file());
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 300);

    let dec = tmp.path().join("dec");
    ok(&["decode", "--checkpoint", p(&ckpt), "--data", p(&pages), "--out", p(&dec), "--trace"]);
    let exported: serde_json::Value = serde_json::from_str(&fs::read_to_string(dec.join("entities.json")).unwrap()).unwrap();
    for (page, rec) in two.pages.iter().zip(exported.as_array().unwrap()) {
        let ents: Vec<Entity> = serde_json::from_value(rec["entities"].clone()).unwrap();
        assert_eq!(ents, page.entities, "page {}", page.id);
        assert_eq!(rec["overlay"].as_array().unwrap().len(), page.entities.len());
    }
    assert!(fs::read_to_string(dec.join("trace.jsonl")).unwrap().lines().count() > 10);

    let ev = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&pages), "--out", p(&ev)]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["f1"], 1.0);
    assert!(ev.join("report.txt").is_file() && ev.join("metrics.csv").is_file());

    let hm = tmp.path().join("heat");
    ok(&["heatmap", "--checkpoint", p(&ckpt), "--out", p(&hm)]);
    for label in ["header", "question", "answer"] {
        for ext in ["csv", "pgm"] {
            assert!(hm.join(format!("{label}_10.{ext}")).is_file(), "{label}.{ext}");
        }
    }
    for dir in [&run_dir, &dec, &ev, &hm] {
        assert!(dir.join("manifest.json").is_file());
    }
}

#[test]
fn fewshot_suite_single_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("suite.json");
    write_json(
        &cfg,
        &serde_json::json!({
            "name": "smoke",
            "dataset": {"kind": "synthetic", "seed": 7},
            "shots": [1],
            "seeds": [0],
            "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_len": 256},
            "train": {"steps": 2, "batch_size": 1}
        }),
    );
    let out = tmp.path().join("suite");
    ok(&["fewshot-suite", "--config", p(&cfg), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("1,orig,orig,1,"));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("±0.00"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["shots"], serde_json::json!([1]));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["fewshot-synthetic.json", "fewshot-funsd.json"] {
        let cfg = layout_ner::suite::SuiteConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds.len(), 6, "{name}");
    }
    let names: layout_ner::suite::LabelNames = serde_json::from_str(&fs::read_to_string(dir.join("labels-irlvt.json")).unwrap()).unwrap();
    assert_eq!(names.names.unwrap().len(), 3);
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        p(&tmp.path().join("missing.json")),
        "--config",
        p(&dir.join("train-tiny.json")),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}
