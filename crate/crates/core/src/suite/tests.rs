use super::*;

fn quick() -> SuiteConfig {
    SuiteConfig {
        shots: vec![1],
        seeds: vec![0],
        model: ModelConfig::tiny(8, 1, 2),
        train: TrainConfig {
            steps: 2,
            batch_size: 2,
            lr: 1e-3,
            ..TrainConfig::default()
        },
        ..SuiteConfig::default()
    }
}

#[test]
fn single_cell_suite_has_zero_std() {
    let reports = run_suite(&quick()).unwrap();
    assert_eq!(reports.len(), 1);
    let s = reports[0].summary.unwrap();
    assert_eq!(s.runs, 1);
    assert_eq!(s.f1.std, 0.0);
}

#[test]
fn failed_cells_are_recorded() {
    let cfg = SuiteConfig {
        shots: vec![1, 1000],
        ..quick()
    };
    let reports = run_suite(&cfg).unwrap();
    assert!(reports[0].summary.is_some());
    assert!(reports[1].summary.is_none());
    assert!(reports[1].runs[0].error.as_deref().unwrap().contains("1000"));
}

#[test]
fn label_names_resolve() {
    let (pool, _) = quick().dataset.load().unwrap();
    let orig = LabelNames::default().resolve(&pool).unwrap();
    assert_eq!(orig.words(), ["header", "question", "answer"]);
    let irlvt = LabelNames {
        id: "irlvt".into(),
        names: Some(vec!["w".into(), "x".into(), "y".into()]),
    };
    let set = irlvt.resolve(&pool).unwrap();
    assert_eq!(set.id, "irlvt");
    assert_eq!(set.labels[0].id, "header");
    assert_eq!(set.words(), ["w", "x", "y"]);
    let short = LabelNames {
        names: Some(vec!["w".into()]),
        ..irlvt
    };
    assert!(short.resolve(&pool).is_err());
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = quick();
    let json = serde_json::to_string(&cfg).unwrap();
    let back: SuiteConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let minimal: SuiteConfig = serde_json::from_str(r#"{"dataset": {"kind": "funsd", "root": "data/funsd"}}"#).unwrap();
    assert_eq!(minimal.seeds.len(), 6);
    assert!(SuiteConfig { shots: vec![], ..quick() }.validate().is_err());
    assert!(SuiteConfig { seeds: vec![], ..quick() }.validate().is_err());
}

#[test]
fn manifest_is_written_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let path = RunManifest::new("fewshot-suite", &out, &quick()).write().unwrap();
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(m.command, "fewshot-suite");
    let cfg: SuiteConfig = serde_json::from_value(m.config).unwrap();
    assert_eq!(cfg, quick());
}
