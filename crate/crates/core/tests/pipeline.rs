use layout_ner::codec::encode_target;
use layout_ner::decode::{decode_page, DecodeOptions};
use layout_ner::doc::funsd::{load_funsd, FunsdOptions};
use layout_ner::doc::{build_vocab, generate_synthetic_corpus, Entity, SyntheticSpec};
use layout_ner::eval::{evaluate_model, EvalOptions};
use layout_ner::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use layout_ner::train::{train, TrainConfig};
use std::fs;

#[test]
fn two_pages_are_memorized_end_to_end() {
    let mut ds = generate_synthetic_corpus(&SyntheticSpec::forms(), 3).unwrap();
    ds.pages.truncate(2);
    let labels = ds.default_label_set().unwrap();
    let vocab = build_vocab(&ds.pages, &[&labels], 1);
    let model: Model<f32> = Model::new(ModelConfig::tiny(32, 2, 4), vocab, labels.clone(), 0).unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 2,
        steps: 300,
        eval_every: 25,
        ..TrainConfig::default()
    };
    let out = train(model, &ds.pages, &cfg).unwrap();
    assert!(out.best_loss < 0.05, "best loss {}", out.best_loss);

    let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
    let window = |i: usize| losses[i..i + 10].iter().sum::<f64>() / 10.0;
    assert!(window(losses.len() - 10) < 0.1 * window(0));

    let metrics = evaluate_model(&out.model, &ds.pages, &EvalOptions::default()).unwrap();
    assert_eq!(metrics.f1, 1.0);
    for p in &ds.pages {
        let decoded = decode_page(&out.model, p, &DecodeOptions::default()).unwrap();
        assert_eq!(decoded.sequence, encode_target(p, &labels).unwrap());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&out.model, &path).unwrap();
    let back: Model<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(evaluate_model(&back, &ds.pages, &EvalOptions::default()).unwrap(), metrics);
}

type Segment<'a> = (&'a str, &'a [(&'a str, [f64; 4])]);

fn form_json(segments: &[Segment]) -> String {
    let form: Vec<serde_json::Value> = segments
        .iter()
        .enumerate()
        .map(|(id, (label, words))| {
            let words: Vec<serde_json::Value> = words.iter().map(|(t, b)| serde_json::json!({"text": t, "box": b})).collect();
            serde_json::json!({"id": id, "label": label, "text": "", "box": [0, 0, 0, 0], "words": words, "linking": []})
        })
        .collect();
    serde_json::json!({ "form": form }).to_string()
}

#[test]
fn funsd_layout_is_loaded() {
    let root = tempfile::tempdir().unwrap();
    let train = root.path().join("training_data/annotations");
    let test = root.path().join("testing_data/annotations");
    fs::create_dir_all(&train).unwrap();
    fs::create_dir_all(&test).unwrap();
    let a = form_json(&[
        ("header", &[("FORM", [10.0, 10.0, 90.0, 30.0])]),
        (
            "question",
            &[("Date", [10.0, 100.0, 60.0, 120.0]), (":", [60.0, 100.0, 66.0, 120.0])],
        ),
        ("answer", &[("today", [200.0, 100.0, 260.0, 120.0])]),
        ("other", &[("page", [10.0, 180.0, 50.0, 195.0])]),
    ]);
    fs::write(train.join("0001.json"), a).unwrap();
    fs::write(train.join("0001.size.json"), r#"{"width": 400, "height": 200}"#).unwrap();
    let b = form_json(&[("question", &[("Name", [0.0, 0.0, 40.0, 20.0]), ("  ", [40.0, 0.0, 45.0, 20.0])])]);
    fs::write(test.join("0002.json"), b).unwrap();

    let (tr, te) = load_funsd(root.path(), &FunsdOptions::default()).unwrap();
    assert_eq!((tr.len(), te.len()), (1, 1));
    let p = &tr.pages[0];
    assert_eq!((p.width, p.height), (400.0, 200.0));
    let texts: Vec<&str> = p.words.iter().map(|w| w.text.as_str()).collect();
    assert_eq!(texts, ["FORM", "Date", ":", "today", "page"]);
    assert_eq!(p.words[3].bbox.coords(), [500, 500, 650, 600]);
    assert_eq!(
        p.entities,
        vec![
            Entity::new(0, 0, "header"),
            Entity::new(1, 2, "question"),
            Entity::new(3, 3, "answer")
        ]
    );
    assert_eq!(tr.mean_entities_per_page(), 3.0);
    let q = &te.pages[0];
    assert_eq!(q.words.len(), 1);
    assert_eq!((q.width, q.height), (1000.0, 1000.0));
}
