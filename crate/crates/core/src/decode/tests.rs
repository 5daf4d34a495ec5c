use super::*;
use crate::codec::{decode_entities, encode_target, validate_sequence};
use crate::doc::{build_vocab, generate_synthetic_corpus, BoundingBox, Entity, LabelSet, SyntheticSpec};
use crate::model::ModelConfig;

fn page(n: usize, entities: Vec<Entity>) -> Page {
    let words = (0..n)
        .map(|i| {
            let x = (i % 8) as u16 * 100;
            let y = (i / 8) as u16 * 30;
            (format!("w{}", i % 5), BoundingBox::new(x, y, x + 80, y + 20).unwrap())
        })
        .collect();
    Page::new("p", 1000.0, 1000.0, words, entities).unwrap()
}

fn model<T: Real>(p: &Page, labels: LabelSet, seed: u64) -> Model<T> {
    let vocab = build_vocab([p], &[&labels], 1);
    Model::new(ModelConfig::tiny(16, 2, 4), vocab, labels, seed).unwrap()
}

fn check_cache_against_tape<T: Real>(tol: f64) {
    let p = page(6, vec![Entity::new(1, 2, "question"), Entity::new(4, 4, "answer")]);
    let mut m: Model<T> = model(&p, LabelSet::funsd(), 3);
    // larger weights make mismatches visible
    for e in m.params.entries_mut() {
        if e.name.starts_with("layer") && !e.name.contains("ln") {
            e.tensor.data_mut().iter_mut().for_each(|v| *v = *v * T::of(10.0));
        }
    }
    let seq = encode_target(&p, &m.labels).unwrap();
    let inputs = &seq.tokens[..seq.len() - 1];
    let batch = m.pack_prefix(&p, inputs).unwrap();
    let mut tape = m.tape();
    let fwd = m.forward(&mut tape, &batch, None).unwrap();
    let out = m.output(&mut tape, fwd, &batch).unwrap();
    let full = tape.tensor(fwd.hidden);
    let mut engine = Engine::new(&m, &p).unwrap();
    for (k, &tok) in inputs.iter().enumerate() {
        let h = engine.push(tok).unwrap();
        for (a, b) in h.iter().zip(full.row(p.len() + k)) {
            assert!((a.as_f64() - b.as_f64()).abs() < tol, "position {k}: {a} vs {b}");
        }
        let s = engine.scores(&h);
        let g = tape.value(out.gate)[k].as_f64();
        assert!((s.gate_logit.as_f64() - g).abs() < tol * 10.0);
    }
}

#[test]
fn cached_hidden_states_match_full_forward() {
    check_cache_against_tape::<f32>(1e-5);
    check_cache_against_tape::<f64>(1e-10);
}

#[test]
fn cached_and_uncached_decoding_are_identical() {
    let spec = SyntheticSpec::forms();
    let ds = generate_synthetic_corpus(&spec, 5).unwrap();
    let labels = ds.default_label_set().unwrap();
    let vocab = build_vocab(&ds.pages, &[&labels], 1);
    let m: Model<f32> = Model::new(ModelConfig::tiny(16, 2, 4), vocab, labels, 1).unwrap();
    let p = &ds.pages[0];
    let cached = DecodeOptions::default();
    let uncached = DecodeOptions {
        use_cache: false,
        ..DecodeOptions::default()
    };
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    let a = decode_page_traced(&m, p, &cached, &mut ta).unwrap();
    let b = decode_page_traced(&m, p, &uncached, &mut tb).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn admissible_sets() {
    let p = page(2, vec![]);
    let m: Model<f32> = model(&p, LabelSet::cord_lv1(), 0);
    let mut s = DecodeState::new(&m, &p, &DecodeOptions::default()).unwrap();
    assert_eq!(s.admissible(), vec![Candidate::Source(0), Candidate::Special(SPECIAL_B)]);
    for t in [TargetToken::B, TargetToken::SourceRef(0), TargetToken::E] {
        s.force(t).unwrap();
    }
    let void = m.label_word_row("void").unwrap();
    s.force(m.special_token(void, &[])).unwrap();
    assert_eq!(s.admissible(), vec![Candidate::Special(SPECIAL_T)]);
    s.force(TargetToken::T).unwrap();
    s.force(TargetToken::SourceRef(1)).unwrap();
    assert_eq!(s.admissible(), vec![Candidate::Special(SPECIAL_EOS)]);
    let full = DecodeState::new(&m, &p, &DecodeOptions::unconstrained()).unwrap();
    assert_eq!(full.admissible().len(), 2 + m.num_special_candidates());
}

#[test]
fn restricted_argmax_is_renormalization_invariant() {
    let p = page(5, vec![]);
    let m: Model<f64> = model(&p, LabelSet::funsd(), 4);
    let s = DecodeState::new(&m, &p, &DecodeOptions::default()).unwrap();
    let d = s.distribution();
    let cands = s.admissible();
    let total: f64 = cands.iter().map(|&c| d.prob(c)).sum();
    let raw = cands.iter().copied().max_by(|a, b| d.prob(*a).total_cmp(&d.prob(*b))).unwrap();
    let renorm = cands
        .iter()
        .copied()
        .max_by(|a, b| (d.prob(*a) / total).total_cmp(&(d.prob(*b) / total)))
        .unwrap();
    assert_eq!(raw, renorm);
}

#[test]
fn copy_biased_model_emits_plain_words() {
    let p = page(7, vec![]);
    let mut m: Model<f32> = model(&p, LabelSet::funsd(), 5);
    let gb = m.ids.gate_b;
    m.params.get_mut(gb).data_mut()[0] = 50.0;
    let out = decode_page(&m, &p, &DecodeOptions::default()).unwrap();
    let expect: Vec<TargetToken> = std::iter::once(TargetToken::SOS)
        .chain((0..7).map(TargetToken::SourceRef))
        .chain(std::iter::once(TargetToken::EOS))
        .collect();
    assert_eq!(out.sequence.tokens, expect);
    assert!(!out.truncated);
}

#[test]
fn random_models_always_produce_valid_sequences() {
    let p = page(9, vec![]);
    let labels = LabelSet::cord_lv1();
    for seed in 0..20 {
        let mut m: Model<f32> = model(&p, labels.clone(), seed);
        for e in m.params.entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v *= 50.0);
        }
        let out = decode_page(&m, &p, &DecodeOptions::default()).unwrap();
        validate_sequence(&out.sequence, &labels, p.len()).unwrap();
        let (_, diags) = decode_entities(&out.sequence, &p, &labels);
        assert!(diags.is_empty(), "{diags:?}");
    }
}

#[test]
fn unconstrained_decoding_terminates() {
    let p = page(4, vec![]);
    let mut m: Model<f32> = model(&p, LabelSet::funsd(), 6);
    let gb = m.ids.gate_b;
    m.params.get_mut(gb).data_mut()[0] = -50.0;
    let opts = DecodeOptions {
        max_steps: Some(10),
        ..DecodeOptions::unconstrained()
    };
    let out = decode_page(&m, &p, &opts).unwrap();
    assert!(out.steps <= 10);
    let _ = decode_entities(&out.sequence, &p, &m.labels);
}

#[test]
fn greedy_decoding_is_deterministic() {
    let p = page(12, vec![]);
    let m: Model<f32> = model(&p, LabelSet::funsd(), 7);
    let a = decode_page(&m, &p, &DecodeOptions::default()).unwrap();
    let b = decode_page(&m, &p, &DecodeOptions::default()).unwrap();
    assert_eq!(a, b);
}
