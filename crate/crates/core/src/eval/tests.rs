use super::*;

fn tags(s: &str) -> Vec<Tag> {
    s.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

fn chunk(s: usize, e: usize, l: &str) -> Chunk {
    (s, e, l.to_string())
}

#[test]
fn hand_case_half() {
    let gold = entities_to_iobes(4, &[Entity::new(0, 1, "q"), Entity::new(3, 3, "a")]).unwrap();
    let pred = entities_to_iobes(4, &[Entity::new(0, 1, "q"), Entity::new(2, 3, "a")]).unwrap();
    let m = chunk_prf(&[gold], &[pred]).unwrap();
    assert_eq!((m.tp, m.predicted, m.gold), (1, 2, 2));
    assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
}

#[test]
fn trivial_cases() {
    let gold = tags("B-q E-q O S-a");
    let m = chunk_prf(std::slice::from_ref(&gold), std::slice::from_ref(&gold)).unwrap();
    assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    let m = chunk_prf(&[gold], &[tags("O O O O")]).unwrap();
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
}

#[test]
fn permissive_chunking() {
    assert_eq!(extract_chunks(&tags("O I-a I-a O")), vec![chunk(1, 2, "a")]);
    assert_eq!(extract_chunks(&tags("B-a I-b E-b")), vec![chunk(0, 0, "a"), chunk(1, 2, "b")]);
    assert_eq!(extract_chunks(&tags("E-a E-a")), vec![chunk(0, 0, "a"), chunk(1, 1, "a")]);
    assert_eq!(extract_chunks(&tags("B-a B-a")), vec![chunk(0, 0, "a"), chunk(1, 1, "a")]);
    assert_eq!(extract_chunks(&tags("S-a I-a")), vec![chunk(0, 0, "a"), chunk(1, 1, "a")]);
    assert_eq!(extract_chunks(&tags("B-a I-a")), vec![chunk(0, 1, "a")]);
    assert!(extract_chunks(&[]).is_empty());
}

#[test]
fn length_mismatch_names_page() {
    let err = chunk_prf(&[tags("O"), tags("O O")], &[tags("O"), tags("O")]).unwrap_err();
    assert!(err.to_string().contains("page 1"), "{err}");
}

#[test]
fn zero_division_conventions() {
    let m = EntityMetrics::from_counts(0, 0, 0);
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    let m = EntityMetrics::from_counts(0, 3, 0);
    assert_eq!(m.f1, 0.0);
}

#[test]
fn aggregation() {
    let run = |f1| EntityMetrics { f1, ..Default::default() };
    let s = aggregate_runs(&[run(0.4), run(0.6)]).unwrap();
    assert!((s.f1.mean - 0.5).abs() < 1e-15);
    assert!((s.f1.std - 0.1).abs() < 1e-15);
    assert_eq!(aggregate_runs(&[run(0.3)]).unwrap().f1.std, 0.0);
    assert_eq!(aggregate_runs(&[run(0.37); 6]).unwrap().f1.std, 0.0);
    assert!(aggregate_runs(&[]).is_err());
}

#[test]
fn reports_render() {
    let m = EntityMetrics::from_counts(1, 2, 2);
    let r = RunReport::new(
        "synth",
        "orig",
        "default",
        1,
        vec![
            SeedRun {
                seed: 0,
                metrics: Some(m),
                error: None,
            },
            SeedRun {
                seed: 1,
                metrics: None,
                error: Some("boom".into()),
            },
        ],
    );
    assert_eq!(r.summary.unwrap().runs, 1);
    let text = render_text(std::slice::from_ref(&r));
    assert_eq!(text.lines().nth(1).unwrap(), "1  default  50.00±0.00  50.00±0.00  50.00±0.00");
    let csv = render_csv(std::slice::from_ref(&r));
    assert_eq!(csv.lines().nth(1).unwrap(), "1,default,orig,1,50.00,0.00,50.00,0.00,50.00,0.00");
    let json = serde_json::to_string(&r).unwrap();
    let back: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
