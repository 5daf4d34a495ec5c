use super::*;
use crate::doc::{build_vocab, LabelSet, Page};
use crate::model::ModelConfig;

fn model(seed: u64) -> Model<f64> {
    let labels = LabelSet::funsd();
    let vocab = build_vocab(std::iter::empty::<&Page>(), &[&labels], 1);
    Model::new(ModelConfig::tiny(32, 1, 4), vocab, labels, seed).unwrap()
}

#[test]
fn dimensions_follow_stride() {
    let m = model(0);
    for (stride, n) in [(10, 101), (7, 143), (1000, 2), (300, 4)] {
        let g = spatial_similarity_grid(&m, "header", stride).unwrap();
        assert_eq!(g.values.len(), n);
        assert!(g.values.iter().all(|r| r.len() == n));
        assert!(g.values.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert!(spatial_similarity_grid(&m, "header", 0).is_err());
    assert!(spatial_similarity_grid(&m, "header", 1001).is_err());
    assert!(spatial_similarity_grid(&m, "footer", 10).is_err());
}

#[test]
fn self_similarity_is_one() {
    let v = [0.3, -1.2, 2.0];
    let g = SimilarityGrid::from_fn("x", 500, |x, _| if x == 0 { cosine(&v, &v) } else { cosine(&v, &[0.0; 3]) }).unwrap();
    assert!((g.values[0][0] - 1.0).abs() < 1e-15);
    assert_eq!(g.values[0][1], 0.0);
    assert_eq!(g.zero_norm_cells, 6);
}

#[test]
fn random_init_is_near_orthogonal() {
    for seed in 0..5 {
        let g = spatial_similarity_grid(&model(seed), "question", 20).unwrap();
        assert!(g.mean().abs() < 0.2, "seed {seed}: {}", g.mean());
    }
}

#[test]
fn scale_invariance() {
    let m = model(3);
    let before = spatial_similarity_grid(&m, "answer", 25).unwrap();
    let mut scaled = m.clone();
    for id in [m.ids.x0, m.ids.y0, m.ids.x1, m.ids.y1] {
        scaled.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= 7.5);
    }
    let after = spatial_similarity_grid(&scaled, "answer", 25).unwrap();
    for (a, b) in before.values.iter().flatten().zip(after.values.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn y_grid(stride: usize) -> SimilarityGrid {
    SimilarityGrid::from_fn("y", stride, |_, y| Some(y as f64)).unwrap()
}

#[test]
fn region_contrast_cases() {
    let g = y_grid(10);
    let top = Region::band(0, 300);
    let bottom = Region::band(700, 1001);
    assert_eq!(region_contrast(&g, &top, &top).unwrap().difference, 0.0);
    let c = region_contrast(&g, &top, &bottom).unwrap();
    assert!((c.mean_a - 145.0).abs() < 1e-9);
    assert!((c.mean_b - 850.0).abs() < 1e-9);
    assert!((c.difference + 705.0).abs() < 1e-9);
    let flat = SimilarityGrid::from_fn("c", 10, |_, _| Some(0.25)).unwrap();
    assert_eq!(region_contrast(&flat, &top, &bottom).unwrap().difference, 0.0);
    assert!(region_contrast(&g, &Region::new(1, 1, 5, 5), &top).is_err());
}

#[test]
fn pixel_mapping() {
    assert_eq!(pixel(-1.0), 0);
    assert_eq!(pixel(0.0), 128);
    assert_eq!(pixel(1.0), 255);
    let g = SimilarityGrid::from_fn("one", 1000, |_, _| Some(1.0)).unwrap();
    let pgm = grid_to_pgm(&g);
    assert_eq!(&pgm[..11], b"P5\n2 2\n255\n");
    assert_eq!(&pgm[11..], &[255; 4]);
}

#[test]
fn csv_round_trip_and_files() {
    let g = spatial_similarity_grid(&model(1), "question", 50).unwrap();
    let (coords, values) = parse_grid_csv(&grid_to_csv(&g)).unwrap();
    assert_eq!(coords, g.coords);
    for (a, b) in values.iter().flatten().zip(g.values.iter().flatten()) {
        assert!((a - b).abs() <= 5e-7);
    }
    let dir = tempfile::tempdir().unwrap();
    let csv = emit_grid(&g, dir.path(), GridFormat::Csv).unwrap();
    let pgm = emit_grid(&g, dir.path(), GridFormat::Pgm).unwrap();
    assert_eq!(csv.file_name().unwrap(), "question_50.csv");
    assert_eq!(pgm.file_name().unwrap(), "question_50.pgm");
    assert_eq!(std::fs::read(pgm).unwrap().len(), 12 + 21 * 21 - 1 + 1 + 1);
}

#[test]
fn one_grid_per_label() {
    let grids = label_grids(&model(2), 100, Exec::default()).unwrap();
    let names: Vec<&str> = grids.iter().map(|g| g.label.as_str()).collect();
    assert_eq!(names, ["header", "question", "answer"]);
}
