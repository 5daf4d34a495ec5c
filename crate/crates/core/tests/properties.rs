use proptest::prelude::*;

use layout_ner::codec::{decode_entities, encode_target, entities_to_iobes, iobes_tagset, validate_sequence, Tag, TargetToken};
use layout_ner::doc::{normalize_bbox, BoundingBox, Dataset, Entity, LabelSet, Page, COORD_MAX};
use layout_ner::eval::{chunk_prf, extract_chunks};

const LABELS: [&str; 3] = ["header", "question", "answer"];

/// Page from segments: kind 0 is `len` plain words, otherwise an entity.
fn page_from(segments: &[(usize, usize)]) -> Page {
    let mut words = Vec::new();
    let mut entities = Vec::new();
    for &(kind, len) in segments {
        let start = words.len();
        for _ in 0..len {
            let i = words.len() as u16;
            words.push((
                format!("w{i}"),
                BoundingBox::new(i % 10 * 90, i / 10 * 30, i % 10 * 90 + 80, i / 10 * 30 + 20).unwrap(),
            ));
        }
        if kind > 0 {
            entities.push(Entity::new(start, words.len() - 1, LABELS[kind - 1]));
        }
    }
    Page::new("p", 1000.0, 1000.0, words, entities).unwrap()
}

fn segments() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..4, 1usize..4), 1..10)
}

fn tag_seq() -> impl Strategy<Value = Vec<Tag>> {
    let tag = prop_oneof![
        Just(Tag::O),
        (0usize..2).prop_map(|l| Tag::B(LABELS[l].into())),
        (0usize..2).prop_map(|l| Tag::I(LABELS[l].into())),
        (0usize..2).prop_map(|l| Tag::E(LABELS[l].into())),
        (0usize..2).prop_map(|l| Tag::S(LABELS[l].into())),
    ];
    prop::collection::vec(tag, 0..16)
}

proptest! {
    #[test]
    fn codec_round_trip(segs in segments()) {
        let page = page_from(&segs);
        let labels = LabelSet::funsd();
        let seq = encode_target(&page, &labels).unwrap();
        prop_assert!(validate_sequence(&seq, &labels, page.len()).is_ok());
        let (entities, diags) = decode_entities(&seq, &page, &labels);
        prop_assert!(diags.is_empty());
        prop_assert_eq!(entities, page.entities.clone());
        let copies = seq.tokens.iter().filter(|t| matches!(t, TargetToken::SourceRef(_))).count();
        prop_assert_eq!(copies, page.len());
    }

    #[test]
    fn multi_word_label_names_round_trip(segs in segments()) {
        let page = page_from(&segs);
        let labels = LabelSet::funsd().renamed("long", &["page title", "field name", "field value"]).unwrap();
        let seq = encode_target(&page, &labels).unwrap();
        prop_assert!(validate_sequence(&seq, &labels, page.len()).is_ok());
        prop_assert_eq!(decode_entities(&seq, &page, &labels).0, page.entities.clone());
    }

    #[test]
    fn iobes_chunks_recover_entities(segs in segments()) {
        let page = page_from(&segs);
        let tags = entities_to_iobes(page.len(), &page.entities).unwrap();
        prop_assert_eq!(tags.len(), page.len());
        let chunks: Vec<Entity> = extract_chunks(&tags).into_iter().map(|(s, e, l)| Entity::new(s, e, l)).collect();
        prop_assert_eq!(chunks, page.entities.clone());
    }

    #[test]
    fn tagset_size_law(t in 1usize..=16) {
        let ids: Vec<String> = (0..t).map(|i| format!("l{i}")).collect();
        let set = LabelSet::from_ids("x", &ids).unwrap();
        prop_assert_eq!(iobes_tagset(&set).len(), 4 * t + 1);
    }

    #[test]
    fn chunk_scores_swap_precision_and_recall(g in tag_seq(), seed in any::<u64>()) {
        let mut p = g.clone();
        let n = p.len();
        if n > 0 {
            p.swap(seed as usize % n, (seed >> 32) as usize % n);
            p[(seed >> 16) as usize % n] = Tag::O;
        }
        let a = chunk_prf(std::slice::from_ref(&g), &[p.clone()]).unwrap();
        let b = chunk_prf(&[p], &[g]).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn micro_scores_ignore_page_order(pages in prop::collection::vec((tag_seq(), any::<u64>()), 1..6)) {
        let gold: Vec<Vec<Tag>> = pages.iter().map(|(t, _)| t.clone()).collect();
        let pred: Vec<Vec<Tag>> = pages.iter().map(|(t, s)| t.iter().rev().cycle().skip(*s as usize % 3).take(t.len()).cloned().collect()).collect();
        let a = chunk_prf(&gold, &pred).unwrap();
        let rg: Vec<Vec<Tag>> = gold.iter().rev().cloned().collect();
        let rp: Vec<Vec<Tag>> = pred.iter().rev().cloned().collect();
        prop_assert_eq!(a, chunk_prf(&rg, &rp).unwrap());
        let merged = gold.iter().zip(&pred).fold(None, |acc: Option<layout_ner::eval::EntityMetrics>, (g, p)| {
            let m = chunk_prf(std::slice::from_ref(g), std::slice::from_ref(p)).unwrap();
            Some(acc.map_or(m, |a| a.merge(&m)))
        }).unwrap();
        prop_assert_eq!(a, merged);
    }

    #[test]
    fn tags_round_trip_through_strings(tags in tag_seq()) {
        for t in tags {
            prop_assert_eq!(t.to_string().parse::<Tag>().unwrap(), t);
        }
    }

    #[test]
    fn normalized_boxes_stay_in_range(
        x in 0.0f64..5000.0, y in 0.0f64..5000.0, w in 0.0f64..3000.0, h in 0.0f64..3000.0,
        pw in 1.0f64..5000.0, ph in 1.0f64..5000.0,
    ) {
        let b = normalize_bbox([x, y, x + w, y + h], pw, ph).unwrap();
        prop_assert!(b.x0 <= b.x1 && b.y0 <= b.y1);
        prop_assert!(b.x1 <= COORD_MAX && b.y1 <= COORD_MAX);
    }

    #[test]
    fn inverted_boxes_are_rejected(x in 1.0f64..500.0, d in 0.5f64..100.0) {
        prop_assert!(normalize_bbox([x + d, 0.0, x, 10.0], 1000.0, 1000.0).is_err());
    }

    #[test]
    fn dataset_json_round_trip(segs in segments()) {
        let page = page_from(&segs);
        let ds = Dataset::new("p", LABELS.iter().map(|s| s.to_string()).collect(), vec![page]);
        let back = Dataset::from_json(&ds.to_json(), std::path::Path::new("<mem>")).unwrap();
        prop_assert_eq!(back, ds);
    }
}
