use serde::Serialize;

use super::{Boundary, Control, TargetSequence, TargetToken};
use crate::doc::{Entity, LabelSet, Page};

/// One repair made while reading a malformed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub at: usize,
    pub kind: &'static str,
    pub detail: String,
}

enum Mode {
    Outside,
    Entity(Vec<usize>),
    Label(Vec<usize>, Vec<String>),
}

struct Reader<'a> {
    labels: &'a LabelSet,
    n_words: usize,
    entities: Vec<Entity>,
    diags: Vec<Diagnostic>,
}

impl Reader<'_> {
    fn note(&mut self, at: usize, kind: &'static str, detail: impl Into<String>) {
        self.diags.push(Diagnostic {
            at,
            kind,
            detail: detail.into(),
        });
    }

    /// Close an entity whose label words are `words`.
    fn finish(&mut self, at: usize, positions: Vec<usize>, words: Vec<String>) {
        let label = match self.labels.exact(&words) {
            Some(l) => l,
            None => match longest_prefix_label(self.labels, &words) {
                Some(l) => {
                    self.note(
                        at,
                        "label-repaired",
                        format!("`{}` read as `{}`", words.join(" "), self.labels.get(l).id),
                    );
                    l
                }
                None => {
                    self.note(
                        at,
                        "unknown-label",
                        format!("`{}` matches no label; entity dropped", words.join(" ")),
                    );
                    return;
                }
            },
        };
        let start = *positions.iter().min().unwrap();
        let end = *positions.iter().max().unwrap();
        if positions.windows(2).any(|w| w[1] != w[0] + 1) {
            self.note(
                at,
                "non-contiguous-entity",
                format!("positions {positions:?} read as [{start}, {end}]"),
            );
        }
        self.entities.push(Entity::new(start, end, self.labels.get(label).id.clone()));
    }
}

/// Label sharing the longest leading run of words with `words`; ties go to
/// the earlier label, and no shared word means no match.
fn longest_prefix_label(labels: &LabelSet, words: &[String]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, l) in labels.labels.iter().enumerate() {
        let common = l.name.iter().zip(words).take_while(|(a, b)| a == b).count();
        if common > 0 && best.is_none_or(|(_, c)| common > c) {
            best = Some((i, common));
        }
    }
    best.map(|(i, _)| i)
}

/// Entities encoded in `seq`. Never fails; every repair is reported.
pub fn decode_entities(seq: &TargetSequence, page: &Page, labels: &LabelSet) -> (Vec<Entity>, Vec<Diagnostic>) {
    let mut r = Reader {
        labels,
        n_words: page.words.len(),
        entities: Vec::new(),
        diags: Vec::new(),
    };
    let mut mode = Mode::Outside;
    let mut ended = false;
    for (at, &tok) in seq.tokens.iter().enumerate() {
        if ended {
            r.note(
                at,
                "trailing-tokens",
                format!("{} tokens after [EOS] ignored", seq.tokens.len() - at),
            );
            break;
        }
        mode = match (mode, tok) {
            (m, TargetToken::Control(Control::Sos)) => {
                if at != 0 {
                    r.note(at, "stray-token", "[SOS] ignored");
                }
                m
            }
            (m, TargetToken::SourceRef(p)) if p >= r.n_words => {
                r.note(at, "source-out-of-range", format!("#{p} ignored"));
                m
            }
            (Mode::Outside, TargetToken::SourceRef(_)) => Mode::Outside,
            (Mode::Entity(mut ps), TargetToken::SourceRef(p)) => {
                ps.push(p);
                Mode::Entity(ps)
            }
            (Mode::Label(ps, ws), TargetToken::SourceRef(_)) => {
                r.note(at, "missing-terminator", "source word inside a label name");
                r.finish(at, ps, ws);
                Mode::Outside
            }
            (m, TargetToken::Boundary(Boundary::B)) => {
                match m {
                    Mode::Outside => {}
                    Mode::Entity(_) => r.note(at, "unterminated-entity", "[B] inside an entity; open entity dropped"),
                    Mode::Label(ps, ws) => {
                        r.note(at, "missing-terminator", "[B] inside a label name");
                        r.finish(at, ps, ws);
                    }
                }
                Mode::Entity(Vec::new())
            }
            (Mode::Entity(ps), TargetToken::Boundary(Boundary::E)) if ps.is_empty() => {
                r.note(at, "empty-entity", "[B] [E] without words");
                Mode::Outside
            }
            (Mode::Entity(ps), TargetToken::Boundary(Boundary::E)) => Mode::Label(ps, Vec::new()),
            (m, TargetToken::Boundary(Boundary::E)) => {
                r.note(at, "stray-token", "[E] outside an entity ignored");
                m
            }
            (Mode::Label(ps, mut ws), TargetToken::LabelWord { label, idx }) => {
                match labels.labels.get(label).and_then(|l| l.name.get(idx)) {
                    Some(w) => ws.push(w.clone()),
                    None => r.note(at, "stray-token", format!("unknown label word {label}.{idx} ignored")),
                }
                Mode::Label(ps, ws)
            }
            (m, TargetToken::LabelWord { .. }) => {
                r.note(at, "stray-token", "label word outside a label name ignored");
                m
            }
            (Mode::Label(ps, ws), TargetToken::Boundary(Boundary::T)) => {
                r.finish(at, ps, ws);
                Mode::Outside
            }
            (m, TargetToken::Boundary(Boundary::T)) => {
                r.note(at, "stray-token", "[T] outside a label name ignored");
                m
            }
            (m, TargetToken::Control(Control::Eos)) => {
                ended = true;
                match m {
                    Mode::Outside => {}
                    Mode::Entity(_) => r.note(at, "unterminated-entity", "[EOS] inside an entity; entity dropped"),
                    Mode::Label(ps, ws) => {
                        r.note(at, "missing-terminator", "[EOS] inside a label name");
                        r.finish(at, ps, ws);
                    }
                }
                Mode::Outside
            }
        };
    }
    if !ended {
        let at = seq.tokens.len();
        r.note(at, "missing-eos", "sequence ends without [EOS]");
        match mode {
            Mode::Outside => {}
            Mode::Entity(_) => r.note(at, "unterminated-entity", "open entity dropped"),
            Mode::Label(ps, ws) => {
                r.note(at, "missing-terminator", "sequence ends inside a label name");
                r.finish(at, ps, ws);
            }
        }
    }
    let mut entities = std::mem::take(&mut r.entities);
    entities.sort_by_key(|e| (e.start, e.end));
    let mut kept: Vec<Entity> = Vec::with_capacity(entities.len());
    for e in entities {
        if kept.last().is_some_and(|k| k.end >= e.start) {
            r.note(
                seq.tokens.len(),
                "overlapping-entity",
                format!("[{}, {}] {} dropped", e.start, e.end, e.label),
            );
        } else {
            kept.push(e);
        }
    }
    (kept, r.diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_target;
    use crate::codec::TargetToken as Tk;
    use crate::doc::BoundingBox;

    fn page(n: usize, entities: Vec<Entity>) -> Page {
        let b = BoundingBox::new(0, 0, 1, 1).unwrap();
        Page::new("p", 1.0, 1.0, (0..n).map(|i| (format!("w{i}"), b)).collect(), entities).unwrap()
    }

    #[test]
    fn inverse_of_encode() {
        let ls = LabelSet::funsd();
        let p = page(5, vec![Entity::new(0, 1, "question"), Entity::new(3, 3, "answer")]);
        let (ents, diags) = decode_entities(&encode_target(&p, &ls).unwrap(), &p, &ls);
        assert_eq!(ents, p.entities);
        assert!(diags.is_empty());
    }

    #[test]
    fn unterminated_entity_is_dropped() {
        let ls = LabelSet::funsd();
        let p = page(2, vec![]);
        let seq = TargetSequence::new(vec![Tk::SOS, Tk::SourceRef(0), Tk::B, Tk::SourceRef(1), Tk::EOS]);
        let (ents, diags) = decode_entities(&seq, &p, &ls);
        assert!(ents.is_empty());
        assert_eq!(diags.iter().map(|d| d.kind).collect::<Vec<_>>(), vec!["unterminated-entity"]);
    }

    #[test]
    fn label_is_repaired_by_longest_prefix() {
        let ls = LabelSet::new("x", &[("a", "sub total"), ("b", "sub"), ("c", "total")]).unwrap();
        let p = page(1, vec![]);
        let seq = TargetSequence::new(vec![
            Tk::SOS,
            Tk::B,
            Tk::SourceRef(0),
            Tk::E,
            Tk::LabelWord { label: 0, idx: 0 },
            Tk::LabelWord { label: 0, idx: 1 },
            Tk::LabelWord { label: 2, idx: 0 },
            Tk::EOS,
        ]);
        let (ents, diags) = decode_entities(&seq, &p, &ls);
        assert_eq!(ents, vec![Entity::new(0, 0, "a")]);
        let kinds: Vec<_> = diags.iter().map(|d| d.kind).collect();
        assert_eq!(kinds, vec!["missing-terminator", "label-repaired"]);
    }

    #[test]
    fn empty_sequence_gives_no_entities() {
        let ls = LabelSet::funsd();
        let p = page(1, vec![]);
        let (ents, _) = decode_entities(&TargetSequence::new(vec![Tk::SOS, Tk::SourceRef(0), Tk::EOS]), &p, &ls);
        assert!(ents.is_empty());
    }
}
