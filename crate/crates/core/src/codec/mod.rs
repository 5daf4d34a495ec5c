//! Entity spans as generated token streams, and back.
//!
//! Each entity `w_i..w_j` with label `τ` is written as
//! `[B] w_i .. w_j [E] τ_1 .. τ_k [T]`; other words are copied as-is and the
//! stream is framed by `[SOS]` / `[EOS]`. Word tokens point at page positions
//! rather than carrying text.

mod decode;
mod grammar;
mod iobes;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::doc::{check_entities, LabelSet, Page};
use crate::error::{Error, Result};

pub use decode::{decode_entities, Diagnostic};
pub use grammar::{validate_sequence, Allowed, Grammar, GrammarState, Violation};
pub use iobes::{entities_to_iobes, iobes_tagset, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    B,
    E,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Sos,
    Eos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetToken {
    SourceRef(usize),
    Boundary(Boundary),
    /// Word `idx` of the surface name of label `label`.
    LabelWord {
        label: usize,
        idx: usize,
    },
    Control(Control),
}

impl TargetToken {
    pub const B: TargetToken = TargetToken::Boundary(Boundary::B);
    pub const E: TargetToken = TargetToken::Boundary(Boundary::E);
    pub const T: TargetToken = TargetToken::Boundary(Boundary::T);
    pub const SOS: TargetToken = TargetToken::Control(Control::Sos);
    pub const EOS: TargetToken = TargetToken::Control(Control::Eos);

    /// Text form; label words and source words are resolved when context is given.
    pub fn render(&self, page: Option<&Page>, labels: Option<&LabelSet>) -> String {
        match *self {
            TargetToken::SourceRef(p) => match page.and_then(|pg| pg.words.get(p)) {
                Some(w) => w.text.clone(),
                None => format!("#{p}"),
            },
            TargetToken::Boundary(Boundary::B) => "[B]".into(),
            TargetToken::Boundary(Boundary::E) => "[E]".into(),
            TargetToken::Boundary(Boundary::T) => "[T]".into(),
            TargetToken::Control(Control::Sos) => "[SOS]".into(),
            TargetToken::Control(Control::Eos) => "[EOS]".into(),
            TargetToken::LabelWord { label, idx } => labels
                .and_then(|ls| ls.labels.get(label))
                .and_then(|l| l.name.get(idx))
                .cloned()
                .unwrap_or_else(|| format!("<label {label}.{idx}>")),
        }
    }
}

impl fmt::Display for TargetToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(None, None))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TargetSequence {
    pub tokens: Vec<TargetToken>,
}

impl TargetSequence {
    pub fn new(tokens: Vec<TargetToken>) -> Self {
        TargetSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined tokens including `[SOS]` and `[EOS]`.
    pub fn render(&self, page: &Page, labels: &LabelSet) -> String {
        self.render_tokens(&self.tokens, page, labels)
    }

    /// Space-joined tokens without the framing controls.
    pub fn render_body(&self, page: &Page, labels: &LabelSet) -> String {
        let body: Vec<TargetToken> = self
            .tokens
            .iter()
            .copied()
            .filter(|t| !matches!(t, TargetToken::Control(_)))
            .collect();
        self.render_tokens(&body, page, labels)
    }

    fn render_tokens(&self, tokens: &[TargetToken], page: &Page, labels: &LabelSet) -> String {
        tokens
            .iter()
            .map(|t| t.render(Some(page), Some(labels)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Target stream of a page's gold entities.
pub fn encode_target(page: &Page, labels: &LabelSet) -> Result<TargetSequence> {
    check_entities(&page.entities, page.words.len())?;
    let mut tokens = Vec::with_capacity(page.words.len() + 4 * page.entities.len() + 2);
    tokens.push(TargetToken::SOS);
    let mut next = 0;
    for e in &page.entities {
        let label = labels
            .index_of(&e.label)
            .ok_or_else(|| Error::Validation(format!("page {}: label `{}` not in label set `{}`", page.id, e.label, labels.id)))?;
        tokens.extend((next..e.start).map(TargetToken::SourceRef));
        tokens.push(TargetToken::B);
        tokens.extend((e.start..=e.end).map(TargetToken::SourceRef));
        tokens.push(TargetToken::E);
        tokens.extend((0..labels.get(label).name.len()).map(|idx| TargetToken::LabelWord { label, idx }));
        tokens.push(TargetToken::T);
        next = e.end + 1;
    }
    tokens.extend((next..page.words.len()).map(TargetToken::SourceRef));
    tokens.push(TargetToken::EOS);
    Ok(TargetSequence { tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{BoundingBox, Entity};

    pub(crate) fn page(words: &[&str], entities: Vec<Entity>) -> Page {
        let b = BoundingBox::new(0, 0, 1, 1).unwrap();
        Page::new("p", 1000.0, 1000.0, words.iter().map(|w| (w.to_string(), b)).collect(), entities).unwrap()
    }

    #[test]
    fn encodes_the_reference_example() {
        let labels = LabelSet::funsd();
        let p = page(
            &["Sender", "Charles", "Duggan"],
            vec![Entity::new(0, 0, "question"), Entity::new(1, 2, "answer")],
        );
        let seq = encode_target(&p, &labels).unwrap();
        assert_eq!(
            seq.render_body(&p, &labels),
            "[B] Sender [E] question [T] [B] Charles Duggan [E] answer [T]"
        );
        assert_eq!(seq.tokens.first(), Some(&TargetToken::SOS));
        assert_eq!(seq.tokens.last(), Some(&TargetToken::EOS));
    }

    #[test]
    fn plain_page() {
        let labels = LabelSet::funsd();
        let p = page(&["a", "b"], vec![]);
        let seq = encode_target(&p, &labels).unwrap();
        assert_eq!(seq.render(&p, &labels), "[SOS] a b [EOS]");
    }

    #[test]
    fn unknown_label_is_an_error() {
        let p = page(&["a"], vec![Entity::new(0, 0, "menu")]);
        assert!(encode_target(&p, &LabelSet::funsd()).is_err());
    }
}
