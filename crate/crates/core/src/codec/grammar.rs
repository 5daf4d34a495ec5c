use std::fmt;

use serde::Serialize;

use super::{Boundary, Control, TargetSequence, TargetToken};
use crate::doc::LabelSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum GrammarState {
    Start,
    Outside,
    /// Inside `[B] ..`, with the number of source words seen so far.
    InEntity {
        words: usize,
    },
    /// After `[E]`, with the label words seen so far.
    InLabel(Vec<String>),
    Done,
}

impl fmt::Display for GrammarState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarState::Start => f.write_str("start"),
            GrammarState::Outside => f.write_str("outside"),
            GrammarState::InEntity { .. } => f.write_str("in-entity"),
            GrammarState::InLabel(p) if p.is_empty() => f.write_str("in-label"),
            GrammarState::InLabel(p) => write!(f, "in-label({})", p.join(" ")),
            GrammarState::Done => f.write_str("done"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Token index.
    pub at: usize,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at token {}: {}", self.kind, self.at, self.detail)
    }
}

/// Tokens admissible in the current state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Allowed {
    pub sos: bool,
    /// The only admissible source position, if any.
    pub source: Option<usize>,
    pub b: bool,
    pub e: bool,
    pub t: bool,
    pub eos: bool,
    /// Label-name words that extend the current prefix.
    pub label_words: Vec<String>,
}

impl Allowed {
    pub fn is_empty(&self) -> bool {
        !self.sos && self.source.is_none() && !self.b && !self.e && !self.t && !self.eos && self.label_words.is_empty()
    }
}

/// Automaton over target tokens for one page.
///
/// Source references must be strictly increasing and cover every position,
/// so in a valid prefix the only admissible source token is the next one.
#[derive(Debug, Clone)]
pub struct Grammar<'a> {
    labels: &'a LabelSet,
    n_source: usize,
    state: GrammarState,
    last: Option<usize>,
    consumed: usize,
    at: usize,
}

impl<'a> Grammar<'a> {
    pub fn new(labels: &'a LabelSet, n_source: usize) -> Self {
        Grammar {
            labels,
            n_source,
            state: GrammarState::Start,
            last: None,
            consumed: 0,
            at: 0,
        }
    }

    pub fn state(&self) -> &GrammarState {
        &self.state
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn is_done(&self) -> bool {
        self.state == GrammarState::Done
    }

    /// Leftmost position after the last consumed one.
    pub fn next_source(&self) -> Option<usize> {
        let next = self.last.map_or(0, |l| l + 1);
        (next < self.n_source).then_some(next)
    }

    pub fn allowed(&self) -> Allowed {
        let next = self.next_source();
        match &self.state {
            GrammarState::Start => Allowed {
                sos: true,
                ..Allowed::default()
            },
            GrammarState::Outside => Allowed {
                source: next,
                b: next.is_some(),
                eos: next.is_none(),
                ..Allowed::default()
            },
            GrammarState::InEntity { words } => Allowed {
                source: next,
                e: *words > 0,
                ..Allowed::default()
            },
            GrammarState::InLabel(prefix) => {
                let mut label_words: Vec<String> = Vec::new();
                for (_, l) in self.labels.with_prefix(prefix) {
                    if let Some(w) = l.name.get(prefix.len()) {
                        if !label_words.contains(w) {
                            label_words.push(w.clone());
                        }
                    }
                }
                Allowed {
                    t: self.labels.exact(prefix).is_some(),
                    label_words,
                    ..Allowed::default()
                }
            }
            GrammarState::Done => Allowed::default(),
        }
    }

    fn violation(&self, kind: &'static str, detail: impl Into<String>) -> Violation {
        Violation {
            at: self.at,
            kind,
            detail: detail.into(),
        }
    }

    /// Advance by one token. On a violation the token is not applied, except
    /// where the state can be repaired unambiguously.
    pub fn step(&mut self, tok: TargetToken) -> Result<(), Violation> {
        let r = self.apply(tok);
        self.at += 1;
        r
    }

    fn apply(&mut self, tok: TargetToken) -> Result<(), Violation> {
        use GrammarState as S;
        if self.state == S::Done {
            return Err(self.violation("trailing-tokens", format!("{tok} after [EOS]")));
        }
        if self.state == S::Start {
            if tok == TargetToken::SOS {
                self.state = S::Outside;
                return Ok(());
            }
            self.state = S::Outside;
            let v = self.violation("missing-sos", format!("sequence starts with {tok}"));
            let _ = self.apply(tok);
            return Err(v);
        }
        match tok {
            TargetToken::Control(Control::Sos) => Err(self.violation("unexpected-token", "[SOS] inside the sequence")),
            TargetToken::SourceRef(p) => {
                if !matches!(self.state, S::Outside | S::InEntity { .. }) {
                    return Err(self.violation("unexpected-token", format!("source #{p} in state {}", self.state)));
                }
                if p >= self.n_source {
                    return Err(self.violation("source-out-of-range", format!("#{p} with {} source words", self.n_source)));
                }
                if self.last.is_some_and(|l| p <= l) {
                    return Err(self.violation("non-monotonic-source", format!("#{p} after #{}", self.last.unwrap())));
                }
                self.last = Some(p);
                self.consumed += 1;
                if let S::InEntity { words } = &mut self.state {
                    *words += 1;
                }
                Ok(())
            }
            TargetToken::Boundary(Boundary::B) => match self.state {
                S::Outside => {
                    self.state = S::InEntity { words: 0 };
                    Ok(())
                }
                _ => Err(self.violation("unexpected-token", format!("[B] in state {}", self.state))),
            },
            TargetToken::Boundary(Boundary::E) => match self.state {
                S::InEntity { words: 0 } => {
                    self.state = S::Outside;
                    Err(self.violation("empty-entity", "[E] directly after [B]"))
                }
                S::InEntity { .. } => {
                    self.state = S::InLabel(Vec::new());
                    Ok(())
                }
                _ => Err(self.violation("unexpected-token", format!("[E] in state {}", self.state))),
            },
            TargetToken::LabelWord { label, idx } => {
                let Some(word) = self.labels.labels.get(label).and_then(|l| l.name.get(idx)).cloned() else {
                    return Err(self.violation("invalid-label-word", format!("label {label} word {idx}")));
                };
                let S::InLabel(prefix) = &self.state else {
                    return Err(self.violation("unexpected-token", format!("label word `{word}` in state {}", self.state)));
                };
                let mut extended = prefix.clone();
                extended.push(word.clone());
                if self.labels.with_prefix(&extended).next().is_none() {
                    return Err(self.violation("unknown-label-word", format!("`{}` is not a label-name prefix", extended.join(" "))));
                }
                self.state = S::InLabel(extended);
                Ok(())
            }
            TargetToken::Boundary(Boundary::T) => match &self.state {
                S::InLabel(prefix) => {
                    let complete = self.labels.exact(prefix).is_some();
                    let name = prefix.join(" ");
                    self.state = S::Outside;
                    if complete {
                        Ok(())
                    } else {
                        Err(self.violation("incomplete-label", format!("`{name}` does not complete a label name")))
                    }
                }
                _ => Err(self.violation("unexpected-token", format!("[T] in state {}", self.state))),
            },
            TargetToken::Control(Control::Eos) => {
                let prior = std::mem::replace(&mut self.state, S::Done);
                match prior {
                    S::Outside if self.consumed == self.n_source => Ok(()),
                    S::Outside => Err(self.violation(
                        "incomplete-coverage",
                        format!("{} of {} source words emitted", self.consumed, self.n_source),
                    )),
                    other => Err(self.violation("unterminated-entity", format!("[EOS] in state {other}"))),
                }
            }
        }
    }
}

/// Every grammar violation of `seq` for a page of `n_source` words.
pub fn validate_sequence(seq: &TargetSequence, labels: &LabelSet, n_source: usize) -> Result<(), Vec<Violation>> {
    let mut g = Grammar::new(labels, n_source);
    let mut violations = Vec::new();
    for &tok in &seq.tokens {
        if let Err(v) = g.step(tok) {
            violations.push(v);
        }
    }
    if g.state == GrammarState::Start {
        violations.push(g.violation("missing-sos", "empty sequence"));
    }
    if !g.is_done() {
        violations.push(g.violation("missing-eos", "sequence ends without [EOS]"));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
