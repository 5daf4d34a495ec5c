//! Greedy generation with grammar and monotonic-copy constraints.

mod engine;

use serde::{Deserialize, Serialize};

use crate::codec::{Boundary, Grammar, GrammarState, TargetSequence, TargetToken};
use crate::doc::Page;
use crate::error::{Error, Result};
use crate::model::{Model, SPECIAL_B, SPECIAL_E, SPECIAL_EOS, SPECIAL_T};
use crate::tensor::{kernels, Real};

pub use engine::{Engine, KvCache, Scores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// Only the leftmost unconsumed source position may be copied.
    pub enforce_monotonic_copy: bool,
    /// Only tokens allowed by the target grammar may be emitted. The grammar
    /// requires in-order, complete coverage, so it implies monotonic copy.
    pub enforce_grammar: bool,
    /// Defaults to `n · (4 + longest label name) + 2`.
    pub max_steps: Option<usize>,
    /// Reuse cached keys/values; otherwise every step recomputes the prefix.
    pub use_cache: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            enforce_monotonic_copy: true,
            enforce_grammar: true,
            max_steps: None,
            use_cache: true,
        }
    }
}

impl DecodeOptions {
    pub fn unconstrained() -> Self {
        DecodeOptions {
            enforce_monotonic_copy: false,
            enforce_grammar: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Candidate {
    Source(usize),
    /// Special-candidate row.
    Special(usize),
}

/// Trace record of one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub state: String,
    pub chosen: String,
    pub p_gate: f64,
    /// Best admissible candidates with renormalized probabilities.
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    pub sequence: TargetSequence,
    pub steps: usize,
    /// Stopped by the step or length budget before `[EOS]`.
    pub truncated: bool,
}

/// Full gated distribution at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub p_gate: f64,
    pub source: Vec<f64>,
    pub special: Vec<f64>,
}

impl StepDistribution {
    fn from_scores<T: Real>(s: &Scores<T>) -> Self {
        let p = kernels::sigmoid(s.gate_logit.as_f64());
        let soft = |v: &[T], mass: f64| {
            let v: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
            let mut out = vec![0.0; v.len()];
            kernels::softmax_row(&v, &mut out);
            out.into_iter().map(|x| x * mass).collect::<Vec<f64>>()
        };
        StepDistribution {
            p_gate: p,
            source: soft(&s.source, p),
            special: soft(&s.special, 1.0 - p),
        }
    }

    pub fn prob(&self, c: Candidate) -> f64 {
        match c {
            Candidate::Source(i) => self.source[i],
            Candidate::Special(r) => self.special[r],
        }
    }
}

/// Decoding state of one page.
#[derive(Debug, Clone)]
pub struct DecodeState<'m, T: Real> {
    model: &'m Model<T>,
    page: &'m Page,
    opts: DecodeOptions,
    engine: Engine<'m, T>,
    grammar: Grammar<'m>,
    consumed: Vec<bool>,
    tokens: Vec<TargetToken>,
    hidden: Vec<T>,
    max_steps: usize,
    done: bool,
}

impl<'m, T: Real> DecodeState<'m, T> {
    pub fn new(model: &'m Model<T>, page: &'m Page, opts: &DecodeOptions) -> Result<Self> {
        let mut engine = Engine::new(model, page)?;
        let hidden = engine.push(TargetToken::SOS)?;
        let mut grammar = Grammar::new(&model.labels, page.words.len());
        grammar.step(TargetToken::SOS).expect("[SOS] opens every sequence");
        let longest = model.labels.labels.iter().map(|l| l.name.len()).max().unwrap_or(1);
        Ok(DecodeState {
            model,
            page,
            opts: opts.clone(),
            engine,
            grammar,
            consumed: vec![false; page.words.len()],
            tokens: vec![TargetToken::SOS],
            hidden,
            max_steps: opts.max_steps.unwrap_or(page.words.len() * (4 + longest) + 2),
            done: false,
        })
    }

    pub fn tokens(&self) -> &[TargetToken] {
        &self.tokens
    }

    pub fn grammar_state(&self) -> &GrammarState {
        self.grammar.state()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Generated tokens after `[SOS]`.
    pub fn steps(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Leftmost unconsumed source position.
    pub fn pointer(&self) -> Option<usize> {
        self.consumed.iter().position(|&c| !c)
    }

    pub fn engine(&self) -> &Engine<'m, T> {
        &self.engine
    }

    /// Hidden state of the last fed token.
    pub fn hidden(&self) -> &[T] {
        &self.hidden
    }

    pub fn admissible(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        if self.done {
            return out;
        }
        if self.opts.enforce_grammar {
            let a = self.grammar.allowed();
            if let Some(i) = a.source {
                out.push(Candidate::Source(i));
            }
            for (flag, row) in [(a.b, SPECIAL_B), (a.e, SPECIAL_E), (a.t, SPECIAL_T), (a.eos, SPECIAL_EOS)] {
                if flag {
                    out.push(Candidate::Special(row));
                }
            }
            for w in &a.label_words {
                out.push(Candidate::Special(self.model.label_word_row(w).expect("label word row")));
            }
            out.sort();
            return out;
        }
        if self.opts.enforce_monotonic_copy {
            out.extend(self.pointer().map(Candidate::Source));
        } else {
            out.extend((0..self.page.words.len()).map(Candidate::Source));
        }
        out.extend((0..self.model.num_special_candidates()).map(Candidate::Special));
        out
    }

    /// Gated distribution for the next token.
    pub fn distribution(&self) -> StepDistribution {
        StepDistribution::from_scores(&self.engine.scores(&self.hidden))
    }

    fn label_prefix(&self) -> Vec<String> {
        match self.grammar.state() {
            GrammarState::InLabel(p) => p.clone(),
            _ => Vec::new(),
        }
    }

    fn token_for(&self, c: Candidate) -> TargetToken {
        match c {
            Candidate::Source(i) => TargetToken::SourceRef(i),
            Candidate::Special(r) => self.model.special_token(r, &self.label_prefix()),
        }
    }

    fn best(&self, dist: &StepDistribution, cands: &[Candidate]) -> Result<Candidate> {
        cands
            .iter()
            .copied()
            .fold(None::<(Candidate, f64)>, |acc, c| {
                let p = dist.prob(c);
                match acc {
                    Some((_, bp)) if bp >= p => acc,
                    _ => Some((c, p)),
                }
            })
            .map(|(c, _)| c)
            .ok_or_else(|| Error::Decode(format!("no admissible token in state {}", self.grammar.state())))
    }

    /// Most probable admissible next token.
    pub fn predict(&self) -> Result<TargetToken> {
        if self.done {
            return Err(Error::Decode("decoding already finished".into()));
        }
        Ok(self.token_for(self.best(&self.distribution(), &self.admissible())?))
    }

    /// Pick the most probable admissible token and feed it back.
    pub fn step(&mut self, trace: Option<&mut Vec<StepRecord>>) -> Result<TargetToken> {
        if self.done {
            return Err(Error::Decode("decoding already finished".into()));
        }
        let dist = self.distribution();
        let cands = self.admissible();
        let tok = self.token_for(self.best(&dist, &cands)?);
        if let Some(trace) = trace {
            let total: f64 = cands.iter().map(|&c| dist.prob(c)).sum();
            let mut ranked: Vec<(Candidate, f64)> = cands.iter().map(|&c| (c, dist.prob(c) / total.max(f64::MIN_POSITIVE))).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            trace.push(StepRecord {
                step: self.steps(),
                state: self.grammar.state().to_string(),
                chosen: tok.render(Some(self.page), Some(&self.model.labels)),
                p_gate: dist.p_gate,
                top: ranked
                    .into_iter()
                    .take(5)
                    .map(|(c, p)| (self.token_for(c).render(Some(self.page), Some(&self.model.labels)), p))
                    .collect(),
            });
        }
        self.force(tok)?;
        Ok(tok)
    }

    /// Append `tok` without consulting the model, as in teacher forcing.
    pub fn force(&mut self, tok: TargetToken) -> Result<()> {
        if self.done {
            return Err(Error::Decode("decoding already finished".into()));
        }
        let closing_label = match (tok, self.grammar.state()) {
            (TargetToken::Boundary(Boundary::T), GrammarState::InLabel(p)) => self.model.labels.exact(p).map(|l| (l, p.len())),
            _ => None,
        };
        // Violations only occur with the grammar off; the automaton then just tracks.
        let _ = self.grammar.step(tok);
        if let TargetToken::SourceRef(i) = tok {
            self.consumed[i] = true;
        }
        if let Some((label, k)) = closing_label {
            let start = self.tokens.len() - k;
            for t in &mut self.tokens[start..] {
                if let TargetToken::LabelWord { idx, .. } = *t {
                    *t = TargetToken::LabelWord { label, idx };
                }
            }
        }
        self.tokens.push(tok);
        if tok == TargetToken::EOS {
            self.done = true;
            return Ok(());
        }
        self.hidden = if self.opts.use_cache {
            self.engine.push(tok)?
        } else {
            let mut fresh = Engine::new(self.model, self.page)?;
            let mut h = Vec::new();
            for &t in &self.tokens {
                h = fresh.push(t)?;
            }
            self.engine = fresh;
            h
        };
        Ok(())
    }

    fn out_of_budget(&self) -> bool {
        self.steps() >= self.max_steps || self.engine.source_len() + self.tokens.len() >= self.model.config.max_len
    }
}

pub fn decode_page<T: Real>(model: &Model<T>, page: &Page, opts: &DecodeOptions) -> Result<Decoded> {
    decode_inner(model, page, opts, None)
}

/// Like [`decode_page`], also recording every step.
pub fn decode_page_traced<T: Real>(model: &Model<T>, page: &Page, opts: &DecodeOptions, trace: &mut Vec<StepRecord>) -> Result<Decoded> {
    decode_inner(model, page, opts, Some(trace))
}

fn decode_inner<T: Real>(model: &Model<T>, page: &Page, opts: &DecodeOptions, mut trace: Option<&mut Vec<StepRecord>>) -> Result<Decoded> {
    let mut state = DecodeState::new(model, page, opts)?;
    while !state.is_done() {
        if state.out_of_budget() {
            log::warn!("page {}: decoding truncated after {} steps", page.id, state.steps());
            return Ok(Decoded {
                steps: state.steps(),
                sequence: TargetSequence::new(state.tokens),
                truncated: true,
            });
        }
        state.step(trace.as_deref_mut())?;
    }
    Ok(Decoded {
        steps: state.steps(),
        sequence: TargetSequence::new(state.tokens),
        truncated: false,
    })
}

#[cfg(test)]
mod tests;
