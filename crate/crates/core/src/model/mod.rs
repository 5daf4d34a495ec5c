//! Layout-aware prefix language model with a gated copy/label output.
//!
//! Source words and target tokens are packed into one sequence. Source rows
//! see each other bidirectionally, target rows see the source and earlier
//! targets. The hidden state at target position `k` scores the next token
//! either as a pointer into the source (with probability `p`) or as one of
//! the special tokens `[B] [E] [T] [EOS]` and the label-name words (with
//! probability `1 - p`).

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Boundary, Control, TargetSequence, TargetToken};
use crate::doc::{LabelSet, Page, Vocab, COORD_MAX};
use crate::error::{Error, Result};
use crate::tensor::{kernels, ParamId, ParamStore, Precision, Real, Tape, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

pub const COORD_BUCKETS: usize = COORD_MAX as usize + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    /// Filled from the vocabulary when the model is built.
    pub vocab_size: usize,
    pub dropout: f64,
    pub precision: Precision,
    pub init_std: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 512,
            vocab_size: 0,
            dropout: 0.0,
            precision: Precision::F32,
            init_std: 0.02,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn tiny(d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        ModelConfig {
            d_model,
            n_layers,
            n_heads,
            d_ff: 4 * d_model,
            max_len: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return Err(Error::Config("d_ff and max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Next-token class at a target position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gold {
    Source(usize),
    Special(usize),
}

/// One page and its target stream, packed for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    /// Source length.
    pub n: usize,
    /// Target input length.
    pub m: usize,
    pub word_ids: Vec<usize>,
    /// Quantized box for ordinary words.
    pub boxes: Vec<Option<[u16; 4]>>,
    /// Spatial-identifier row for special tokens.
    pub spatial_ids: Vec<Option<usize>>,
    pub positions: Vec<usize>,
    pub gold: Vec<Gold>,
    pub mask: Vec<bool>,
}

impl PackedBatch {
    pub fn len(&self) -> usize {
        self.n + self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Attention mask over the packed sequence, row-major `(n+m)²`.
pub fn build_prefix_mask(n: usize, m: usize) -> Vec<bool> {
    let l = n + m;
    let mut mask = vec![false; l * l];
    for i in 0..l {
        let visible = if i < n { n } else { i + 1 };
        mask[i * l..i * l + visible].iter_mut().for_each(|v| *v = true);
    }
    mask
}

#[derive(Debug, Clone)]
pub struct LayerIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct ParamIds {
    pub word: ParamId,
    pub x0: ParamId,
    pub y0: ParamId,
    pub x1: ParamId,
    pub y1: ParamId,
    pub pos: ParamId,
    pub spatial_id: ParamId,
    pub layers: Vec<LayerIds>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

/// Hidden states and input embeddings of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub embeddings: Var,
    pub hidden: Var,
}

/// Gated output over the target rows.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    /// `[m × 1]` gate logits.
    pub gate: Var,
    /// `[m × n]` log-softmax over source positions.
    pub source_logp: Var,
    /// `[m × C]` log-softmax over special candidates.
    pub special_logp: Var,
}

/// Probabilities of the next token after a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct NextToken {
    pub p_gate: f64,
    /// `p_gate · softmax` over source positions.
    pub source: Vec<f64>,
    /// `(1 − p_gate) · softmax` over special candidates.
    pub special: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub params: ParamStore<T>,
    pub ids: ParamIds,
    label_words: Vec<String>,
}

/// Fixed special candidates, in spatial-identifier row order.
pub const SPECIAL_B: usize = 0;
pub const SPECIAL_E: usize = 1;
pub const SPECIAL_T: usize = 2;
pub const SPECIAL_EOS: usize = 3;
pub const FIRST_LABEL_WORD: usize = 4;

impl<T: Real> Model<T> {
    /// Fresh model with `N(0, init_std²)` tables and weights.
    pub fn new(mut config: ModelConfig, vocab: Vocab, labels: LabelSet, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        labels.validate()?;
        let label_words = labels.words();
        for w in &label_words {
            if !vocab.contains(w) {
                return Err(Error::Config(format!("label word `{w}` missing from the vocabulary")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, ids) = init_params::<T>(&config, FIRST_LABEL_WORD + label_words.len() + 1, &mut rng);
        Ok(Model {
            config,
            vocab,
            labels,
            params,
            ids,
            label_words,
        })
    }

    /// Model around existing parameters; every tensor must match the layout.
    pub fn from_params(config: ModelConfig, vocab: Vocab, labels: LabelSet, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, vocab, labels, 0)?;
        model.params.copy_values_from(&params)?;
        Ok(model)
    }

    pub fn tape(&self) -> Tape<'_, T> {
        Tape::with_params(&self.params)
    }

    /// Distinct label-name words; special candidate `FIRST_LABEL_WORD + i` is word `i`.
    pub fn label_words(&self) -> &[String] {
        &self.label_words
    }

    /// Number of special candidates (`[SOS]` is input-only).
    pub fn num_special_candidates(&self) -> usize {
        FIRST_LABEL_WORD + self.label_words.len()
    }

    /// Spatial-identifier row of `[SOS]`.
    pub fn sos_row(&self) -> usize {
        self.num_special_candidates()
    }

    pub fn label_word_row(&self, word: &str) -> Option<usize> {
        self.label_words.iter().position(|w| w == word).map(|i| FIRST_LABEL_WORD + i)
    }

    /// Vocabulary id of special row `row`.
    pub fn special_word_id(&self, row: usize) -> usize {
        match row {
            SPECIAL_B => Vocab::B,
            SPECIAL_E => Vocab::E,
            SPECIAL_T => Vocab::T,
            SPECIAL_EOS => Vocab::EOS,
            r if r == self.sos_row() => Vocab::SOS,
            r => self.vocab.id(&self.label_words[r - FIRST_LABEL_WORD]),
        }
    }

    /// Special row of a non-source target token.
    pub fn special_row(&self, tok: TargetToken) -> Result<usize> {
        match tok {
            TargetToken::Boundary(Boundary::B) => Ok(SPECIAL_B),
            TargetToken::Boundary(Boundary::E) => Ok(SPECIAL_E),
            TargetToken::Boundary(Boundary::T) => Ok(SPECIAL_T),
            TargetToken::Control(Control::Eos) => Ok(SPECIAL_EOS),
            TargetToken::Control(Control::Sos) => Ok(self.sos_row()),
            TargetToken::LabelWord { label, idx } => self
                .labels
                .labels
                .get(label)
                .and_then(|l| l.name.get(idx))
                .and_then(|w| self.label_word_row(w))
                .ok_or_else(|| Error::Config(format!("no spatial identifier for label word {label}.{idx}"))),
            TargetToken::SourceRef(_) => Err(Error::Config("source references have no spatial identifier".into())),
        }
    }

    /// Target token for special candidate `row`. Label words are attributed
    /// to the first label whose name extends `prefix` with that word.
    pub fn special_token(&self, row: usize, prefix: &[String]) -> TargetToken {
        match row {
            SPECIAL_B => TargetToken::B,
            SPECIAL_E => TargetToken::E,
            SPECIAL_T => TargetToken::T,
            SPECIAL_EOS => TargetToken::EOS,
            r => {
                let word = &self.label_words[r - FIRST_LABEL_WORD];
                let mut extended = prefix.to_vec();
                extended.push(word.clone());
                if let Some((label, _)) = self.labels.with_prefix(&extended).next() {
                    return TargetToken::LabelWord { label, idx: prefix.len() };
                }
                self.labels
                    .labels
                    .iter()
                    .enumerate()
                    .find_map(|(label, l)| {
                        l.name
                            .iter()
                            .position(|w| w == word)
                            .map(|idx| TargetToken::LabelWord { label, idx })
                    })
                    .expect("label words come from the label set")
            }
        }
    }

    /// Pack a page with a target stream beginning with `[SOS]`. The last
    /// target token is only a prediction target, never an input.
    pub fn pack(&self, page: &Page, target: &TargetSequence) -> Result<PackedBatch> {
        if target.tokens.first() != Some(&TargetToken::SOS) {
            return Err(Error::Validation("target must start with [SOS]".into()));
        }
        let n = page.words.len();
        if n == 0 {
            return Err(Error::Empty("page without words"));
        }
        let m = target.tokens.len() - 1;
        let gold = target.tokens[1..]
            .iter()
            .enumerate()
            .map(|(k, &tok)| match tok {
                TargetToken::SourceRef(p) if p < n => Ok(Gold::Source(p)),
                TargetToken::SourceRef(_) | TargetToken::Control(Control::Sos) => Err(Error::MissingGold { position: k }),
                other => self
                    .special_row(other)
                    .map(Gold::Special)
                    .map_err(|_| Error::MissingGold { position: k }),
            })
            .collect::<Result<Vec<_>>>()?;
        self.pack_inputs(page, &target.tokens[..m], gold)
    }

    /// Pack a page with target inputs only (no gold), as used while decoding.
    pub fn pack_prefix(&self, page: &Page, inputs: &[TargetToken]) -> Result<PackedBatch> {
        self.pack_inputs(page, inputs, Vec::new())
    }

    fn pack_inputs(&self, page: &Page, inputs: &[TargetToken], gold: Vec<Gold>) -> Result<PackedBatch> {
        let n = page.words.len();
        let m = inputs.len();
        if n + m > self.config.max_len {
            return Err(Error::TooLong {
                len: n + m,
                max: self.config.max_len,
            });
        }
        let mut word_ids = Vec::with_capacity(n + m);
        let mut boxes = Vec::with_capacity(n + m);
        let mut spatial_ids = Vec::with_capacity(n + m);
        for w in &page.words {
            word_ids.push(self.vocab.id(&w.text));
            boxes.push(Some(w.bbox.coords()));
            spatial_ids.push(None);
        }
        for &tok in inputs {
            match tok {
                TargetToken::SourceRef(p) => {
                    let w = page.words.get(p).ok_or(Error::Index { index: p, len: n })?;
                    word_ids.push(self.vocab.id(&w.text));
                    boxes.push(Some(w.bbox.coords()));
                    spatial_ids.push(None);
                }
                other => {
                    let row = self.special_row(other)?;
                    word_ids.push(self.special_word_id(row));
                    boxes.push(None);
                    spatial_ids.push(Some(row));
                }
            }
        }
        Ok(PackedBatch {
            n,
            m,
            word_ids,
            boxes,
            spatial_ids,
            positions: (0..n + m).collect(),
            gold,
            mask: build_prefix_mask(n, m),
        })
    }

    /// Input embedding of every packed position, `[(n+m) × d]`.
    pub fn embed_inputs(&self, tape: &mut Tape<'_, T>, batch: &PackedBatch) -> Result<Var> {
        let ids = &self.ids;
        let coord = |c: usize| -> Vec<Option<usize>> { batch.boxes.iter().map(|b| b.map(|b| b[c] as usize)).collect() };
        let word = tape.param(ids.word);
        let mut e = tape.gather_rows(word, &batch.word_ids)?;
        for (c, id) in [ids.x0, ids.y0, ids.x1, ids.y1].into_iter().enumerate() {
            let table = tape.param(id);
            let part = tape.gather_rows_opt(table, coord(c))?;
            e = tape.add(e, part)?;
        }
        let sid = tape.param(ids.spatial_id);
        let part = tape.gather_rows_opt(sid, batch.spatial_ids.clone())?;
        e = tape.add(e, part)?;
        let pos = tape.param(ids.pos);
        let part = tape.gather_rows(pos, &batch.positions)?;
        tape.add(e, part)
    }

    /// Candidate embeddings of the special tokens, `[C × d]`.
    pub fn special_embeddings(&self, tape: &mut Tape<'_, T>) -> Result<Var> {
        let c = self.num_special_candidates();
        let word_ids: Vec<usize> = (0..c).map(|r| self.special_word_id(r)).collect();
        let word = tape.param(self.ids.word);
        let w = tape.gather_rows(word, &word_ids)?;
        let sid = tape.param(self.ids.spatial_id);
        let s = tape.slice_rows(sid, 0, c)?;
        tape.add(w, s)
    }

    pub fn forward(&self, tape: &mut Tape<'_, T>, batch: &PackedBatch, mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardVars> {
        let cfg = &self.config;
        let l = batch.len();
        if l > cfg.max_len {
            return Err(Error::TooLong { len: l, max: cfg.max_len });
        }
        let eps = T::of(cfg.ln_eps);
        let embeddings = self.embed_inputs(tape, batch)?;
        let mut x = embeddings;
        if let Some(r) = rng.as_deref_mut() {
            x = tape.dropout(x, cfg.dropout, r);
        }
        let dh = cfg.head_dim();
        let scale = T::of(1.0 / (dh as f64).sqrt());
        for layer in &self.ids.layers {
            let p = |tape: &mut Tape<'_, T>, id: ParamId| tape.param(id);
            let (g1, b1) = (p(tape, layer.ln1_g), p(tape, layer.ln1_b));
            let h = tape.layer_norm(x, g1, b1, eps)?;
            let q = linear(tape, h, layer.wq, layer.bq)?;
            let k = linear(tape, h, layer.wk, layer.bk)?;
            let v = linear(tape, h, layer.wv, layer.bv)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = tape.slice_cols(q, head * dh, dh)?;
                let kh = tape.slice_cols(k, head * dh, dh)?;
                let vh = tape.slice_cols(v, head * dh, dh)?;
                let s = tape.matmul_nt(qh, kh)?;
                let s = tape.scale(s, scale);
                let a = tape.softmax_masked(s, batch.mask.clone())?;
                heads.push(tape.matmul(a, vh)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let mut o = linear(tape, cat, layer.wo, layer.bo)?;
            if let Some(r) = rng.as_deref_mut() {
                o = tape.dropout(o, cfg.dropout, r);
            }
            x = tape.add(x, o)?;
            let (g2, b2) = (p(tape, layer.ln2_g), p(tape, layer.ln2_b));
            let h = tape.layer_norm(x, g2, b2, eps)?;
            let f = linear(tape, h, layer.w1, layer.b1)?;
            let f = tape.gelu(f);
            let mut f = linear(tape, f, layer.w2, layer.b2)?;
            if let Some(r) = rng.as_deref_mut() {
                f = tape.dropout(f, cfg.dropout, r);
            }
            x = tape.add(x, f)?;
        }
        let (gf, bf) = (tape.param(self.ids.lnf_g), tape.param(self.ids.lnf_b));
        let hidden = tape.layer_norm(x, gf, bf, eps)?;
        Ok(ForwardVars { embeddings, hidden })
    }

    /// Gated output distribution at every target row.
    pub fn output(&self, tape: &mut Tape<'_, T>, fwd: ForwardVars, batch: &PackedBatch) -> Result<OutputVars> {
        let ht = tape.slice_rows(fwd.hidden, batch.n, batch.m)?;
        let gw = tape.param(self.ids.gate_w);
        let gb = tape.param(self.ids.gate_b);
        let g = tape.matmul_nt(ht, gw)?;
        let gate = tape.add_row(g, gb)?;
        let src = tape.slice_rows(fwd.embeddings, 0, batch.n)?;
        let src_logits = tape.matmul_nt(ht, src)?;
        let spec = self.special_embeddings(tape)?;
        let spec_logits = tape.matmul_nt(ht, spec)?;
        Ok(OutputVars {
            gate,
            source_logp: tape.log_softmax(src_logits),
            special_logp: tape.log_softmax(spec_logits),
        })
    }

    /// Mean negative log-likelihood of the gold next tokens.
    pub fn loss(&self, tape: &mut Tape<'_, T>, batch: &PackedBatch, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        if batch.gold.len() != batch.m || batch.m == 0 {
            return Err(Error::MissingGold {
                position: batch.gold.len(),
            });
        }
        let fwd = self.forward(tape, batch, rng)?;
        let out = self.output(tape, fwd, batch)?;
        let c = self.num_special_candidates();
        let mut src = Vec::new();
        let mut spec = Vec::new();
        for (k, g) in batch.gold.iter().enumerate() {
            match *g {
                Gold::Source(i) if i < batch.n => src.push((k, i)),
                Gold::Special(s) if s < c => spec.push((k, s)),
                _ => return Err(Error::MissingGold { position: k }),
            }
        }
        let neg_gate = tape.scale(out.gate, -T::one());
        let log_p = tape.log_sigmoid(out.gate);
        let log_q = tape.log_sigmoid(neg_gate);
        let src_rows: Vec<(usize, usize)> = src.iter().map(|&(k, _)| (k, 0)).collect();
        let spec_rows: Vec<(usize, usize)> = spec.iter().map(|&(k, _)| (k, 0)).collect();
        let parts = [
            tape.pick(log_p, &src_rows)?,
            tape.pick(out.source_logp, &src)?,
            tape.pick(log_q, &spec_rows)?,
            tape.pick(out.special_logp, &spec)?,
        ];
        let mut total = tape.sum(parts[0]);
        for &part in &parts[1..] {
            let s = tape.sum(part);
            total = tape.add(total, s)?;
        }
        Ok(tape.scale(total, T::of(-1.0 / batch.m as f64)))
    }

    /// Teacher-forced loss value without dropout.
    pub fn loss_value(&self, batch: &PackedBatch) -> Result<f64> {
        let mut tape = self.tape();
        let l = self.loss(&mut tape, batch, None)?;
        Ok(tape.scalar(l).as_f64())
    }

    /// Distribution of the token following `prefix` (which starts with `[SOS]`).
    pub fn next_token_distribution(&self, page: &Page, prefix: &[TargetToken]) -> Result<NextToken> {
        let batch = self.pack_prefix(page, prefix)?;
        if batch.m == 0 {
            return Err(Error::Empty("prefix without [SOS]"));
        }
        let mut tape = self.tape();
        let fwd = self.forward(&mut tape, &batch, None)?;
        let out = self.output(&mut tape, fwd, &batch)?;
        let k = batch.m - 1;
        let g = tape.value(out.gate)[k].as_f64();
        let p = kernels::sigmoid(g);
        let row = |v: &[T], w: usize| -> Vec<f64> { v[k * w..(k + 1) * w].iter().map(|x| x.as_f64().exp()).collect() };
        let c = self.num_special_candidates();
        Ok(NextToken {
            p_gate: p,
            source: row(tape.value(out.source_logp), batch.n).into_iter().map(|x| p * x).collect(),
            special: row(tape.value(out.special_logp), c).into_iter().map(|x| (1.0 - p) * x).collect(),
        })
    }

    /// Same model in another element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
            label_words: self.label_words.clone(),
        }
    }
}

fn linear<T: Real>(tape: &mut Tape<'_, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w = tape.param(w);
    let b = tape.param(b);
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn init_params<T: Real>(cfg: &ModelConfig, n_special_rows: usize, rng: &mut ChaCha8Rng) -> (ParamStore<T>, ParamIds) {
    let d = cfg.d_model;
    let std = cfg.init_std;
    let mut s = ParamStore::new();
    let mut randn = |s: &mut ParamStore<T>, name: String, shape: &[usize], decay: bool| s.push(name, Tensor::randn(shape, std, rng), decay);
    let word = randn(&mut s, "emb.word".into(), &[cfg.vocab_size, d], false);
    let x0 = randn(&mut s, "emb.x0".into(), &[COORD_BUCKETS, d], false);
    let y0 = randn(&mut s, "emb.y0".into(), &[COORD_BUCKETS, d], false);
    let x1 = randn(&mut s, "emb.x1".into(), &[COORD_BUCKETS, d], false);
    let y1 = randn(&mut s, "emb.y1".into(), &[COORD_BUCKETS, d], false);
    let pos = randn(&mut s, "emb.pos".into(), &[cfg.max_len, d], false);
    let spatial_id = randn(&mut s, "emb.spatial_id".into(), &[n_special_rows, d], false);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let name = |p: &str| format!("layer{l}.{p}");
        let ones = |n: usize| Tensor::from_f64(&[n], &vec![1.0; n]).expect("shape");
        let zeros = |n: usize| Tensor::zeros(&[n]);
        let ln1_g = s.push(name("ln1.gain"), ones(d), false);
        let ln1_b = s.push(name("ln1.bias"), zeros(d), false);
        let wq = randn(&mut s, name("attn.wq"), &[d, d], true);
        let bq = s.push(name("attn.bq"), zeros(d), false);
        let wk = randn(&mut s, name("attn.wk"), &[d, d], true);
        let bk = s.push(name("attn.bk"), zeros(d), false);
        let wv = randn(&mut s, name("attn.wv"), &[d, d], true);
        let bv = s.push(name("attn.bv"), zeros(d), false);
        let wo = randn(&mut s, name("attn.wo"), &[d, d], true);
        let bo = s.push(name("attn.bo"), zeros(d), false);
        let ln2_g = s.push(name("ln2.gain"), ones(d), false);
        let ln2_b = s.push(name("ln2.bias"), zeros(d), false);
        let w1 = randn(&mut s, name("ffn.w1"), &[d, cfg.d_ff], true);
        let b1 = s.push(name("ffn.b1"), zeros(cfg.d_ff), false);
        let w2 = randn(&mut s, name("ffn.w2"), &[cfg.d_ff, d], true);
        let b2 = s.push(name("ffn.b2"), zeros(d), false);
        layers.push(LayerIds {
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            w1,
            b1,
            w2,
            b2,
        });
    }
    let lnf_g = s.push("final.ln.gain", Tensor::from_f64(&[d], &vec![1.0; d]).expect("shape"), false);
    let lnf_b = s.push("final.ln.bias", Tensor::zeros(&[d]), false);
    let gate_w = randn(&mut s, "gate.w".into(), &[1, d], true);
    let gate_b = s.push("gate.b", Tensor::zeros(&[1]), false);
    let ids = ParamIds {
        word,
        x0,
        y0,
        x1,
        y1,
        pos,
        spatial_id,
        layers,
        lnf_g,
        lnf_b,
        gate_w,
        gate_b,
    };
    (s, ids)
}
