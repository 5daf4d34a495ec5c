//! Tape-free forward pass, one packed position at a time.
//!
//! The source block is run once with full bidirectional attention; its keys
//! and values are cached per layer. Each target row then attends over the
//! cache and appends its own keys and values.

use crate::codec::TargetToken;
use crate::doc::Page;
use crate::error::{Error, Result};
use crate::model::{LayerIds, Model};
use crate::tensor::{kernels, Real};

#[derive(Debug, Clone)]
struct LayerCache<T> {
    k: Vec<T>,
    v: Vec<T>,
}

/// Cached per-layer keys and values of every processed position.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    layers: Vec<LayerCache<T>>,
    len: usize,
}

impl<T> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Incremental forward state for one page.
#[derive(Debug, Clone)]
pub struct Engine<'m, T: Real> {
    model: &'m Model<T>,
    page: &'m Page,
    cache: KvCache<T>,
    /// Input embeddings of the source rows, `n × d`.
    source: Vec<T>,
    /// Candidate embeddings of the special tokens, `C × d`.
    special: Vec<T>,
}

/// Scores of the next token at one target row.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores<T> {
    pub gate_logit: T,
    pub source: Vec<T>,
    pub special: Vec<T>,
}

fn add_row<T: Real>(acc: &mut [T], row: &[T]) {
    for (a, &r) in acc.iter_mut().zip(row) {
        *a = *a + r;
    }
}

impl<'m, T: Real> Engine<'m, T> {
    pub fn new(model: &'m Model<T>, page: &'m Page) -> Result<Self> {
        let n = page.words.len();
        if n == 0 {
            return Err(Error::Empty("page without words"));
        }
        if n + 1 > model.config.max_len {
            return Err(Error::TooLong {
                len: n + 1,
                max: model.config.max_len,
            });
        }
        let d = model.config.d_model;
        let mut source = Vec::with_capacity(n * d);
        for i in 0..n {
            source.extend(embed(model, page, TargetToken::SourceRef(i), i)?);
        }
        let c = model.num_special_candidates();
        let table = model.params.get(model.ids.word);
        let sid = model.params.get(model.ids.spatial_id);
        let mut special = Vec::with_capacity(c * d);
        for r in 0..c {
            let mut e = table.row(model.special_word_id(r)).to_vec();
            add_row(&mut e, sid.row(r));
            special.extend(e);
        }
        let mut engine = Engine {
            model,
            page,
            cache: KvCache {
                layers: vec![
                    LayerCache {
                        k: Vec::new(),
                        v: Vec::new()
                    };
                    model.config.n_layers
                ],
                len: 0,
            },
            source,
            special,
        };
        engine.run_source();
        Ok(engine)
    }

    pub fn cache(&self) -> &KvCache<T> {
        &self.cache
    }

    pub fn source_len(&self) -> usize {
        self.page.words.len()
    }

    /// Target rows processed so far.
    pub fn target_len(&self) -> usize {
        self.cache.len - self.source_len()
    }

    fn run_source(&mut self) {
        let model = self.model;
        let d = model.config.d_model;
        let n = self.source_len();
        let mut x: Vec<Vec<T>> = self.source.chunks(d).map(|r| r.to_vec()).collect();
        for (li, layer) in model.ids.layers.iter().enumerate() {
            let mut qs = Vec::with_capacity(n);
            for row in &x {
                let (q, k, v) = qkv(model, layer, row);
                self.cache.layers[li].k.extend(k);
                self.cache.layers[li].v.extend(v);
                qs.push(q);
            }
            for (row, q) in x.iter_mut().zip(&qs) {
                let a = attend(model, &self.cache.layers[li], q, n);
                block_tail(model, layer, row, &a);
            }
        }
        self.cache.len = n;
    }

    /// Feed one target token; returns the final hidden state of its row.
    pub fn push(&mut self, tok: TargetToken) -> Result<Vec<T>> {
        let model = self.model;
        let pos = self.cache.len;
        if pos >= model.config.max_len {
            return Err(Error::TooLong {
                len: pos + 1,
                max: model.config.max_len,
            });
        }
        let mut x = embed(model, self.page, tok, pos)?;
        for (li, layer) in model.ids.layers.iter().enumerate() {
            let (q, k, v) = qkv(model, layer, &x);
            let cache = &mut self.cache.layers[li];
            cache.k.extend(k);
            cache.v.extend(v);
            let a = attend(model, cache, &q, pos + 1);
            block_tail(model, layer, &mut x, &a);
        }
        self.cache.len += 1;
        let p = &model.params;
        let mut h = vec![T::zero(); x.len()];
        kernels::layer_norm_row(
            &x,
            p.get(model.ids.lnf_g).data(),
            p.get(model.ids.lnf_b).data(),
            T::of(model.config.ln_eps),
            &mut h,
        );
        Ok(h)
    }

    pub fn scores(&self, hidden: &[T]) -> Scores<T> {
        let model = self.model;
        let d = model.config.d_model;
        let gate_logit = kernels::dot(hidden, model.params.get(model.ids.gate_w).data()) + model.params.get(model.ids.gate_b).data()[0];
        Scores {
            gate_logit,
            source: self.source.chunks(d).map(|e| kernels::dot(hidden, e)).collect(),
            special: self.special.chunks(d).map(|e| kernels::dot(hidden, e)).collect(),
        }
    }
}

/// Input embedding of `tok` at packed position `pos`.
fn embed<T: Real>(model: &Model<T>, page: &Page, tok: TargetToken, pos: usize) -> Result<Vec<T>> {
    let p = &model.params;
    let ids = &model.ids;
    let mut e;
    match tok {
        TargetToken::SourceRef(i) => {
            let w = page.words.get(i).ok_or(Error::Index {
                index: i,
                len: page.words.len(),
            })?;
            e = p.get(ids.word).row(model.vocab.id(&w.text)).to_vec();
            let b = w.bbox.coords();
            for (c, id) in [ids.x0, ids.y0, ids.x1, ids.y1].into_iter().enumerate() {
                add_row(&mut e, p.get(id).row(b[c] as usize));
            }
        }
        other => {
            let row = model.special_row(other)?;
            e = p.get(ids.word).row(model.special_word_id(row)).to_vec();
            add_row(&mut e, p.get(ids.spatial_id).row(row));
        }
    }
    add_row(&mut e, p.get(ids.pos).row(pos));
    Ok(e)
}

fn qkv<T: Real>(model: &Model<T>, layer: &LayerIds, x: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let p = &model.params;
    let d = x.len();
    let mut h = vec![T::zero(); d];
    kernels::layer_norm_row(
        x,
        p.get(layer.ln1_g).data(),
        p.get(layer.ln1_b).data(),
        T::of(model.config.ln_eps),
        &mut h,
    );
    let proj = |w, b| {
        let mut out = vec![T::zero(); d];
        kernels::vec_mat(&h, p.get(w).data(), Some(p.get(b).data()), &mut out);
        out
    };
    (proj(layer.wq, layer.bq), proj(layer.wk, layer.bk), proj(layer.wv, layer.bv))
}

/// Multi-head attention of one query over the first `len` cached rows.
fn attend<T: Real>(model: &Model<T>, cache: &LayerCache<T>, q: &[T], len: usize) -> Vec<T> {
    let d = q.len();
    let dh = model.config.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); d];
    let mut scores = vec![T::zero(); len];
    let mut probs = vec![T::zero(); len];
    for h in 0..model.config.n_heads {
        let cols = h * dh..(h + 1) * dh;
        for (j, s) in scores.iter_mut().enumerate() {
            *s = kernels::dot(&q[cols.clone()], &cache.k[j * d + cols.start..j * d + cols.end]) * scale;
        }
        kernels::softmax_row(&scores, &mut probs);
        for (j, &w) in probs.iter().enumerate() {
            let v = &cache.v[j * d + cols.start..j * d + cols.end];
            for (o, &vv) in out[cols.clone()].iter_mut().zip(v) {
                *o = *o + w * vv;
            }
        }
    }
    out
}

/// Output projection, residual, feed-forward and residual.
fn block_tail<T: Real>(model: &Model<T>, layer: &LayerIds, x: &mut [T], attn: &[T]) {
    let p = &model.params;
    let d = x.len();
    let mut o = vec![T::zero(); d];
    kernels::vec_mat(attn, p.get(layer.wo).data(), Some(p.get(layer.bo).data()), &mut o);
    add_row(x, &o);
    let mut h = vec![T::zero(); d];
    kernels::layer_norm_row(
        x,
        p.get(layer.ln2_g).data(),
        p.get(layer.ln2_b).data(),
        T::of(model.config.ln_eps),
        &mut h,
    );
    let mut f = vec![T::zero(); model.config.d_ff];
    kernels::vec_mat(&h, p.get(layer.w1).data(), Some(p.get(layer.b1).data()), &mut f);
    f.iter_mut().for_each(|v| *v = kernels::gelu(*v));
    kernels::vec_mat(&f, p.get(layer.w2).data(), Some(p.get(layer.b2).data()), &mut o);
    add_row(x, &o);
}
