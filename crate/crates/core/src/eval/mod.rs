//! Chunk-level precision, recall and F1 from IOBES tags, multi-seed
//! aggregation and reports.

mod report;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_entities, entities_to_iobes, Diagnostic, Tag};
use crate::decode::{decode_page, DecodeOptions};
use crate::doc::{Entity, Page};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::par::Exec;
use crate::tensor::Real;

pub use report::{aggregate_runs, render_csv, render_text, MeanStd, RunReport, SeedRun, Summary};

/// Chunk as `(start, end inclusive, label)`.
pub type Chunk = (usize, usize, String);

fn split(tag: &Tag) -> (char, &str) {
    (tag.prefix(), tag.label().unwrap_or("_"))
}

fn end_of_chunk(prev: char, tag: char, prev_type: &str, ty: &str) -> bool {
    matches!(prev, 'E' | 'S') || (matches!(prev, 'B' | 'I') && matches!(tag, 'B' | 'S' | 'O')) || (prev != 'O' && prev_type != ty)
}

fn start_of_chunk(prev: char, tag: char, prev_type: &str, ty: &str) -> bool {
    matches!(tag, 'B' | 'S') || (matches!(prev, 'E' | 'S' | 'O') && matches!(tag, 'E' | 'I')) || (tag != 'O' && prev_type != ty)
}

/// Chunks under the permissive default-mode rules: a stray `I-`/`E-` opens a
/// chunk and a type change closes one.
pub fn extract_chunks(tags: &[Tag]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let (mut prev, mut prev_type) = ('O', "_");
    let mut begin = 0;
    let end = Tag::O;
    for (i, tag) in tags.iter().chain(std::iter::once(&end)).enumerate() {
        let (p, ty) = split(tag);
        if end_of_chunk(prev, p, prev_type, ty) {
            chunks.push((begin, i - 1, prev_type.to_string()));
        }
        if start_of_chunk(prev, p, prev_type, ty) {
            begin = i;
        }
        prev = p;
        prev_type = ty;
    }
    chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EntityMetrics {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EntityMetrics {
            tp,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }

    /// Micro-aggregate with another set of counts.
    pub fn merge(&self, other: &EntityMetrics) -> Self {
        Self::from_counts(self.tp + other.tp, self.predicted + other.predicted, self.gold + other.gold)
    }
}

/// Micro-averaged chunk scores over pages of tags.
pub fn chunk_prf(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<EntityMetrics> {
    if gold.len() != pred.len() {
        return Err(Error::Validation(format!("{} gold pages but {} predicted", gold.len(), pred.len())));
    }
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (page, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Validation(format!(
                "page {page}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gc = extract_chunks(g);
        let pc = extract_chunks(p);
        tp += pc.iter().filter(|c| gc.contains(c)).count();
        np += pc.len();
        ng += gc.len();
    }
    Ok(EntityMetrics::from_counts(tp, np, ng))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PagePrediction {
    pub page: String,
    pub entities: Vec<Entity>,
    pub diagnostics: Vec<Diagnostic>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub decode: DecodeOptions,
    pub exec: Exec,
}

/// Decode and read entities from every page.
pub fn predict_pages<T: Real>(model: &Model<T>, pages: &[Page], opts: &EvalOptions) -> Result<Vec<PagePrediction>> {
    opts.exec.try_map(pages, |page| {
        let out = decode_page(model, page, &opts.decode)?;
        let (entities, diagnostics) = decode_entities(&out.sequence, page, &model.labels);
        Ok(PagePrediction {
            page: page.id.clone(),
            entities,
            diagnostics,
            truncated: out.truncated,
        })
    })
}

/// Score predictions against the pages' gold entities.
pub fn score_predictions(pages: &[Page], preds: &[PagePrediction]) -> Result<EntityMetrics> {
    let mut gold = Vec::with_capacity(pages.len());
    let mut pred = Vec::with_capacity(pages.len());
    for (page, p) in pages.iter().zip(preds) {
        gold.push(entities_to_iobes(page.len(), &page.entities)?);
        pred.push(entities_to_iobes(page.len(), &p.entities)?);
    }
    chunk_prf(&gold, &pred)
}

pub fn evaluate_model<T: Real>(model: &Model<T>, pages: &[Page], opts: &EvalOptions) -> Result<EntityMetrics> {
    if pages.is_empty() {
        return Err(Error::Empty("evaluation pages"));
    }
    score_predictions(pages, &predict_pages(model, pages, opts)?)
}

#[cfg(test)]
mod tests;
