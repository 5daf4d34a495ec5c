//! Pages, words, entities, label sets and datasets.

mod fewshot;
pub mod funsd;
pub mod synth;
mod vocab;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fewshot::{sample_few_shot, FewShotSplit};
pub use synth::{generate_synthetic_corpus, generate_synthetic_split, SyntheticSpec};
pub use vocab::{build_vocab, Vocab};

/// Upper bound of quantized layout coordinates.
pub const COORD_MAX: u16 = 1000;

/// Quantized box, `(x0, y0)` top-left and `(x1, y1)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u16; 4]")]
pub struct BoundingBox {
    pub x0: u16,
    pub y0: u16,
    pub x1: u16,
    pub y1: u16,
}

impl BoundingBox {
    pub fn new(x0: u16, y0: u16, x1: u16, y1: u16) -> Result<Self> {
        if x0 > x1 || y0 > y1 || x1 > COORD_MAX || y1 > COORD_MAX {
            return Err(Error::InvalidBox(format!("[{x0}, {y0}, {x1}, {y1}]")));
        }
        Ok(BoundingBox { x0, y0, x1, y1 })
    }

    pub fn coords(&self) -> [u16; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        let conv = |c: i64| u16::try_from(c).map_err(|_| Error::InvalidBox(format!("{v:?}")));
        BoundingBox::new(conv(v[0])?, conv(v[1])?, conv(v[2])?, conv(v[3])?)
    }
}

impl From<BoundingBox> for [u16; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// Quantize a raw box to the 0 to 1000 grid.
pub fn normalize_bbox(raw: [f64; 4], page_w: f64, page_h: f64) -> Result<BoundingBox> {
    if !(page_w > 0.0 && page_h > 0.0) {
        return Err(Error::InvalidBox(format!("page extent {page_w}x{page_h}")));
    }
    let [x0, y0, x1, y1] = raw;
    if x0 > x1 || y0 > y1 || raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBox(format!("{raw:?}")));
    }
    let q = |v: f64, extent: f64| (1000.0 * v / extent).round().clamp(0.0, 1000.0) as u16;
    BoundingBox::new(q(x0, page_w), q(y0, page_h), q(x1, page_w), q(y1, page_h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(skip)]
    pub index: usize,
}

/// Inclusive word span `[start, end]` with a label id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Entity {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Entity {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Check that spans are in range, sorted by start, and non-overlapping.
pub fn check_entities(entities: &[Entity], n_words: usize) -> Result<()> {
    let mut offenders = Vec::new();
    for (i, e) in entities.iter().enumerate() {
        if e.start > e.end || e.end >= n_words {
            return Err(Error::Validation(format!(
                "entity {i} span [{}, {}] invalid for {n_words} words",
                e.start, e.end
            )));
        }
        if i > 0 && entities[i - 1].end >= e.start {
            offenders.push(format!(
                "[{}, {}] {} / [{}, {}] {}",
                entities[i - 1].start,
                entities[i - 1].end,
                entities[i - 1].label,
                e.start,
                e.end,
                e.label
            ));
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(Error::Overlap(offenders.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub words: Vec<Word>,
    pub entities: Vec<Entity>,
}

impl Page {
    pub fn new(id: impl Into<String>, width: f64, height: f64, words: Vec<(String, BoundingBox)>, entities: Vec<Entity>) -> Result<Self> {
        let words = words
            .into_iter()
            .enumerate()
            .map(|(index, (text, bbox))| Word { text, bbox, index })
            .collect();
        let page = Page {
            id: id.into(),
            width,
            height,
            words,
            entities,
        };
        page.validate()?;
        Ok(page)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            if w.text.trim().is_empty() {
                return Err(Error::Validation(format!("page {}: word {i} is empty", self.id)));
            }
            if w.index != i {
                return Err(Error::Validation(format!(
                    "page {}: word index {} at position {i}",
                    self.id, w.index
                )));
            }
        }
        check_entities(&self.entities, self.words.len()).map_err(|e| match e {
            Error::Overlap(s) => Error::Overlap(format!("page {}: {s}", self.id)),
            Error::Validation(s) => Error::Validation(format!("page {}: {s}", self.id)),
            other => other,
        })
    }

    /// Same words with a different entity list.
    pub fn with_entities(&self, entities: Vec<Entity>) -> Page {
        Page { entities, ..self.clone() }
    }

    fn reindex(&mut self) {
        for (i, w) in self.words.iter_mut().enumerate() {
            w.index = i;
        }
    }
}

/// An entity type: its id in the annotations and its surface name (one or
/// more words).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: String,
    #[serde(with = "surface_name")]
    pub name: Vec<String>,
}

mod surface_name {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(words: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&words.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(super::split_name(&raw))
    }
}

fn split_name(raw: &str) -> Vec<String> {
    raw.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Ordered labels with configurable surface names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub id: String,
    pub labels: Vec<Label>,
}

impl LabelSet {
    /// `pairs` = (label id, surface name); names are split on whitespace.
    pub fn new(id: impl Into<String>, pairs: &[(&str, &str)]) -> Result<Self> {
        let set = LabelSet {
            id: id.into(),
            labels: pairs
                .iter()
                .map(|(lid, name)| Label {
                    id: lid.to_string(),
                    name: split_name(name),
                })
                .collect(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Labels whose surface name equals their id.
    pub fn from_ids<S: AsRef<str>>(id: impl Into<String>, ids: &[S]) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = ids.iter().map(|s| (s.as_ref(), s.as_ref())).collect();
        Self::new(id, &pairs)
    }

    pub fn funsd() -> Self {
        Self::new("orig", &[("header", "header"), ("question", "question"), ("answer", "answer")]).expect("static label set")
    }

    pub fn cord_lv1() -> Self {
        Self::new(
            "orig",
            &[("menu", "menu"), ("void-menu", "void"), ("subtotal", "sub"), ("total", "total")],
        )
        .expect("static label set")
    }

    /// Keep ids, replace surface names positionally.
    pub fn renamed(&self, id: impl Into<String>, names: &[&str]) -> Result<Self> {
        if names.len() != self.labels.len() {
            return Err(Error::Config(format!(
                "label set `{}` has {} labels, got {} names",
                self.id,
                self.labels.len(),
                names.len()
            )));
        }
        let pairs: Vec<(&str, &str)> = self.labels.iter().zip(names).map(|(l, n)| (l.id.as_str(), *n)).collect();
        Self::new(id, &pairs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let mut seen = HashSet::new();
        let mut names = HashSet::new();
        for l in &self.labels {
            if l.name.is_empty() {
                return Err(Error::Config(format!("label `{}` has an empty surface name", l.id)));
            }
            if !seen.insert(l.id.as_str()) {
                return Err(Error::Config(format!("duplicate label id `{}`", l.id)));
            }
            if !names.insert(l.name.clone()) {
                return Err(Error::Config(format!("duplicate surface name `{}`", l.name.join(" "))));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.id == id)
    }

    pub fn get(&self, idx: usize) -> &Label {
        &self.labels[idx]
    }

    /// Distinct surface-name words in order of first appearance.
    pub fn words(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.labels {
            for w in &l.name {
                if !out.contains(w) {
                    out.push(w.clone());
                }
            }
        }
        out
    }

    /// Labels whose surface name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a [String]) -> impl Iterator<Item = (usize, &'a Label)> + 'a {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.name.len() >= prefix.len() && l.name[..prefix.len()] == *prefix)
    }

    /// Label whose surface name is exactly `words`.
    pub fn exact(&self, words: &[String]) -> Option<usize> {
        self.labels.iter().position(|l| l.name == words)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: LabelSet = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
        set.validate()?;
        Ok(set)
    }
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Label ids present in the annotations, in canonical order.
    pub labels: Vec<String>,
    pub pages: Vec<Page>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    #[serde(flatten)]
    dataset: Dataset,
}

impl Dataset {
    pub fn new(name: impl Into<String>, labels: Vec<String>, pages: Vec<Page>) -> Self {
        Dataset {
            name: name.into(),
            labels,
            pages,
        }
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for p in &self.pages {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Validation(format!("duplicate page id `{}`", p.id)));
            }
            p.validate()?;
            for e in &p.entities {
                if !self.labels.contains(&e.label) {
                    return Err(Error::Validation(format!("page {}: unknown label `{}`", p.id, e.label)));
                }
            }
        }
        Ok(())
    }

    pub fn mean_entities_per_page(&self) -> f64 {
        if self.pages.is_empty() {
            return 0.0;
        }
        self.pages.iter().map(|p| p.entities.len()).sum::<usize>() as f64 / self.pages.len() as f64
    }

    /// Label set with surface names equal to the label ids.
    pub fn default_label_set(&self) -> Result<LabelSet> {
        LabelSet::from_ids("orig", &self.labels)
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            version: DATASET_FORMAT_VERSION,
            dataset: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serializes")
    }

    pub fn from_json(raw: &str, origin: &Path) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(raw).map_err(|e| Error::parse(origin, e))?;
        if file.version != DATASET_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "{}: dataset format version {} (expected {DATASET_FORMAT_VERSION})",
                origin.display(),
                file.version
            )));
        }
        let mut ds = file.dataset;
        ds.pages.iter_mut().for_each(Page::reindex);
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw, path)
    }
}
