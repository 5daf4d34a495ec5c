//! Synthetic form pages on a fixed line/slot grid.
//!
//! A page is a stack of text lines; each line has a left and a right slot.
//! Labels are placed into slots according to their band and column rules,
//! leftover slots may receive unlabeled filler words, and words are emitted
//! in (line, x) reading order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_bbox, Dataset, Entity, Page};
use crate::error::{Error, Result};

pub const OTHER_TEMPLATE: &str = "other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Column {
    Left,
    Right,
    /// Spans both slots.
    Full,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layout {
    pub width: u16,
    pub height: u16,
    pub top_margin: u16,
    pub side_margin: u16,
    pub line_height: u16,
    pub box_height: u16,
    pub word_width: u16,
    pub word_gap: u16,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            width: 1000,
            height: 1000,
            top_margin: 20,
            side_margin: 50,
            line_height: 30,
            box_height: 20,
            word_width: 80,
            word_gap: 10,
        }
    }
}

impl Layout {
    fn num_lines(&self) -> usize {
        if self.height < self.top_margin + self.box_height || self.line_height == 0 {
            return 0;
        }
        ((self.height - self.top_margin - self.box_height) / self.line_height) as usize + 1
    }

    fn line_y(&self, line: usize) -> (u16, u16) {
        let y0 = self.top_margin + line as u16 * self.line_height;
        (y0, y0 + self.box_height)
    }

    fn mid(&self) -> u16 {
        self.width / 2
    }

    fn stride(&self) -> u16 {
        self.word_width + self.word_gap
    }

    fn slot_capacity(&self, column: Column) -> usize {
        let half = (self.mid().saturating_sub(self.side_margin)) as usize;
        let span = if column == Column::Full {
            (self.width.saturating_sub(2 * self.side_margin)) as usize
        } else {
            half
        };
        (span + self.word_gap as usize) / self.stride().max(1) as usize
    }

    fn slot_x(&self, slot: usize) -> u16 {
        if slot == 0 {
            self.side_margin
        } else {
            self.mid()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub name: String,
    /// Half-open vertical band `[lo, hi)`; every word box lies inside it.
    pub band: [u16; 2],
    pub column: Column,
    /// Inclusive entity count per page. Ignored when `pair_with` is set.
    pub count_range: [usize; 2],
    #[serde(default = "default_length")]
    pub length_range: [usize; 2],
    /// Place one entity in the right slot of each line whose left slot holds
    /// an entity of this label.
    #[serde(default)]
    pub pair_with: Option<String>,
    #[serde(default = "default_pair_prob")]
    pub pair_prob: f64,
}

fn default_length() -> [usize; 2] {
    [1, 3]
}

fn default_pair_prob() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillerRule {
    /// Probability that a free slot receives filler words.
    pub rate: f64,
    pub length_range: [usize; 2],
}

impl Default for FillerRule {
    fn default() -> Self {
        FillerRule {
            rate: 0.0,
            length_range: [1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pages: usize,
    #[serde(default)]
    pub test_pages: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub layout: Layout,
    pub labels: Vec<LabelRule>,
    #[serde(default)]
    pub other: FillerRule,
    /// Word pools per label name, plus `other` for filler.
    pub vocab_templates: BTreeMap<String, Vec<String>>,
}

impl SyntheticSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))
    }

    /// Built-in form corpus: headers on top, question/answer pairs in
    /// left/right columns, filler words elsewhere.
    pub fn forms() -> Self {
        serde_json::from_str(include_str!("forms.json")).expect("built-in spec parses")
    }

    pub fn label_ids(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    /// Reject layouts and count ranges that cannot be placed on a page.
    pub fn check(&self) -> Result<()> {
        let lay = &self.layout;
        if lay.word_width == 0 || lay.box_height > lay.line_height || lay.width < 2 * lay.side_margin {
            return Err(Error::Config("synthetic layout is degenerate".into()));
        }
        for rule in &self.labels {
            let [lo, hi] = rule.count_range;
            let [llo, lhi] = rule.length_range;
            if lo > hi || llo > lhi || llo == 0 {
                return Err(Error::Config(format!("label `{}`: empty range", rule.name)));
            }
            if !(0.0..=1.0).contains(&rule.pair_prob) {
                return Err(Error::Config(format!("label `{}`: pair_prob outside [0, 1]", rule.name)));
            }
            if self.vocab_templates.get(&rule.name).is_none_or(|v| v.is_empty()) {
                return Err(Error::Config(format!("no vocabulary template for `{}`", rule.name)));
            }
            if let Some(partner) = &rule.pair_with {
                if !self.labels.iter().any(|l| &l.name == partner && l.pair_with.is_none()) {
                    return Err(Error::Config(format!("label `{}` pairs with unknown label `{partner}`", rule.name)));
                }
            }
            let cap = lay.slot_capacity(rule.column);
            if lhi > cap {
                return Err(Error::Infeasible(format!(
                    "label `{}`: {lhi} words do not fit a {:?} slot of {cap} words",
                    rule.name, rule.column
                )));
            }
            let lines = self.band_lines(rule).len();
            let slots = lines * if rule.column == Column::Any { 2 } else { 1 };
            if rule.pair_with.is_none() && hi > slots {
                return Err(Error::Infeasible(format!(
                    "label `{}`: band [{}, {}) holds {slots} slots, count up to {hi}",
                    rule.name, rule.band[0], rule.band[1]
                )));
            }
        }
        if self.other.rate > 0.0 {
            let [lo, hi] = self.other.length_range;
            if lo == 0 || lo > hi || hi > lay.slot_capacity(Column::Left) {
                return Err(Error::Config("filler length range invalid".into()));
            }
            if self.vocab_templates.get(OTHER_TEMPLATE).is_none_or(|v| v.is_empty()) {
                return Err(Error::Config("filler enabled but no `other` template".into()));
            }
        }
        Ok(())
    }

    fn band_lines(&self, rule: &LabelRule) -> Vec<usize> {
        (0..self.layout.num_lines())
            .filter(|&l| {
                let (y0, y1) = self.layout.line_y(l);
                y0 >= rule.band[0] && y1 < rule.band[1]
            })
            .collect()
    }
}

struct Placed {
    line: usize,
    slot: usize,
    words: Vec<String>,
    label: Option<String>,
}

fn draw_words(rng: &mut ChaCha8Rng, pool: &[String], range: [usize; 2]) -> Vec<String> {
    let n = rng.random_range(range[0]..=range[1]);
    (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
}

fn generate_page(spec: &SyntheticSpec, id: String, rng: &mut ChaCha8Rng) -> Result<Page> {
    let lay = &spec.layout;
    let n_lines = lay.num_lines();
    let mut used = vec![[false; 2]; n_lines];
    let mut placed: Vec<Placed> = Vec::new();

    for rule in spec.labels.iter().filter(|r| r.pair_with.is_none()) {
        let pool = &spec.vocab_templates[&rule.name];
        let count = rng.random_range(rule.count_range[0]..=rule.count_range[1]);
        let lines = spec.band_lines(rule);
        for _ in 0..count {
            let free: Vec<(usize, usize)> = lines
                .iter()
                .flat_map(|&l| {
                    let slots: &[usize] = match rule.column {
                        Column::Left | Column::Full => &[0],
                        Column::Right => &[1],
                        Column::Any => &[0, 1],
                    };
                    slots.iter().map(move |&s| (l, s))
                })
                .filter(|&(l, s)| {
                    if rule.column == Column::Full {
                        !used[l][0] && !used[l][1]
                    } else {
                        !used[l][s]
                    }
                })
                .collect();
            if free.is_empty() {
                return Err(Error::Infeasible(format!(
                    "page {id}: no free slot for `{}` in band [{}, {})",
                    rule.name, rule.band[0], rule.band[1]
                )));
            }
            let (line, slot) = free[rng.random_range(0..free.len())];
            used[line][slot] = true;
            if rule.column == Column::Full {
                used[line][1] = true;
            }
            placed.push(Placed {
                line,
                slot,
                words: draw_words(rng, pool, rule.length_range),
                label: Some(rule.name.clone()),
            });
        }
    }

    for rule in spec.labels.iter().filter(|r| r.pair_with.is_some()) {
        let partner = rule.pair_with.as_deref().unwrap();
        let pool = &spec.vocab_templates[&rule.name];
        let band = spec.band_lines(rule);
        let mut anchors: Vec<usize> = placed
            .iter()
            .filter(|p| p.slot == 0 && p.label.as_deref() == Some(partner))
            .map(|p| p.line)
            .collect();
        anchors.sort_unstable();
        for line in anchors {
            if used[line][1] || !band.contains(&line) || !rng.random_bool(rule.pair_prob) {
                continue;
            }
            used[line][1] = true;
            placed.push(Placed {
                line,
                slot: 1,
                words: draw_words(rng, pool, rule.length_range),
                label: Some(rule.name.clone()),
            });
        }
    }

    if spec.other.rate > 0.0 {
        let pool = &spec.vocab_templates[OTHER_TEMPLATE];
        for (line, slots) in used.iter_mut().enumerate() {
            for (slot, taken) in slots.iter_mut().enumerate() {
                if !*taken && rng.random_bool(spec.other.rate) {
                    *taken = true;
                    placed.push(Placed {
                        line,
                        slot,
                        words: draw_words(rng, pool, spec.other.length_range),
                        label: None,
                    });
                }
            }
        }
    }

    placed.sort_by_key(|p| (p.line, p.slot));
    let (w, h) = (lay.width as f64, lay.height as f64);
    let mut words = Vec::new();
    let mut entities = Vec::new();
    for p in placed {
        let (y0, y1) = lay.line_y(p.line);
        let start = words.len();
        for (t, text) in p.words.into_iter().enumerate() {
            let x0 = lay.slot_x(p.slot) + t as u16 * lay.stride();
            let raw = [x0 as f64, y0 as f64, (x0 + lay.word_width) as f64, y1 as f64];
            words.push((text, normalize_bbox(raw, w, h)?));
        }
        if let Some(label) = p.label {
            entities.push(Entity::new(start, words.len() - 1, label));
        }
    }
    if words.is_empty() {
        // keep pages non-empty so every page has a source sequence
        let pool = spec
            .vocab_templates
            .get(OTHER_TEMPLATE)
            .or_else(|| spec.vocab_templates.values().next())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config("no vocabulary templates".into()))?;
        let (y0, y1) = lay.line_y(0);
        let x0 = lay.side_margin;
        let raw = [x0 as f64, y0 as f64, (x0 + lay.word_width) as f64, y1 as f64];
        words.push((pool[0].clone(), normalize_bbox(raw, w, h)?));
    }
    Page::new(id, w, h, words, entities)
}

fn generate(spec: &SyntheticSpec, seed: u64, count: usize, prefix: &str) -> Result<Dataset> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pages = (0..count)
        .map(|i| generate_page(spec, format!("{prefix}-{seed}-{i:04}"), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::new("synthetic", spec.label_ids(), pages);
    ds.validate()?;
    Ok(ds)
}

/// `spec.pages` pages, deterministic in `seed`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    generate(spec, seed, spec.pages, "synth")
}

/// Training corpus plus `spec.test_pages` held-out pages from an independent stream.
pub fn generate_synthetic_split(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = generate(spec, seed, spec.pages, "train")?;
    let test = generate(spec, seed ^ 0x9e37_79b9_7f4a_7c15, spec.test_pages, "test")?;
    Ok((train, test))
}
