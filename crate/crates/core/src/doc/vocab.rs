use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{LabelSet, Page};

/// Lowercased word vocabulary with reserved ids for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK: usize = 0;
    pub const B: usize = 1;
    pub const E: usize = 2;
    pub const T: usize = 3;
    pub const SOS: usize = 4;
    pub const EOS: usize = 5;
    pub const RESERVED: [&'static str; 6] = ["<unk>", "[B]", "[E]", "[T]", "[SOS]", "[EOS]"];

    pub fn reserved_only() -> Self {
        Self::from(Self::RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of a corpus word (lowercased), `UNK` if absent.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(Self::UNK)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(&word.to_lowercase()).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.get(word).is_some()
    }

    fn insert(&mut self, word: String) -> usize {
        if let Some(&id) = self.index.get(&word) {
            return id;
        }
        let id = self.words.len();
        self.index.insert(word.clone(), id);
        self.words.push(word);
        id
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

/// Vocabulary over `pages` keeping words seen at least `min_freq` times.
/// Label-name words are always included.
pub fn build_vocab<'a>(pages: impl IntoIterator<Item = &'a Page>, labels: &[&LabelSet], min_freq: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for page in pages {
        for w in &page.words {
            *counts.entry(w.text.to_lowercase()).or_default() += 1;
        }
    }
    let mut vocab = Vocab::reserved_only();
    for set in labels {
        for w in set.words() {
            vocab.insert(w);
        }
    }
    let mut frequent: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
    frequent.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (w, _) in frequent {
        if w != Vocab::RESERVED[Vocab::UNK] {
            vocab.insert(w);
        }
    }
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::BoundingBox;

    fn page(words: &[&str]) -> Page {
        let b = BoundingBox::new(0, 0, 1, 1).unwrap();
        Page::new("p", 1.0, 1.0, words.iter().map(|w| (w.to_string(), b)).collect(), vec![]).unwrap()
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = build_vocab([&page(&["Date", "date", "x"])], &[&LabelSet::funsd()], 2);
        for (i, w) in Vocab::RESERVED.iter().enumerate() {
            assert_eq!(v.word(i), *w);
        }
        assert!(v.contains("DATE"));
        assert!(!v.contains("x"));
        assert_eq!(v.id("x"), Vocab::UNK);
        assert!(v.contains("question"));
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let v = build_vocab([&page(&["a", "b"])], &[], 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("b"), v.id("b"));
    }
}
