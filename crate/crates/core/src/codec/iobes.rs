use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::doc::{check_entities, Entity, LabelSet};
use crate::error::{Error, Result};

/// Per-word chunk tag; the payload is a label id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(String),
    I(String),
    E(String),
    S(String),
}

impl Tag {
    /// Prefix letter.
    pub fn prefix(&self) -> char {
        match self {
            Tag::O => 'O',
            Tag::B(_) => 'B',
            Tag::I(_) => 'I',
            Tag::E(_) => 'E',
            Tag::S(_) => 'S',
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(l) | Tag::I(l) | Tag::E(l) | Tag::S(l) => Some(l),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            None => f.write_str("O"),
            Some(l) => write!(f, "{}-{l}", self.prefix()),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (p, label) = s
            .split_once('-')
            .filter(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::Validation(format!("bad tag `{s}`")))?;
        let label = label.to_string();
        match p {
            "B" => Ok(Tag::B(label)),
            "I" => Ok(Tag::I(label)),
            "E" => Ok(Tag::E(label)),
            "S" => Ok(Tag::S(label)),
            _ => Err(Error::Validation(format!("bad tag `{s}`"))),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn entities_to_iobes(n_words: usize, entities: &[Entity]) -> Result<Vec<Tag>> {
    check_entities(entities, n_words)?;
    let mut tags = vec![Tag::O; n_words];
    for e in entities {
        if e.start == e.end {
            tags[e.start] = Tag::S(e.label.clone());
            continue;
        }
        tags[e.start] = Tag::B(e.label.clone());
        for t in &mut tags[e.start + 1..e.end] {
            *t = Tag::I(e.label.clone());
        }
        tags[e.end] = Tag::E(e.label.clone());
    }
    Ok(tags)
}

/// `O` followed by `B/I/E/S` for each label: `4·|labels| + 1` tags.
pub fn iobes_tagset(labels: &LabelSet) -> Vec<Tag> {
    let mut out = vec![Tag::O];
    for l in &labels.labels {
        out.push(Tag::B(l.id.clone()));
        out.push(Tag::I(l.id.clone()));
        out.push(Tag::E(l.id.clone()));
        out.push(Tag::S(l.id.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(tags: &[Tag]) -> Vec<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn scheme_examples() {
        assert_eq!(
            strs(&entities_to_iobes(1, &[Entity::new(0, 0, "question")]).unwrap()),
            ["S-question"]
        );
        assert_eq!(
            strs(&entities_to_iobes(3, &[Entity::new(0, 2, "x")]).unwrap()),
            ["B-x", "I-x", "E-x"]
        );
        assert_eq!(strs(&entities_to_iobes(5, &[]).unwrap()), ["O"; 5]);
        assert!(entities_to_iobes(3, &[Entity::new(0, 1, "x"), Entity::new(1, 2, "y")]).is_err());
    }

    #[test]
    fn tagset_sizes() {
        assert_eq!(iobes_tagset(&LabelSet::funsd()).len(), 13);
        assert_eq!(iobes_tagset(&LabelSet::cord_lv1()).len(), 17);
        assert_eq!(iobes_tagset(&LabelSet::from_ids("one", &["x"]).unwrap()).len(), 5);
    }

    #[test]
    fn tags_parse_back() {
        for t in iobes_tagset(&LabelSet::cord_lv1()) {
            assert_eq!(t.to_string().parse::<Tag>().unwrap(), t);
        }
        assert!("Q-x".parse::<Tag>().is_err());
        assert!("B-".parse::<Tag>().is_err());
    }
}
