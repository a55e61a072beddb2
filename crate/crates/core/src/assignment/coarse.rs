use std::collections::BTreeMap;
use std::path::Path;

use super::{ConceptWeights, WeightSource};
use crate::error::{CiteError, Result};

pub const COARSE_CATEGORIES: [&str; 8] = [
    "people",
    "clothing",
    "body parts",
    "animals",
    "vehicles",
    "instruments",
    "scene",
    "other",
];
pub const OTHER_CATEGORY: usize = 7;

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "with", "and", "or", "his", "her",
    "their", "its", "is", "are", "this", "that", "these", "those", "some", "by", "from", "into",
];

/// Lowercases, splits on non-alphanumerics, and drops stop words.
pub fn normalize_phrase(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOP_WORDS.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Phrase → coarse category lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoarseDictionary {
    entries: BTreeMap<String, Vec<usize>>,
}

impl CoarseDictionary {
    pub fn category_index(name: &str) -> Option<usize> {
        COARSE_CATEGORIES.iter().position(|c| *c == name)
    }

    /// Builds from `category name → phrases`. All eight names must be present
    /// and no others.
    pub fn from_map(map: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        for name in map.keys() {
            if Self::category_index(name).is_none() {
                return Err(CiteError::Validation(format!(
                    "unknown coarse category `{name}`"
                )));
            }
        }
        if let Some(missing) = COARSE_CATEGORIES.iter().find(|c| !map.contains_key(**c)) {
            return Err(CiteError::Validation(format!(
                "dictionary is missing category `{missing}`"
            )));
        }
        let mut dict = Self::default();
        for (name, phrases) in map {
            let idx = Self::category_index(name).expect("checked above");
            for p in phrases {
                dict.add(p, idx);
            }
        }
        Ok(dict)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(text)
            .map_err(|e| CiteError::Data(format!("coarse dictionary: {e}")))?;
        Self::from_map(&map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CiteError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn add(&mut self, phrase: &str, category: usize) {
        let key = normalize_phrase(phrase);
        let cats = self.entries.entry(key).or_default();
        if !cats.contains(&category) {
            cats.push(category);
            cats.sort_unstable();
        }
    }

    /// Categories for a phrase: the full normalised phrase first, then its
    /// tokens from the last (head noun) backwards. Unknown phrases map to `other`.
    pub fn categories(&self, phrase: &str) -> Vec<usize> {
        let key = normalize_phrase(phrase);
        if let Some(c) = self.entries.get(&key) {
            return c.clone();
        }
        for token in key.split(' ').rev() {
            if let Some(c) = self.entries.get(token) {
                return c.clone();
            }
        }
        vec![OTHER_CATEGORY]
    }

    pub fn assign(&self, phrase: &str) -> ConceptWeights {
        let mut u = vec![0.0; COARSE_CATEGORIES.len()];
        for c in self.categories(phrase) {
            u[c] = 1.0;
        }
        ConceptWeights::new(u, WeightSource::Coarse).expect("at least one category is set")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
        "people": ["man", "woman", "young boy"],
        "clothing": ["shirt", "red hat"],
        "body parts": ["hand"],
        "animals": ["dog"],
        "vehicles": ["scooter", "car"],
        "instruments": ["guitar"],
        "scene": ["street"],
        "other": []
    }"#;

    fn one_hot(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 8];
        v[i] = 1.0;
        v
    }

    #[test]
    fn lookup_examples() {
        let d = CoarseDictionary::from_json(FIXTURE).unwrap();
        assert_eq!(d.assign("a man").as_slice(), one_hot(0));
        assert_eq!(d.assign("A Man!").as_slice(), one_hot(0));
        assert_eq!(d.assign("the red scooter").as_slice(), one_hot(4));
        assert_eq!(d.assign("a purple elephant").as_slice(), one_hot(OTHER_CATEGORY));
        assert_eq!(d.assign("the young boy").as_slice(), one_hot(0));
    }

    #[test]
    fn multi_category_phrase_is_multi_hot() {
        let mut d = CoarseDictionary::from_json(FIXTURE).unwrap();
        d.add("guitar", 1);
        let u = d.assign("guitar");
        assert_eq!(u.as_slice().iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn loader_validates_names() {
        let bad = FIXTURE.replace("\"scene\"", "\"scenery\"");
        assert!(CoarseDictionary::from_json(&bad).is_err());
        let missing = r#"{"people": ["man"]}"#;
        assert!(CoarseDictionary::from_json(missing).is_err());
    }

    #[test]
    fn normalisation_drops_stop_words() {
        assert_eq!(normalize_phrase("The man in a Red-Shirt"), "man red shirt");
    }
}
