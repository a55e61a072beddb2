use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::category;
use crate::data::{EncodedInputs, GroundingDataset};
use crate::error::{CiteError, Result};
use crate::network::{concept_weights, ModelParams};
use crate::tensor::{Matrix, Mode};

pub const TOP_PHRASES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopPhrase {
    pub phrase_id: String,
    pub text: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub embedding: usize,
    pub per_category: BTreeMap<String, WeightStat>,
    pub top_phrases: Vec<TopPhrase>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConceptReport {
    pub k: usize,
    pub embeddings: Vec<EmbeddingReport>,
}

impl ConceptReport {
    /// Builds the report from an explicit `U` (one row per entry of `phrases`).
    pub fn from_weights(ds: &GroundingDataset, phrases: &[usize], u: &Matrix) -> Result<Self> {
        if u.rows() != phrases.len() {
            return Err(CiteError::dim(
                "concept_report",
                format!("{} weight rows for {} phrases", u.rows(), phrases.len()),
            ));
        }
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (row, &p) in phrases.iter().enumerate() {
            groups.entry(category(ds, p)).or_default().push(row);
        }
        let embeddings = (0..u.cols())
            .map(|k| {
                let per_category = groups
                    .iter()
                    .map(|(cat, rows)| {
                        let n = rows.len() as f64;
                        let mean = rows.iter().map(|&r| u[(r, k)]).sum::<f64>() / n;
                        let var = rows.iter().map(|&r| (u[(r, k)] - mean).powi(2)).sum::<f64>() / n;
                        (cat.clone(), WeightStat { mean, std: var.sqrt(), count: rows.len() })
                    })
                    .collect();
                let mut order: Vec<usize> = (0..phrases.len()).collect();
                let id = |r: usize| &ds.phrases[phrases[r]].sample.phrase_id;
                order.sort_by(|&a, &b| u[(b, k)].total_cmp(&u[(a, k)]).then_with(|| id(a).cmp(id(b))));
                let top_phrases = order
                    .into_iter()
                    .take(TOP_PHRASES)
                    .map(|r| TopPhrase {
                        phrase_id: id(r).clone(),
                        text: ds.phrases[phrases[r]].text.clone(),
                        weight: u[(r, k)],
                    })
                    .collect();
                EmbeddingReport { embedding: k, per_category, top_phrases }
            })
            .collect();
        Ok(Self { k: u.cols(), embeddings })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| CiteError::io(path, e))
    }
}

/// Per-embedding weight statistics of a learned-assignment model over `phrases`.
pub fn concept_report(
    model: &ModelParams,
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    phrases: &[usize],
) -> Result<ConceptReport> {
    let (u, _) = concept_weights(model, &enc.phrases.gather_rows(phrases)?, Mode::Infer)?;
    ConceptReport::from_weights(ds, phrases, &u)
}

/// Majority-vote purity: each predicted cluster is credited with its most
/// common true label.
pub fn concept_purity(assigned: &[usize], labels: &[usize]) -> f64 {
    if assigned.is_empty() {
        return 0.0;
    }
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &l) in assigned.iter().zip(labels) {
        *table.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / assigned.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_examples() {
        assert_eq!(concept_purity(&[0, 0, 1, 1], &[3, 3, 2, 2]), 1.0);
        assert_eq!(concept_purity(&[0, 0, 0, 0], &[0, 1, 2, 3]), 0.25);
        assert_eq!(concept_purity(&[0, 0, 1, 1], &[0, 1, 1, 1]), 0.75);
    }
}
