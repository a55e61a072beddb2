use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AssignmentKind;
use crate::assignment::{kmeans_assign, kmeans_fit, CoarseDictionary, KMeansModel, RandomAssigner, COARSE_CATEGORIES};
use crate::data::{GroundingDataset, Split};
use crate::error::{CiteError, Result};
use crate::tensor::Matrix;

/// Source of concept weights for every phrase of a dataset.
///
/// External assignments are resolved once, up front, into a phrase id → `U`
/// table so that training and evaluation see exactly the same vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Assigner {
    /// The network's concept branch supplies `U`.
    Learned,
    Table {
        source: AssignmentKind,
        k: usize,
        weights: BTreeMap<String, Vec<f64>>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct AssignOptions {
    pub seed: u64,
    pub kmeans_iters: usize,
    /// Cluster the test split's phrases instead of the training split's.
    pub kmeans_on_test: bool,
    pub dictionary: Option<CoarseDictionary>,
}

impl Assigner {
    /// `K = 1` under learned assignment becomes the fixed `U = [1]` baseline.
    pub fn build(kind: AssignmentKind, k: usize, ds: &GroundingDataset, opts: &AssignOptions) -> Result<Self> {
        let mut weights = BTreeMap::new();
        let ids = ds.phrases.iter().map(|p| p.sample.phrase_id.clone());
        match kind {
            AssignmentKind::Learned if k > 1 => return Ok(Assigner::Learned),
            AssignmentKind::Learned => {
                weights.extend(ids.map(|id| (id, vec![1.0])));
            }
            AssignmentKind::Kmeans => {
                let model = fit_kmeans(ds, k, opts)?;
                for (id, p) in ids.zip(&ds.phrases) {
                    let x = ds.phrase_features.row(p.sample.feature_row);
                    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                    weights.insert(id, kmeans_assign(&x, &model)?.as_slice().to_vec());
                }
            }
            AssignmentKind::Coarse => {
                if k != COARSE_CATEGORIES.len() {
                    return Err(CiteError::Config(format!(
                        "coarse assignment needs k = {}, got {k}",
                        COARSE_CATEGORIES.len()
                    )));
                }
                let dict = opts
                    .dictionary
                    .as_ref()
                    .ok_or_else(|| CiteError::Config("coarse assignment needs a dictionary".into()))?;
                for (id, p) in ids.zip(&ds.phrases) {
                    weights.insert(id, dict.assign(&p.text).as_slice().to_vec());
                }
            }
            AssignmentKind::Random => {
                let mut r = RandomAssigner::new(k, opts.seed)?;
                // training phrases draw first, so their table does not depend on the other splits
                let mut order = ds.phrases_in(Split::Train);
                order.extend(ds.phrases_in(Split::Val));
                order.extend(ds.phrases_in(Split::Test));
                for i in order {
                    let id = &ds.phrases[i].sample.phrase_id;
                    weights.insert(id.clone(), r.assign(id).as_slice().to_vec());
                }
            }
        }
        Ok(Assigner::Table { source: kind, k, weights })
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, Assigner::Learned)
    }

    /// One row of `U` per listed phrase, or `None` when the network produces it.
    pub fn weights(&self, ds: &GroundingDataset, phrases: &[usize]) -> Result<Option<Matrix>> {
        let Assigner::Table { k, weights, .. } = self else {
            return Ok(None);
        };
        let mut m = Matrix::zeros(phrases.len(), *k);
        for (row, &p) in phrases.iter().enumerate() {
            let id = &ds.phrases[p].sample.phrase_id;
            let u = weights
                .get(id)
                .ok_or_else(|| CiteError::Data(format!("no concept weights recorded for phrase {id}")))?;
            m.row_mut(row).copy_from_slice(u);
        }
        Ok(Some(m))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("assigner serialises");
        std::fs::write(path, text).map_err(|e| CiteError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CiteError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CiteError::Data(format!("{}: {e}", path.display())))
    }
}

/// k-means over phrase features of the training split (or the test split).
pub fn fit_kmeans(ds: &GroundingDataset, k: usize, opts: &AssignOptions) -> Result<KMeansModel> {
    let split = if opts.kmeans_on_test { Split::Test } else { Split::Train };
    let phrases = ds.phrases_in(split);
    if phrases.is_empty() {
        return Err(CiteError::Data(format!("no {split} phrases to cluster")));
    }
    kmeans_fit(&ds.phrase_inputs(&phrases), k, opts.seed, opts.kmeans_iters.max(1))
}
