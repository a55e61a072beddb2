//! Concept weight vectors `U` supplied from outside the network.

mod coarse;
mod kmeans;
mod random;

pub use coarse::{normalize_phrase, CoarseDictionary, COARSE_CATEGORIES, OTHER_CATEGORY};
pub use kmeans::{kmeans_assign, kmeans_fit, nearest_center, KMeansModel};
pub use random::RandomAssigner;

use serde::{Deserialize, Serialize};

use crate::error::{CiteError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    Coarse,
    Kmeans,
    Random,
    Learned,
}

/// Mixing weights over the `K` conditional embeddings for one phrase.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptWeights {
    u: Vec<f64>,
    source: WeightSource,
}

impl ConceptWeights {
    pub fn new(u: Vec<f64>, source: WeightSource) -> Result<Self> {
        if u.is_empty() {
            return Err(CiteError::Validation("empty concept weight vector".into()));
        }
        if u.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CiteError::Validation(format!(
                "concept weights must be finite and non-negative: {u:?}"
            )));
        }
        match source {
            WeightSource::Kmeans | WeightSource::Random => {
                let ones = u.iter().filter(|&&v| v == 1.0).count();
                let zeros = u.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || zeros != u.len() - 1 {
                    return Err(CiteError::Validation(format!(
                        "{source:?} weights must be one-hot: {u:?}"
                    )));
                }
            }
            WeightSource::Coarse => {
                if u.iter().any(|&v| v != 0.0 && v != 1.0) || !u.contains(&1.0) {
                    return Err(CiteError::Validation(format!(
                        "coarse weights must be binary with a nonzero entry: {u:?}"
                    )));
                }
            }
            WeightSource::Learned => {
                let total: f64 = u.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(CiteError::Validation(format!(
                        "learned weights sum to {total}, not 1"
                    )));
                }
            }
        }
        Ok(Self { u, source })
    }

    pub fn one_hot(k: usize, index: usize, source: WeightSource) -> Result<Self> {
        if index >= k {
            return Err(CiteError::Validation(format!("index {index} out of range for K={k}")));
        }
        let mut u = vec![0.0; k];
        u[index] = 1.0;
        Self::new(u, source)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn source(&self) -> WeightSource {
        self.source
    }

    pub fn k(&self) -> usize {
        self.u.len()
    }

    /// Index of the largest weight, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.u.iter().enumerate() {
            if v > self.u[best] {
                best = i;
            }
        }
        best
    }
}
