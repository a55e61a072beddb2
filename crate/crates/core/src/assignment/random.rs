use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConceptWeights, WeightSource};
use crate::error::{CiteError, Result};

/// Persistent uniform random phrase → embedding assignment.
///
/// The first lookup of a phrase draws its index from the seeded generator;
/// later lookups return the recorded index.
#[derive(Clone, Debug)]
pub struct RandomAssigner {
    k: usize,
    rng: ChaCha8Rng,
    table: BTreeMap<String, usize>,
}

impl RandomAssigner {
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(CiteError::Validation("random assignment needs K ≥ 1".into()));
        }
        Ok(Self {
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
            table: BTreeMap::new(),
        })
    }

    pub fn index(&mut self, phrase_id: &str) -> usize {
        if let Some(&i) = self.table.get(phrase_id) {
            return i;
        }
        let i = self.rng.gen_range(0..self.k);
        self.table.insert(phrase_id.to_string(), i);
        i
    }

    pub fn assign(&mut self, phrase_id: &str) -> ConceptWeights {
        let i = self.index(phrase_id);
        ConceptWeights::one_hot(self.k, i, WeightSource::Random).expect("index < k")
    }

    pub fn table(&self) -> &BTreeMap<String, usize> {
        &self.table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persistent_assignment() {
        let mut r = RandomAssigner::new(5, 1).unwrap();
        let a = r.assign("dog");
        r.assign("cat");
        assert_eq!(r.assign("dog"), a);
    }

    #[test]
    fn single_embedding() {
        let mut r = RandomAssigner::new(1, 3).unwrap();
        for p in ["a", "b", "c"] {
            assert_eq!(r.assign(p).as_slice(), &[1.0]);
        }
    }

    #[test]
    fn frequencies_are_uniform() {
        let mut r = RandomAssigner::new(4, 2024).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..10_000 {
            counts[r.index(&format!("phrase-{i}"))] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.22..=0.28).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_table() {
        let build = || {
            let mut r = RandomAssigner::new(3, 77).unwrap();
            for i in 0..50 {
                r.index(&i.to_string());
            }
            r.table().clone()
        };
        assert_eq!(build(), build());
    }
}
