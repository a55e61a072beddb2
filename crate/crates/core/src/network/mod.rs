//! The conditional image-text embedding scoring network.
//!
//! Region and phrase features each pass through two `affine → BN → ReLU`
//! stages of width `4M`, are L2 normalised, and are combined by an
//! element-wise product. A shared stage `P1` maps the joint vector to `M`
//! dimensions, `K` parallel conditional stages produce the columns of `C`,
//! and the per-phrase concept weights `U` fuse them as `F = C·U` before a
//! final affine classifier produces the score. With `K = 1` this is the plain
//! two-branch similarity network.

mod checkpoint;
mod forward;

pub use checkpoint::{load_model, load_model_for, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{concept_weights, forward_pairs, score, ForwardTrace};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CiteError, Result};
use crate::tensor::{BatchStats, Matrix, ParamSet, RunningStats};

/// Width of every layer other than `P1` and the conditional stages, as a multiple of `M`.
pub const HIDDEN_MULTIPLIER: usize = 4;
pub const L2_EPS: f64 = 1e-10;

/// Where the concept weights `U` come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMode {
    /// Produced by the concept weight branch (softmax over logits `φ`).
    Learned,
    /// Supplied per phrase by the caller (k-means, coarse, random, baseline).
    External,
}

impl std::fmt::Display for AssignmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AssignmentMode::Learned => write!(f, "learned"),
            AssignmentMode::External => write!(f, "external"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Region feature width, spatial features included.
    pub region_dim: usize,
    pub phrase_dim: usize,
    /// Embedding size `M`.
    pub embed_dim: usize,
    /// Number of conditional embeddings `K`.
    pub num_embeddings: usize,
    pub assignment: AssignmentMode,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(
        region_dim: usize,
        phrase_dim: usize,
        embed_dim: usize,
        num_embeddings: usize,
        assignment: AssignmentMode,
        seed: u64,
    ) -> Self {
        Self {
            region_dim,
            phrase_dim,
            embed_dim,
            num_embeddings,
            assignment,
            seed,
        }
    }

    /// The single-embedding baseline with a fixed `U = [1]`.
    pub fn similarity_network(region_dim: usize, phrase_dim: usize, embed_dim: usize, seed: u64) -> Self {
        Self::new(region_dim, phrase_dim, embed_dim, 1, AssignmentMode::External, seed)
    }

    pub fn hidden_dim(&self) -> usize {
        HIDDEN_MULTIPLIER * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.region_dim == 0 || self.phrase_dim == 0 || self.embed_dim == 0 || self.num_embeddings == 0 {
            return Err(CiteError::Validation(format!(
                "model dimensions must be ≥ 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(name, rows, cols)` of every trainable tensor, in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let h = self.hidden_dim();
        let m = self.embed_dim;
        let mut out = Vec::new();
        let mut stage = |name: &str, fan_in: usize, fan_out: usize, bn: bool| {
            out.push((format!("{name}.w"), fan_in, fan_out));
            out.push((format!("{name}.b"), 1, fan_out));
            if bn {
                out.push((format!("{name}.gamma"), 1, fan_out));
                out.push((format!("{name}.beta"), 1, fan_out));
            }
        };
        stage("img.fc1", self.region_dim, h, true);
        stage("img.fc2", h, h, true);
        stage("txt.fc1", self.phrase_dim, h, true);
        stage("txt.fc2", h, h, true);
        stage("p1", h, m, true);
        for k in 0..self.num_embeddings {
            stage(&format!("cond{k}"), m, m, true);
        }
        if self.assignment == AssignmentMode::Learned {
            stage("concept.fc1", self.phrase_dim, h, true);
            stage("concept.fc2", h, self.num_embeddings, false);
        }
        stage("cls", m, 1, false);
        out
    }

    /// `(stage name, width)` of every batch-norm stage.
    pub fn bn_stages(&self) -> Vec<(String, usize)> {
        let h = self.hidden_dim();
        let m = self.embed_dim;
        let mut out = vec![
            ("img.fc1".to_string(), h),
            ("img.fc2".to_string(), h),
            ("txt.fc1".to_string(), h),
            ("txt.fc2".to_string(), h),
            ("p1".to_string(), m),
        ];
        out.extend((0..self.num_embeddings).map(|k| (format!("cond{k}"), m)));
        if self.assignment == AssignmentMode::Learned {
            out.push(("concept.fc1".to_string(), h));
        }
        out
    }
}

/// Stable per-tensor seed, so shared tensors are identical across configurations.
fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// All trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub(crate) config: ModelConfig,
    pub(crate) params: ParamSet,
    pub(crate) running: BTreeMap<String, RunningStats>,
}

/// Glorot-uniform weights, zero biases, unit gamma, zero beta.
pub fn init_model(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    for (name, rows, cols) in cfg.tensor_shapes() {
        let value = if name.ends_with(".w") {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed(cfg.seed, &name));
            let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
            Matrix::from_vec(rows, cols, data)?
        } else if name.ends_with(".gamma") {
            Matrix::filled(rows, cols, 1.0)
        } else {
            Matrix::zeros(rows, cols)
        };
        params.insert(name, value);
    }
    let running = cfg
        .bn_stages()
        .into_iter()
        .map(|(name, width)| (name, RunningStats::new(width)))
        .collect();
    Ok(ModelParams {
        config: *cfg,
        params,
        running,
    })
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.params.by_name(name)
    }

    pub fn running_stats(&self, stage: &str) -> Option<&RunningStats> {
        self.running.get(stage)
    }

    pub fn running_stats_mut(&mut self, stage: &str) -> Option<&mut RunningStats> {
        self.running.get_mut(stage)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite()
            && self
                .running
                .values()
                .all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }

    /// Folds the batch statistics recorded by a train-mode pass into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[(String, BatchStats)]) {
        for (name, s) in stats {
            if let Some(r) = self.running.get_mut(name) {
                r.update(s);
            }
        }
    }

    /// A `K = 1`, externally weighted copy containing only conditional embedding `k`.
    pub fn select_embedding(&self, k: usize) -> Result<ModelParams> {
        if k >= self.config.num_embeddings {
            return Err(CiteError::Validation(format!(
                "embedding {k} out of range for K={}",
                self.config.num_embeddings
            )));
        }
        let cfg = ModelConfig {
            num_embeddings: 1,
            assignment: AssignmentMode::External,
            ..self.config
        };
        let mut out = init_model(&cfg)?;
        for (name, _, _) in cfg.tensor_shapes() {
            let src = match name.strip_prefix("cond0.") {
                Some(rest) => format!("cond{k}.{rest}"),
                None => name.clone(),
            };
            let value = self.params.by_name(&src).expect("source tensor exists").clone();
            out.params.insert(name, value);
        }
        for (name, _) in cfg.bn_stages() {
            let src = if name == "cond0" { format!("cond{k}") } else { name.clone() };
            out.running.insert(name, self.running[&src].clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig::new(10, 12, 4, 3, AssignmentMode::Learned, 5);
        assert_eq!(init_model(&cfg).unwrap(), init_model(&cfg).unwrap());
        let other = ModelConfig { seed: 6, ..cfg };
        assert_ne!(init_model(&cfg).unwrap().params, init_model(&other).unwrap().params);
    }

    #[test]
    fn parameter_count_matches_shape_enumeration() {
        // Independent count: affine (in+1)·out, batch norm 2·out.
        let (dv, dt, m, k) = (64usize, 64usize, 256usize, 4usize);
        let h = 4 * m;
        let aff = |i: usize, o: usize| (i + 1) * o;
        let bn = |o: usize| 2 * o;
        let expected = aff(dv, h) + bn(h) + aff(h, h) + bn(h)
            + aff(dt, h) + bn(h) + aff(h, h) + bn(h)
            + aff(h, m) + bn(m)
            + k * (aff(m, m) + bn(m))
            + aff(dt, h) + bn(h) + aff(h, k)
            + aff(m, 1);
        let cfg = ModelConfig::new(dv, dt, m, k, AssignmentMode::Learned, 0);
        assert_eq!(init_model(&cfg).unwrap().parameter_count(), expected);
        assert_eq!(expected, 2_841_605);
    }

    #[test]
    fn invalid_dims_rejected() {
        let cfg = ModelConfig::new(0, 4, 4, 1, AssignmentMode::Learned, 0);
        assert!(matches!(init_model(&cfg), Err(CiteError::Validation(_))));
    }

    #[test]
    fn baseline_shares_tensors_with_single_embedding_cite() {
        let base = init_model(&ModelConfig::similarity_network(6, 5, 3, 9)).unwrap();
        let cite = init_model(&ModelConfig::new(6, 5, 3, 1, AssignmentMode::Learned, 9)).unwrap();
        for (_, name, value) in base.params.iter() {
            assert_eq!(cite.tensor(name), Some(value), "{name}");
        }
    }
}
