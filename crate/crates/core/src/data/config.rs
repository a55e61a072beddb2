//! Run configuration: a named preset merged with JSON and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::synth::SynthConfig;
use crate::error::{CiteError, Result};
use crate::geometry::SpatialEncoding;
use crate::network::{AssignmentMode, ModelConfig};
use crate::training::{AssignmentKind, TrainConfig};

pub const PRESETS: [&str; 4] = ["flickr30k", "referit", "vgenome", "synth"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    /// Embedding size `M`.
    pub embed_dim: usize,
    /// Number of conditional embeddings `K`.
    pub k: usize,
    pub assignment: AssignmentKind,
    pub spatial: SpatialEncoding,
    pub learning_rate: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub sgd_lr_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    /// Fit k-means on test-split phrases instead of the training split.
    pub kmeans_on_test: bool,
    /// Keep only the first N proposals of each image.
    pub proposals_per_image: Option<usize>,
    /// Coarse category dictionary (JSON), required for coarse assignment on real data.
    pub dictionary: Option<String>,
    pub synth: SynthConfig,
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let base = RunConfig {
        preset: name.to_string(),
        embed_dim: 256,
        k: 4,
        assignment: AssignmentKind::Learned,
        spatial: SpatialEncoding::Flickr,
        learning_rate: 5e-5,
        lambda: 5e-5,
        batch_size: 200,
        patience: 5,
        sgd_lr_factor: 0.1,
        max_epochs: 100,
        seed: 0,
        kmeans_iters: 100,
        kmeans_on_test: false,
        proposals_per_image: None,
        dictionary: None,
        synth: SynthConfig::default(),
    };
    match name {
        "flickr30k" => Ok(base),
        "referit" => Ok(RunConfig {
            k: 12,
            spatial: SpatialEncoding::Referit,
            learning_rate: 5e-4,
            lambda: 5e-4,
            batch_size: 128,
            ..base
        }),
        "vgenome" => Ok(RunConfig {
            k: 12,
            spatial: SpatialEncoding::Referit,
            learning_rate: 5e-5,
            lambda: 5e-4,
            batch_size: 128,
            ..base
        }),
        "synth" => Ok(RunConfig {
            embed_dim: 16,
            learning_rate: 2e-3,
            lambda: 5e-4,
            batch_size: 128,
            max_epochs: 30,
            ..base
        }),
        other => Err(CiteError::Config(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn from_value(v: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| CiteError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Applies a JSON object of overrides; the `preset` key, if any, must already be resolved.
    pub fn merged(&self, overrides: Value) -> Result<RunConfig> {
        if !overrides.is_object() {
            return Err(CiteError::Config("config must be a JSON object".into()));
        }
        let mut v = serde_json::to_value(self).expect("config serialises");
        merge(&mut v, overrides);
        from_value(v)
    }

    /// Applies `key=value` overrides. Dotted keys reach into `synth`; values
    /// parse as JSON when they can and as bare strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<RunConfig> {
        let mut v = serde_json::to_value(self).expect("config serialises");
        for s in sets {
            let s = s.as_ref();
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| CiteError::Config(format!("override `{s}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut v;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| CiteError::Config(format!("unknown config key `{key}`")))?;
            }
            *slot = value;
        }
        from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.k == 0 {
            return Err(CiteError::Config("embed_dim and k must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CiteError::Config("learning_rate must be > 0".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(CiteError::Config("lambda must be ≥ 0".into()));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(CiteError::Config("batch_size and patience must be ≥ 1".into()));
        }
        if self.proposals_per_image == Some(0) {
            return Err(CiteError::Config("proposals_per_image must be ≥ 1".into()));
        }
        self.synth.validate().map_err(|e| CiteError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            batch_size: self.batch_size,
            patience: self.patience,
            sgd_lr_factor: self.sgd_lr_factor,
            max_epochs: self.max_epochs,
            seed: self.seed,
            assignment: self.assignment,
        }
    }

    /// Network configuration for the given input widths. `K = 1` with learned
    /// assignment is the plain similarity network.
    pub fn model_config(&self, region_dim: usize, phrase_dim: usize) -> ModelConfig {
        if self.k == 1 && self.assignment == AssignmentKind::Learned {
            return ModelConfig::similarity_network(region_dim, phrase_dim, self.embed_dim, self.seed);
        }
        let mode = match self.assignment {
            AssignmentKind::Learned => AssignmentMode::Learned,
            _ => AssignmentMode::External,
        };
        ModelConfig::new(region_dim, phrase_dim, self.embed_dim, self.k, mode, self.seed)
    }
}

/// Reads a JSON config: defaults come from its `preset` (or `fallback_preset`),
/// then every other key overrides. Unknown keys are rejected.
pub fn load_config(path: impl AsRef<Path>, fallback_preset: &str) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CiteError::io(path, e))?;
    parse_config(&text, fallback_preset)
        .map_err(|e| CiteError::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
}

pub fn parse_config(text: &str, fallback_preset: &str) -> Result<RunConfig> {
    let v: Value = serde_json::from_str(text).map_err(|e| CiteError::Config(e.to_string()))?;
    let name = match v.get("preset") {
        None => fallback_preset.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(CiteError::Config(format!("preset must be a string, got {other}"))),
    };
    preset(&name)?.merged(v)
}
