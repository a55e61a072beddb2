//! Objective, optimizers, early-stopping schedule, and the training loop.

mod assigner;
mod check;
mod optim;
mod schedule;

pub use assigner::{fit_kmeans, AssignOptions, Assigner};
pub use check::check_model_gradients;
pub use optim::{sgd_step, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{schedule_tick, Action, Phase, ScheduleState};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{EncodedInputs, GroundingDataset, Split};
use crate::error::{CiteError, Result};
use crate::evaluation::accuracy;
use crate::network::{forward_pairs, init_model, ModelConfig, ModelParams};
use crate::sampling::{build_minibatches, mine_pairs, MinedPairs};
use crate::tensor::{logistic_loss_value, Matrix, Mode, Tape, Var};

/// How phrases are mapped to conditional embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentKind {
    Learned,
    Kmeans,
    Coarse,
    Random,
}

impl std::str::FromStr for AssignmentKind {
    type Err = CiteError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Self::Learned),
            "kmeans" => Ok(Self::Kmeans),
            "coarse" => Ok(Self::Coarse),
            "random" => Ok(Self::Random),
            other => Err(CiteError::Config(format!("unknown assignment `{other}`"))),
        }
    }
}

impl std::fmt::Display for AssignmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Learned => "learned",
            Self::Kmeans => "kmeans",
            Self::Coarse => "coarse",
            Self::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the L1 penalty on concept logits.
    pub lambda: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub sgd_lr_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub assignment: AssignmentKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CiteError::Validation("learning_rate must be > 0".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(CiteError::Validation("lambda must be ≥ 0".into()));
        }
        if self.patience == 0 || self.batch_size == 0 {
            return Err(CiteError::Validation("patience and batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Summed logistic loss plus `λ‖φ‖₁` (absent without logits).
pub fn cite_loss(scores: &[f64], labels: &[f64], phi: Option<&Matrix>, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(CiteError::Validation(format!("lambda must be ≥ 0, got {lambda}")));
    }
    if scores.len() != labels.len() {
        return Err(CiteError::dim(
            "cite_loss",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    let l1: f64 = phi.map_or(0.0, |p| p.as_slice().iter().map(|v| v.abs()).sum());
    Ok(logistic_loss_value(scores, labels) + lambda * l1)
}

/// [`cite_loss`] on the tape, divided by the number of pairs.
pub fn cite_objective(tape: &mut Tape, scores: Var, labels: &[f64], phi: Option<Var>, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(CiteError::Validation(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let mut total = tape.logistic_loss(scores, labels)?;
    if let (Some(phi), true) = (phi, lambda > 0.0) {
        let l1 = tape.l1_norm(phi);
        let penalty = tape.scale(l1, lambda);
        total = tape.add(total, penalty)?;
    }
    Ok(tape.scale(total, 1.0 / labels.len().max(1) as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "epoch,phase,lr,train_loss,val_accuracy";

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.phase, r.lr, r.train_loss, r.val_accuracy));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| CiteError::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| CiteError::io(path, e))
    }
}

pub struct TrainOutcome {
    /// Best-on-validation parameters.
    pub model: ModelParams,
    pub log: TrainingLog,
    pub best_val: f64,
    pub best_epoch: usize,
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ c.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mines training pairs for one epoch; phrases without a positive are dropped.
pub fn mine_epoch(
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    phrases: &[usize],
    seed: u64,
    epoch: usize,
) -> Result<Vec<(usize, MinedPairs)>> {
    let mut out = Vec::with_capacity(phrases.len());
    for &p in phrases {
        let phrase = &ds.phrases[p];
        let n = enc.proposal_count(phrase.image);
        if n == 0 {
            continue;
        }
        let proposals = &ds.images[phrase.image].proposals[..n];
        let mined = mine_pairs(&phrase.sample, proposals, mix(seed, epoch as u64, p as u64))?;
        if !mined.skipped {
            out.push((p, mined));
        }
    }
    Ok(out)
}

/// Trains with Adam, then SGD, keeping the best-on-validation parameters.
pub fn train(
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    assigner: &Assigner,
) -> Result<TrainOutcome> {
    train_with_progress(ds, enc, model_cfg, cfg, assigner, &mut |_| {})
}

pub fn train_with_progress(
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    assigner: &Assigner,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_phrases = ds.phrases_in(Split::Train);
    let val_phrases = ds.phrases_in(Split::Val);
    if train_phrases.is_empty() {
        return Err(CiteError::Data("dataset has no training phrases".into()));
    }
    if val_phrases.is_empty() {
        return Err(CiteError::Data("dataset has no validation phrases".into()));
    }
    if assigner.is_learned() != (model_cfg.assignment == crate::network::AssignmentMode::Learned) {
        return Err(CiteError::Config(format!(
            "assigner does not match the model's {} assignment mode",
            model_cfg.assignment
        )));
    }

    let mut model = init_model(model_cfg)?;
    let mut best = model.clone();
    let mut adam = Adam::new(model.params());
    let mut sched = ScheduleState::new(cfg.patience)?;
    let mut lr = cfg.learning_rate;
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.max_epochs {
        let phase = sched.phase;
        let mined = mine_epoch(ds, enc, &train_phrases, cfg.seed, epoch)?;
        if mined.is_empty() {
            return Err(CiteError::Data("no training phrase has a positive proposal".into()));
        }
        let batches = build_minibatches(&mined, cfg.batch_size, mix(cfg.seed, epoch as u64, u64::MAX))?;
        let (mut loss_sum, mut pairs_seen) = (0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            // batch norm needs two rows; a trailing singleton is dropped
            if batch.len() < 2 {
                continue;
            }
            let phrase_idx: Vec<usize> = batch.iter().map(|t| t.phrase).collect();
            let mut regions = Matrix::zeros(batch.len(), enc.region_dim());
            for (row, t) in batch.iter().enumerate() {
                let img = ds.phrases[t.phrase].image;
                regions.row_mut(row).copy_from_slice(enc.regions[img].row(t.region));
            }
            let phrases = enc.phrases.gather_rows(&phrase_idx)?;
            let external = assigner.weights(ds, &phrase_idx)?;
            let pairs: Vec<(usize, usize)> = (0..batch.len()).map(|i| (i, i)).collect();
            let labels: Vec<f64> = batch.iter().map(|t| t.label as f64).collect();
            let context = |e: CiteError| match e {
                CiteError::Numeric(what) => CiteError::Numeric(format!("{what} (epoch {epoch}, batch {b})")),
                other => other,
            };

            let mut trace =
                forward_pairs(&model, &regions, &phrases, &pairs, external.as_ref(), Mode::Train).map_err(context)?;
            let (scores, logits) = (trace.scores, trace.logits);
            let loss = cite_objective(trace.tape_mut(), scores, &labels, logits, cfg.lambda)?;
            let value = trace.tape().scalar(loss);
            if !value.is_finite() {
                return Err(context(CiteError::Numeric("training loss".into())));
            }
            let grads = trace.tape().backward(loss, 1.0)?.dense(model.params());
            match phase {
                Phase::Adam => adam.step(model.params_mut(), &grads, lr),
                _ => sgd_step(model.params_mut(), &grads, lr),
            }
            .map_err(context)?;
            model.apply_batch_stats(trace.batch_stats());
            loss_sum += value * batch.len() as f64;
            pairs_seen += batch.len();
        }

        let val = accuracy(&model, ds, enc, &val_phrases, assigner)?.accuracy;
        let row = LogRow {
            epoch,
            phase,
            lr,
            train_loss: loss_sum / pairs_seen.max(1) as f64,
            val_accuracy: val,
        };
        progress(&row);
        log.rows.push(row);
        let action = schedule_tick(&mut sched, val)?;
        if sched.improved {
            best = model.clone();
        }
        match action {
            Action::Continue => {}
            Action::SwitchToSgd => {
                model = best.clone();
                lr *= cfg.sgd_lr_factor;
            }
            Action::Stop => break,
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_val: sched.best_val,
        best_epoch: sched.best_epoch.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cite_loss_examples() {
        let l = cite_loss(&[0.0], &[1.0], None, 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let phi = Matrix::row_vector(&[1.0, -1.0]);
        let l = cite_loss(&[0.0], &[1.0], Some(&phi), 0.5).unwrap();
        assert!((l - 1.693147).abs() < 1e-6);
        assert!(cite_loss(&[0.0], &[1.0], None, -0.1).is_err());
        let scores = [0.3, -2.0, 1.5];
        let labels = [1.0, -1.0, -1.0];
        assert_eq!(
            cite_loss(&scores, &labels, None, 0.7).unwrap(),
            logistic_loss_value(&scores, &labels)
        );
    }

    #[test]
    fn objective_on_tape_is_batch_mean() {
        let mut t = Tape::new();
        let s = t.constant(Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap());
        let phi = t.constant(Matrix::from_rows(&[[1.0, -2.0], [0.5, 0.0]]));
        let o = cite_objective(&mut t, s, &[1.0, -1.0], Some(phi), 0.1).unwrap();
        let expect = cite_loss(&[0.0, 1.0], &[1.0, -1.0], Some(t.value(phi)), 0.1).unwrap() / 2.0;
        assert!((t.scalar(o) - expect).abs() < 1e-14);
    }

    #[test]
    fn assignment_kind_parses() {
        for k in ["learned", "kmeans", "coarse", "random"] {
            assert_eq!(k.parse::<AssignmentKind>().unwrap().to_string(), k);
        }
        assert!("soft".parse::<AssignmentKind>().is_err());
    }
}
