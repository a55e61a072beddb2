//! Localization accuracy, proposal-oracle bounds, K sweeps, and concept reports.

mod report;
mod sweep;

pub use report::{concept_purity, concept_report, ConceptReport, EmbeddingReport, TopPhrase, WeightStat};
pub use sweep::{k_sweep, sweep_svg, SweepRow, SweepTable};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{EncodedInputs, GroundingDataset};
use crate::error::{CiteError, Result};
use crate::geometry::iou;
use crate::network::{score, ModelParams};
use crate::tensor::{Matrix, Mode};
use crate::training::Assigner;

pub const LOCALIZATION_IOU: f64 = 0.5;
/// Category label for phrases that carry none.
pub const UNLABELED: &str = "unlabeled";

/// Index of the highest score, lowest index on ties.
pub fn localize(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(CiteError::Validation("cannot localize without proposals".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CategoryStat {
    pub correct: usize,
    pub total: usize,
}

impl CategoryStat {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhraseOutcome {
    pub phrase: usize,
    /// `None` when the image had no proposals.
    pub predicted: Option<usize>,
    pub iou: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub phrase_count: usize,
    /// Phrases whose image had no proposals (counted as failures).
    pub skipped: usize,
    pub per_category: BTreeMap<String, CategoryStat>,
    pub outcomes: Vec<PhraseOutcome>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,correct,total,accuracy\n");
        s.push_str(&format!("overall,{},{},{}\n", self.correct, self.phrase_count, self.accuracy));
        for (cat, st) in &self.per_category {
            s.push_str(&format!("{cat},{},{},{}\n", st.correct, st.total, st.accuracy()));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| CiteError::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| CiteError::io(path, e))
    }
}

fn category(ds: &GroundingDataset, p: usize) -> String {
    ds.phrases[p].category.clone().unwrap_or_else(|| UNLABELED.to_string())
}

/// Scores each image's phrases with `scorer` (phrases × kept proposals) and
/// tallies localization hits against the ground-truth union.
pub fn evaluate_with<F>(ds: &GroundingDataset, proposal_counts: &[usize], phrases: &[usize], scorer: F) -> Result<EvalReport>
where
    F: Fn(usize, &[usize]) -> Result<Matrix> + Sync,
{
    let groups: Vec<(usize, Vec<usize>)> = ds.phrases_by_image(phrases).into_iter().collect();
    let per_image: Vec<Vec<PhraseOutcome>> = groups
        .par_iter()
        .map(|(img, ps)| -> Result<Vec<PhraseOutcome>> {
            let n = proposal_counts[*img];
            if n == 0 {
                return Ok(ps
                    .iter()
                    .map(|&p| PhraseOutcome { phrase: p, predicted: None, iou: 0.0, correct: false })
                    .collect());
            }
            let scores = scorer(*img, ps)?;
            ps.iter()
                .enumerate()
                .map(|(row, &p)| {
                    let best = localize(scores.row(row))?;
                    let overlap = iou(&ds.images[*img].proposals[best], &ds.phrases[p].sample.gt_union)?;
                    Ok(PhraseOutcome {
                        phrase: p,
                        predicted: Some(best),
                        iou: overlap,
                        correct: overlap >= LOCALIZATION_IOU,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut by_phrase: BTreeMap<usize, PhraseOutcome> = BTreeMap::new();
    for o in per_image.into_iter().flatten() {
        by_phrase.insert(o.phrase, o);
    }
    let mut report = EvalReport::default();
    for &p in phrases {
        let o = by_phrase[&p].clone();
        let st = report.per_category.entry(category(ds, p)).or_default();
        st.total += 1;
        if o.correct {
            st.correct += 1;
            report.correct += 1;
        }
        if o.predicted.is_none() {
            report.skipped += 1;
        }
        report.phrase_count += 1;
        report.outcomes.push(o);
    }
    report.accuracy = if report.phrase_count == 0 {
        0.0
    } else {
        report.correct as f64 / report.phrase_count as f64
    };
    Ok(report)
}

/// Proposal-wise scores of every listed phrase of one image, in infer mode.
pub fn score_image(
    model: &ModelParams,
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    assigner: &Assigner,
    image: usize,
    phrases: &[usize],
) -> Result<Matrix> {
    let t = enc.phrases.gather_rows(phrases)?;
    let u = assigner.weights(ds, phrases)?;
    Ok(score(model, &enc.regions[image], &t, u.as_ref(), Mode::Infer)?.0)
}

/// Fraction of `phrases` whose top-scoring proposal overlaps the ground-truth union at ≥ 0.5.
pub fn accuracy(
    model: &ModelParams,
    ds: &GroundingDataset,
    enc: &EncodedInputs,
    phrases: &[usize],
    assigner: &Assigner,
) -> Result<EvalReport> {
    let counts: Vec<usize> = (0..ds.images.len()).map(|i| enc.proposal_count(i)).collect();
    evaluate_with(ds, &counts, phrases, |img, ps| score_image(model, ds, enc, assigner, img, ps))
}

/// Fraction of phrases for which some kept proposal reaches 0.5 IOU with the ground-truth union.
pub fn oracle_upper_bound(ds: &GroundingDataset, phrases: &[usize], proposals_per_image: Option<usize>) -> Result<f64> {
    if phrases.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for &p in phrases {
        let ph = &ds.phrases[p];
        let props = &ds.images[ph.image].proposals;
        let n = proposals_per_image.map_or(props.len(), |k| k.min(props.len()));
        let mut best: f64 = 0.0;
        for b in &props[..n] {
            best = best.max(iou(b, &ph.sample.gt_union)?);
        }
        if best >= LOCALIZATION_IOU {
            hits += 1;
        }
    }
    Ok(hits as f64 / phrases.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn localize_rules() {
        assert_eq!(localize(&[0.3]).unwrap(), 0);
        assert_eq!(localize(&[0.2, 0.9]).unwrap(), 1);
        assert_eq!(localize(&[0.5, 0.5, 0.1]).unwrap(), 0);
        assert!(localize(&[]).is_err());
    }
}
