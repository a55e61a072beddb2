//! Positive/negative phrase-region pair mining and minibatch assembly.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CiteError, Result};
use crate::geometry::{iou, union_box, BBox};

pub const POSITIVE_IOU: f64 = 0.6;
pub const NEGATIVE_IOU: f64 = 0.3;
pub const RELAXED_NEGATIVE_IOU: f64 = 0.4;
pub const NEGATIVES_PER_POSITIVE: usize = 2;

/// One phrase of one image together with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseSample {
    pub phrase_id: String,
    pub image_id: String,
    pub gt_boxes: Vec<BBox>,
    pub gt_union: BBox,
    /// Row of this phrase in the phrase feature store.
    pub feature_row: usize,
}

impl PhraseSample {
    pub fn new(
        phrase_id: impl Into<String>,
        image_id: impl Into<String>,
        gt_boxes: Vec<BBox>,
        feature_row: usize,
    ) -> Result<Self> {
        let gt_union = union_box(&gt_boxes)?;
        Ok(Self {
            phrase_id: phrase_id.into(),
            image_id: image_id.into(),
            gt_boxes,
            gt_union,
            feature_row,
        })
    }
}

/// Proposal indices selected as training pairs for one phrase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinedPairs {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub neg_threshold_used: f64,
    /// No proposal reached the positive threshold; the phrase is left out of training.
    pub skipped: bool,
}

impl MinedPairs {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Selects positives (IOU ≥ 0.6 with the ground-truth union) and twice as many
/// negatives drawn from proposals under 0.3 IOU, relaxing to 0.4 when fewer
/// than that are available.
pub fn mine_pairs(sample_: &PhraseSample, proposals: &[BBox], seed: u64) -> Result<MinedPairs> {
    if proposals.is_empty() {
        return Err(CiteError::Validation(format!(
            "phrase {} has no proposals to mine",
            sample_.phrase_id
        )));
    }
    let overlaps = proposals
        .iter()
        .map(|p| iou(p, &sample_.gt_union))
        .collect::<Result<Vec<_>>>()?;
    let positives: Vec<usize> = (0..proposals.len())
        .filter(|&i| overlaps[i] >= POSITIVE_IOU)
        .collect();
    if positives.is_empty() {
        return Ok(MinedPairs {
            neg_threshold_used: NEGATIVE_IOU,
            skipped: true,
            ..MinedPairs::default()
        });
    }
    let wanted = NEGATIVES_PER_POSITIVE * positives.len();
    let below = |t: f64| -> Vec<usize> { (0..proposals.len()).filter(|&i| overlaps[i] < t).collect() };
    let mut threshold = NEGATIVE_IOU;
    let mut pool = below(NEGATIVE_IOU);
    if pool.len() < wanted {
        threshold = RELAXED_NEGATIVE_IOU;
        pool = below(RELAXED_NEGATIVE_IOU);
    }
    let mut negatives: Vec<usize> = if pool.len() <= wanted {
        pool
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, pool.len(), wanted)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    negatives.sort_unstable();
    Ok(MinedPairs {
        positives,
        negatives,
        neg_threshold_used: threshold,
        skipped: false,
    })
}

/// One labelled training pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    /// Index into the caller's phrase list.
    pub phrase: usize,
    /// Proposal index within that phrase's image.
    pub region: usize,
    /// +1 for a match, −1 otherwise.
    pub label: i8,
}

/// Shuffles every mined pair and cuts the sequence into `batch_size` chunks;
/// the final chunk may be shorter.
pub fn build_minibatches(
    mined: &[(usize, MinedPairs)],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<Triple>>> {
    if batch_size == 0 {
        return Err(CiteError::Validation("batch size must be ≥ 1".into()));
    }
    let mut pool: Vec<Triple> = mined
        .iter()
        .flat_map(|(phrase, m)| {
            let pos = m.positives.iter().map(move |&r| Triple {
                phrase: *phrase,
                region: r,
                label: 1,
            });
            let neg = m.negatives.iter().map(move |&r| Triple {
                phrase: *phrase,
                region: r,
                label: -1,
            });
            pos.chain(neg)
        })
        .collect();
    if pool.is_empty() {
        return Err(CiteError::Validation("no training pairs to batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    Ok(pool.chunks(batch_size).map(<[Triple]>::to_vec).collect())
}
