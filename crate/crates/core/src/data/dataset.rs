use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{load_features, FeatureStore};
use crate::error::{CiteError, Result};
use crate::geometry::{BBox, ImageSize, SpatialEncoding};
use crate::sampling::PhraseSample;
use crate::tensor::Matrix;

pub const REGION_FEATURES_FILE: &str = "region_features.bin";
pub const PHRASE_FEATURES_FILE: &str = "phrase_features.bin";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const PROPOSALS_FILE: &str = "proposals.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CiteError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CiteError::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub id: String,
    pub size: ImageSize,
    pub split: Split,
    pub proposals: Vec<BBox>,
    /// Region feature row of each proposal.
    pub feature_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phrase {
    pub sample: PhraseSample,
    /// Index into [`GroundingDataset::images`].
    pub image: usize,
    pub text: String,
    pub category: Option<String>,
    /// Latent concept label (synthetic data only).
    pub concept: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundingDataset {
    pub images: Vec<Image>,
    pub phrases: Vec<Phrase>,
    pub region_features: FeatureStore,
    pub phrase_features: FeatureStore,
}

/// One line of `annotations.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: String,
    #[serde(rename = "W")]
    pub width: f64,
    #[serde(rename = "H")]
    pub height: f64,
    pub phrase_id: String,
    pub phrase_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub feature_row: usize,
    pub gt_boxes: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<usize>,
}

/// One line of `proposals.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub image_id: String,
    pub boxes: Vec<[f64; 4]>,
    pub feature_rows: Vec<usize>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| CiteError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CiteError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CiteError::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CiteError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).expect("records serialise");
        writeln!(w, "{line}").map_err(|e| CiteError::io(path, e))?;
    }
    w.flush().map_err(|e| CiteError::io(path, e))
}

/// Parses annotation lines, validating boxes. Errors carry the 1-based line number.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    // line numbers ignore blank lines only at the end, which is the common case
    for (n, r) in records.iter().enumerate() {
        let at = |e: CiteError| CiteError::Data(format!("{}:{}: {e}", path.display(), n + 1));
        ImageSize::new(r.width, r.height).map_err(at)?;
        if r.gt_boxes.is_empty() {
            return Err(at(CiteError::Validation("no ground-truth boxes".into())));
        }
        for b in &r.gt_boxes {
            BBox::from_array(*b).map_err(at)?;
        }
    }
    Ok(records)
}

pub fn load_proposals(path: impl AsRef<Path>) -> Result<Vec<ProposalRecord>> {
    let path = path.as_ref();
    let records: Vec<ProposalRecord> = read_jsonl(path)?;
    for (n, r) in records.iter().enumerate() {
        let at = |e: CiteError| CiteError::Data(format!("{}:{}: {e}", path.display(), n + 1));
        if r.boxes.len() != r.feature_rows.len() {
            return Err(at(CiteError::Validation(format!(
                "{} boxes but {} feature rows",
                r.boxes.len(),
                r.feature_rows.len()
            ))));
        }
        for b in &r.boxes {
            BBox::from_array(*b).map_err(at)?;
        }
    }
    Ok(records)
}

impl GroundingDataset {
    /// Joins annotation and proposal records against the two feature stores.
    pub fn assemble(
        annotations: &[AnnotationRecord],
        proposals: &[ProposalRecord],
        region_features: FeatureStore,
        phrase_features: FeatureStore,
    ) -> Result<Self> {
        let mut images: Vec<Image> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();
        for a in annotations {
            let size = ImageSize::new(a.width, a.height)?;
            let split = a.split.unwrap_or_default();
            match by_id.get(&a.image_id) {
                Some(&i) => {
                    if images[i].size != size || images[i].split != split {
                        return Err(CiteError::Data(format!(
                            "image {} has conflicting size or split across annotations",
                            a.image_id
                        )));
                    }
                }
                None => {
                    by_id.insert(a.image_id.clone(), images.len());
                    images.push(Image {
                        id: a.image_id.clone(),
                        size,
                        split,
                        proposals: Vec::new(),
                        feature_rows: Vec::new(),
                    });
                }
            }
        }
        for p in proposals {
            let Some(&i) = by_id.get(&p.image_id) else {
                return Err(CiteError::Data(format!(
                    "proposals reference unannotated image {}",
                    p.image_id
                )));
            };
            let img = &mut images[i];
            for (b, &row) in p.boxes.iter().zip(&p.feature_rows) {
                img.proposals.push(BBox::from_array(*b)?);
                img.feature_rows.push(row);
            }
        }
        let phrases = annotations
            .iter()
            .map(|a| {
                let boxes = a
                    .gt_boxes
                    .iter()
                    .map(|b| BBox::from_array(*b))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Phrase {
                    sample: PhraseSample::new(&a.phrase_id, &a.image_id, boxes, a.feature_row)?,
                    image: by_id[&a.image_id],
                    text: a.phrase_text.clone(),
                    category: a.category.clone(),
                    concept: a.concept,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            images,
            phrases,
            region_features,
            phrase_features,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Referential integrity: feature rows in bounds, image indices valid, ids unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.id.as_str()) {
                return Err(CiteError::Data(format!("duplicate image id {}", img.id)));
            }
            if img.proposals.len() != img.feature_rows.len() {
                return Err(CiteError::Data(format!(
                    "image {}: {} proposals, {} feature rows",
                    img.id,
                    img.proposals.len(),
                    img.feature_rows.len()
                )));
            }
            if let Some(r) = img.feature_rows.iter().find(|&&r| r >= self.region_features.rows()) {
                return Err(CiteError::Data(format!(
                    "image {}: region feature row {r} out of {} rows",
                    img.id,
                    self.region_features.rows()
                )));
            }
        }
        let mut seen = HashSet::new();
        for p in &self.phrases {
            if !seen.insert(p.sample.phrase_id.as_str()) {
                return Err(CiteError::Data(format!(
                    "duplicate phrase id {}",
                    p.sample.phrase_id
                )));
            }
            let Some(img) = self.images.get(p.image) else {
                return Err(CiteError::Data(format!(
                    "phrase {} points at missing image",
                    p.sample.phrase_id
                )));
            };
            if img.id != p.sample.image_id {
                return Err(CiteError::Data(format!(
                    "phrase {} image id mismatch",
                    p.sample.phrase_id
                )));
            }
            if p.sample.feature_row >= self.phrase_features.rows() {
                return Err(CiteError::Data(format!(
                    "phrase {}: feature row {} out of {} rows",
                    p.sample.phrase_id,
                    p.sample.feature_row,
                    self.phrase_features.rows()
                )));
            }
        }
        Ok(())
    }

    pub fn phrases_in(&self, split: Split) -> Vec<usize> {
        (0..self.phrases.len())
            .filter(|&i| self.images[self.phrases[i].image].split == split)
            .collect()
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.images.iter().any(|i| i.split == split)
    }

    pub fn region_input_dim(&self, spatial: SpatialEncoding) -> usize {
        self.region_features.dim() + spatial.dim()
    }

    /// Region feature rows of one image's proposals with the spatial encoding appended.
    pub fn region_inputs(&self, image: usize, spatial: SpatialEncoding) -> Result<Matrix> {
        let img = &self.images[image];
        let base = self.region_features.dim();
        let mut m = Matrix::zeros(img.proposals.len(), base + spatial.dim());
        for (i, (b, &row)) in img.proposals.iter().zip(&img.feature_rows).enumerate() {
            let dst = m.row_mut(i);
            for (d, &v) in dst.iter_mut().zip(self.region_features.row(row)) {
                *d = v as f64;
            }
            dst[base..].copy_from_slice(&spatial.encode(b, &img.size)?);
        }
        Ok(m)
    }

    /// Phrase feature rows for the given phrase indices.
    pub fn phrase_inputs(&self, phrases: &[usize]) -> Matrix {
        let rows: Vec<usize> = phrases
            .iter()
            .map(|&p| self.phrases[p].sample.feature_row)
            .collect();
        self.phrase_features.gather(&rows)
    }

    /// Phrase indices grouped by image, in image order.
    pub fn phrases_by_image(&self, phrases: &[usize]) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &p in phrases {
            out.entry(self.phrases[p].image).or_default().push(p);
        }
        out
    }

    pub fn annotation_records(&self) -> Vec<AnnotationRecord> {
        self.phrases
            .iter()
            .map(|p| {
                let img = &self.images[p.image];
                AnnotationRecord {
                    image_id: img.id.clone(),
                    width: img.size.width,
                    height: img.size.height,
                    phrase_id: p.sample.phrase_id.clone(),
                    phrase_text: p.text.clone(),
                    category: p.category.clone(),
                    feature_row: p.sample.feature_row,
                    gt_boxes: p.sample.gt_boxes.iter().map(|b| b.to_array()).collect(),
                    split: Some(img.split),
                    concept: p.concept,
                }
            })
            .collect()
    }

    pub fn proposal_records(&self) -> Vec<ProposalRecord> {
        self.images
            .iter()
            .map(|img| ProposalRecord {
                image_id: img.id.clone(),
                boxes: img.proposals.iter().map(|b| b.to_array()).collect(),
                feature_rows: img.feature_rows.clone(),
            })
            .collect()
    }

    /// Writes the four dataset files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CiteError::io(dir, e))?;
        self.region_features.save(dir.join(REGION_FEATURES_FILE))?;
        self.phrase_features.save(dir.join(PHRASE_FEATURES_FILE))?;
        write_jsonl(&dir.join(ANNOTATIONS_FILE), self.annotation_records())?;
        write_jsonl(&dir.join(PROPOSALS_FILE), self.proposal_records())
    }
}

/// Model-ready inputs: per-image region matrices (spatial features appended,
/// proposals optionally truncated) and one phrase row per dataset phrase.
#[derive(Clone, Debug)]
pub struct EncodedInputs {
    pub regions: Vec<Matrix>,
    pub phrases: Matrix,
    pub spatial: SpatialEncoding,
}

impl EncodedInputs {
    pub fn region_dim(&self) -> usize {
        self.regions.first().map_or(0, Matrix::cols)
    }

    pub fn phrase_dim(&self) -> usize {
        self.phrases.cols()
    }

    /// Proposals of `image` that were kept.
    pub fn proposal_count(&self, image: usize) -> usize {
        self.regions[image].rows()
    }
}

impl GroundingDataset {
    pub fn encode(&self, spatial: SpatialEncoding, proposals_per_image: Option<usize>) -> Result<EncodedInputs> {
        let regions = (0..self.images.len())
            .map(|i| {
                let m = self.region_inputs(i, spatial)?;
                match proposals_per_image {
                    Some(n) if n < m.rows() => m.gather_rows(&(0..n).collect::<Vec<_>>()),
                    _ => Ok(m),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..self.phrases.len()).collect();
        Ok(EncodedInputs {
            regions,
            phrases: self.phrase_inputs(&all),
            spatial,
        })
    }
}

/// Loads a dataset directory written by [`GroundingDataset::save`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GroundingDataset> {
    let dir = dir.as_ref();
    let region = load_features(dir.join(REGION_FEATURES_FILE))?;
    let phrase = load_features(dir.join(PHRASE_FEATURES_FILE))?;
    let annotations = load_annotations(dir.join(ANNOTATIONS_FILE))?;
    let proposals = load_proposals(dir.join(PROPOSALS_FILE))?;
    GroundingDataset::assemble(&annotations, &proposals, region, phrase)
}
