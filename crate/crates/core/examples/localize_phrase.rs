//! Trains briefly, then ranks the proposals of one test image for each of
//! its phrases and prints the learned concept weights.
//!
//! cargo run --release --example localize_phrase
use cite::data::{gen_synthetic, preset, Split};
use cite::evaluation::{localize, score_image};
use cite::geometry::iou;
use cite::network::concept_weights;
use cite::tensor::Mode;
use cite::training::{train, AssignOptions, Assigner};

fn main() -> cite::Result<()> {
    let mut cfg = preset("synth")?;
    cfg.max_epochs = 8;
    let ds = gen_synthetic(&cfg.synth)?;
    let enc = ds.encode(cfg.spatial, cfg.proposals_per_image)?;
    let assigner = Assigner::build(cfg.assignment, cfg.k, &ds, &AssignOptions::default())?;
    let out = train(&ds, &enc, &cfg.model_config(enc.region_dim(), enc.phrase_dim()), &cfg.train_config(), &assigner)?;

    let image = ds.images.iter().position(|i| i.split == Split::Test).expect("test image");
    let phrases: Vec<usize> = (0..ds.phrases.len()).filter(|&p| ds.phrases[p].image == image).collect();
    let scores = score_image(&out.model, &ds, &enc, &assigner, image, &phrases)?;
    let (u, _) = concept_weights(&out.model, &enc.phrases.gather_rows(&phrases)?, Mode::Infer)?;
    for (row, &p) in phrases.iter().enumerate() {
        let ph = &ds.phrases[p];
        let best = localize(scores.row(row))?;
        let box_ = ds.images[image].proposals[best];
        println!(
            "{:<12} -> proposal {best:>2} {:?} iou {:.2}  u = {:.2?}",
            ph.text,
            box_.to_array(),
            iou(&box_, &ph.sample.gt_union)?,
            u.row(row)
        );
    }
    Ok(())
}
