//! Trains a single-embedding baseline alongside learned and k-means concept
//! weighting on the same synthetic data, and reports accuracy and purity.
//!
//! cargo run --release --example k_compare -- seed=1 embed_dim=16
use std::time::Instant;

use cite::data::{gen_synthetic, preset, Split};
use cite::evaluation::{accuracy, concept_purity};
use cite::network::concept_weights;
use cite::tensor::Mode;
use cite::training::{train, AssignOptions, AssignmentKind, Assigner};

fn main() -> cite::Result<()> {
    let sets: Vec<String> = std::env::args().skip(1).collect();
    let base = preset("synth")?.with_overrides(&sets)?;
    let ds = gen_synthetic(&base.synth)?;
    let enc = ds.encode(base.spatial, base.proposals_per_image)?;
    let test = ds.phrases_in(Split::Test);
    for (k, kind) in [(1, AssignmentKind::Learned), (base.synth.concepts, AssignmentKind::Learned), (base.synth.concepts, AssignmentKind::Kmeans)] {
        let cfg = cite::data::RunConfig { k, assignment: kind, ..base.clone() };
        let opts = AssignOptions { seed: cfg.seed, kmeans_iters: cfg.kmeans_iters, ..Default::default() };
        let assigner = Assigner::build(kind, k, &ds, &opts)?;
        let t0 = Instant::now();
        let out = train(&ds, &enc, &cfg.model_config(enc.region_dim(), enc.phrase_dim()), &cfg.train_config(), &assigner)?;
        let acc = accuracy(&out.model, &ds, &enc, &test, &assigner)?.accuracy;
        let last = out.log.rows.last().unwrap();
        let purity = if kind == AssignmentKind::Learned && k > 1 {
            let (u, _) = concept_weights(&out.model, &enc.phrases.gather_rows(&test)?, Mode::Infer)?;
            let arg: Vec<usize> = (0..u.rows()).map(|r| cite::evaluation::localize(u.row(r)).unwrap()).collect();
            let lab: Vec<usize> = test.iter().map(|&p| ds.phrases[p].concept.unwrap()).collect();
            concept_purity(&arg, &lab)
        } else {
            f64::NAN
        };
        println!(
            "K={k} {kind}: test {acc:.4} purity {purity:.2} best_val {:.4} @{} epochs {} loss {:.4} ({:.1}s)",
            out.best_val, out.best_epoch, out.log.rows.len(), last.train_loss, t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
