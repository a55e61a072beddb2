//! Trains a conditional embedding model with learned concept weights on the
//! synthetic corpus and reports test accuracy.
//!
//! cargo run --release --example train_grounding -- k=4 lambda=0.005
use cite::data::{gen_synthetic, preset, Split};
use cite::evaluation::{accuracy, oracle_upper_bound};
use cite::training::{train_with_progress, AssignOptions, Assigner};

fn main() -> cite::Result<()> {
    let sets: Vec<String> = std::env::args().skip(1).collect();
    let cfg = preset("synth")?.with_overrides(&sets)?;
    cfg.validate()?;
    let ds = gen_synthetic(&cfg.synth)?;
    let enc = ds.encode(cfg.spatial, cfg.proposals_per_image)?;
    let opts = AssignOptions { seed: cfg.seed, kmeans_iters: cfg.kmeans_iters, ..Default::default() };
    let assigner = Assigner::build(cfg.assignment, cfg.k, &ds, &opts)?;
    let model_cfg = cfg.model_config(enc.region_dim(), enc.phrase_dim());

    let out = train_with_progress(&ds, &enc, &model_cfg, &cfg.train_config(), &assigner, &mut |row| {
        println!("epoch {:>3} {:?} lr {:.0e} loss {:.4} val {:.4}", row.epoch, row.phase, row.lr, row.train_loss, row.val_accuracy);
    })?;
    let test = ds.phrases_in(Split::Test);
    let report = accuracy(&out.model, &ds, &enc, &test, &assigner)?;
    println!(
        "best val {:.4} at epoch {}; test {:.4} (proposal ceiling {:.4})",
        out.best_val,
        out.best_epoch,
        report.accuracy,
        oracle_upper_bound(&ds, &test, cfg.proposals_per_image)?
    );
    Ok(())
}
