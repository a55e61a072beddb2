//! Accuracy as a function of the number of conditional embeddings, for
//! learned and k-means concept weights. Writes sweep.csv and sweep.svg.
//!
//! cargo run --release --example k_sweep -- max_epochs=10
use cite::data::{gen_synthetic, preset};
use cite::evaluation::{k_sweep, sweep_svg};
use cite::training::AssignmentKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets: Vec<String> = std::env::args().skip(1).collect();
    let cfg = preset("synth")?.with_overrides(&sets)?;
    let ds = gen_synthetic(&cfg.synth)?;
    let kinds = [AssignmentKind::Learned, AssignmentKind::Kmeans];
    let table = k_sweep(&ds, &cfg, &[1, 2, 4, 8], &kinds, None, &mut |row| {
        println!("K={} {}: val {:?} test {:?} {}", row.k, row.assignment, row.val_accuracy, row.test_accuracy, row.error.as_deref().unwrap_or(""));
    })?;
    table.write_csv("sweep.csv")?;
    std::fs::write("sweep.svg", sweep_svg(&table))?;
    Ok(())
}
