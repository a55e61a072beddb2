//! Clusters phrase features with k-means and measures how well the clusters
//! line up with the hidden concepts of the synthetic corpus.
//!
//! cargo run --release --example concept_clusters -- 4
use cite::assignment::nearest_center;
use cite::data::{gen_synthetic, SynthConfig, Split};
use cite::evaluation::concept_purity;
use cite::training::{fit_kmeans, AssignOptions};

fn main() -> cite::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let ds = gen_synthetic(&SynthConfig::default())?;
    let km = fit_kmeans(&ds, k, &AssignOptions::default())?;
    println!("{} iterations, inertia {:?}", km.iterations_run, km.inertia_history.last());

    let test = ds.phrases_in(Split::Test);
    let feats = ds.phrase_inputs(&test);
    let assigned: Vec<usize> = (0..feats.rows()).map(|r| nearest_center(feats.row(r), &km.centers).0).collect();
    let labels: Vec<usize> = test.iter().map(|&p| ds.phrases[p].concept.unwrap()).collect();
    let mut sizes = vec![0; k];
    assigned.iter().for_each(|&a| sizes[a] += 1);
    println!("cluster sizes {sizes:?}; purity against hidden concepts {:.3}", concept_purity(&assigned, &labels));
    Ok(())
}
