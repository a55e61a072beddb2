//! Generates the synthetic grounding corpus and writes it in the on-disk
//! dataset layout.
//!
//! cargo run --release --example synth_dataset -- /tmp/synth
use cite::data::{gen_synthetic, load_dataset, SynthConfig, Split};

fn main() -> cite::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let cfg = SynthConfig::default();
    let ds = gen_synthetic(&cfg)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let images = ds.images.iter().filter(|i| i.split == split).count();
        println!("{split}: {images} images, {} phrases", ds.phrases_in(split).len());
    }
    ds.save(&dir)?;
    let back = load_dataset(&dir)?;
    println!("wrote {dir}; reload identical: {}", back == ds);
    Ok(())
}
