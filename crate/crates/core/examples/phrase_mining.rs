//! Positive and negative proposal mining for a single phrase.
//!
//! cargo run --example phrase_mining
use cite::geometry::{iou, BBox};
use cite::sampling::{mine_pairs, PhraseSample};

fn main() -> cite::Result<()> {
    let gt = vec![BBox::new(10.0, 10.0, 50.0, 60.0)?, BBox::new(40.0, 20.0, 70.0, 60.0)?];
    let sample = PhraseSample::new("two dogs", "img0", gt, 0)?;
    let proposals = [
        BBox::new(12.0, 8.0, 68.0, 62.0)?,
        BBox::new(10.0, 10.0, 50.0, 60.0)?,
        BBox::new(80.0, 80.0, 120.0, 110.0)?,
        BBox::new(0.0, 0.0, 30.0, 30.0)?,
        BBox::new(60.0, 0.0, 100.0, 40.0)?,
        BBox::new(5.0, 50.0, 45.0, 95.0)?,
    ];
    for (i, p) in proposals.iter().enumerate() {
        println!("proposal {i}: iou with union {:.3}", iou(p, &sample.gt_union)?);
    }
    let m = mine_pairs(&sample, &proposals, 0)?;
    println!("positives {:?}, negatives {:?} (threshold {})", m.positives, m.negatives, m.neg_threshold_used);
    Ok(())
}
