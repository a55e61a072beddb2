//! Twenty handcrafted phrases over five images, with a fixed score table and a
//! brute-force scorer that shares no code with the library.

use cite::data::{AnnotationRecord, FeatureStore, GroundingDataset, ProposalRecord};
use cite::tensor::Matrix;
use serde_json::json;

pub struct Img {
    pub id: &'static str,
    pub size: [f64; 2],
    pub proposals: Vec<[f64; 4]>,
}

pub struct Ph {
    pub image: usize,
    pub gt: Vec<[f64; 4]>,
    pub scores: Vec<f64>,
    pub category: Option<&'static str>,
}

pub fn images() -> Vec<Img> {
    vec![
        Img { id: "a", size: [100.0, 100.0], proposals: vec![[0.0, 0.0, 50.0, 50.0], [10.0, 10.0, 60.0, 60.0], [50.0, 50.0, 100.0, 100.0], [0.0, 50.0, 50.0, 100.0]] },
        Img { id: "b", size: [200.0, 100.0], proposals: vec![[0.0, 0.0, 100.0, 100.0], [100.0, 0.0, 200.0, 100.0], [50.0, 0.0, 150.0, 100.0]] },
        Img { id: "c", size: [100.0, 100.0], proposals: vec![[0.0, 0.0, 100.0, 100.0]] },
        Img {
            id: "d",
            size: [120.0, 80.0],
            proposals: vec![[0.0, 0.0, 60.0, 40.0], [60.0, 0.0, 120.0, 40.0], [0.0, 40.0, 60.0, 80.0], [60.0, 40.0, 120.0, 80.0], [30.0, 20.0, 90.0, 60.0]],
        },
        Img { id: "e", size: [50.0, 50.0], proposals: vec![] },
    ]
}

pub fn phrases() -> Vec<Ph> {
    let p = |image, gt: &[[f64; 4]], scores: &[f64], category| Ph { image, gt: gt.to_vec(), scores: scores.to_vec(), category };
    vec![
        p(0, &[[0.0, 0.0, 50.0, 50.0]], &[0.9, 0.8, 0.1, 0.0], Some("people")),
        p(0, &[[10.0, 10.0, 60.0, 60.0]], &[0.9, 0.8, 0.1, 0.0], Some("people")),
        p(0, &[[50.0, 50.0, 100.0, 100.0], [0.0, 50.0, 50.0, 100.0]], &[0.0, 0.0, 0.5, 0.5], Some("clothing")),
        p(0, &[[20.0, 20.0, 45.0, 45.0]], &[0.1, 0.2, 0.3, 0.4], None),
        p(1, &[[0.0, 0.0, 100.0, 100.0]], &[1.0, 0.0, 0.0], Some("animals")),
        p(1, &[[100.0, 0.0, 200.0, 100.0]], &[0.2, 0.3, 0.3], Some("animals")),
        p(1, &[[40.0, 0.0, 160.0, 100.0]], &[0.5, 0.1, 0.4], Some("scene")),
        p(1, &[[0.0, 0.0, 100.0, 100.0], [100.0, 0.0, 200.0, 100.0]], &[0.0, 0.0, 1.0], Some("people")),
        p(2, &[[0.0, 0.0, 100.0, 100.0]], &[0.3], Some("scene")),
        p(2, &[[0.0, 0.0, 40.0, 40.0]], &[-2.0], Some("other")),
        p(2, &[[0.0, 0.0, 80.0, 70.0]], &[0.0], None),
        p(2, &[[10.0, 10.0, 90.0, 90.0]], &[7.0], Some("other")),
        p(3, &[[0.0, 0.0, 60.0, 40.0]], &[0.5, 0.5, 0.5, 0.5, 0.5], Some("vehicles")),
        p(3, &[[30.0, 20.0, 90.0, 60.0]], &[0.0, 0.0, 0.0, 0.0, -1.0], Some("vehicles")),
        p(3, &[[60.0, 40.0, 120.0, 80.0]], &[-3.0, -2.0, -1.0, 0.0, -0.5], Some("clothing")),
        p(3, &[[0.0, 40.0, 60.0, 80.0], [60.0, 40.0, 120.0, 80.0]], &[0.0, 0.0, 1.0, 0.0, 0.0], Some("people")),
        p(4, &[[0.0, 0.0, 10.0, 10.0]], &[], Some("people")),
        p(4, &[[5.0, 5.0, 20.0, 20.0]], &[], None),
        p(4, &[[0.0, 0.0, 50.0, 50.0]], &[], Some("scene")),
        p(4, &[[1.0, 1.0, 2.0, 2.0]], &[], Some("other")),
    ]
}

pub fn dataset() -> GroundingDataset {
    let imgs = images();
    let phs = phrases();
    let mut regions = FeatureStore::new(2);
    let mut proposals = Vec::new();
    for img in &imgs {
        if img.proposals.is_empty() {
            continue;
        }
        let rows = (0..img.proposals.len())
            .map(|j| regions.push(format!("{}_{j}", img.id), &[j as f64, 1.0]).unwrap())
            .collect();
        proposals.push(ProposalRecord { image_id: img.id.into(), boxes: img.proposals.clone(), feature_rows: rows });
    }
    let mut text = FeatureStore::new(2);
    let mut annotations = Vec::new();
    for (n, p) in phs.iter().enumerate() {
        let row = text.push(format!("q{n}"), &[n as f64, 0.0]).unwrap();
        let img = &imgs[p.image];
        let mut rec = json!({
            "image_id": img.id, "W": img.size[0], "H": img.size[1],
            "phrase_id": format!("q{n}"), "phrase_text": format!("phrase {n}"),
            "feature_row": row, "gt_boxes": p.gt,
        });
        if let Some(c) = p.category {
            rec["category"] = json!(c);
        }
        annotations.push(serde_json::from_value::<AnnotationRecord>(rec).unwrap());
    }
    GroundingDataset::assemble(&annotations, &proposals, regions, text).unwrap()
}

/// Scores for the listed phrases (dataset indices equal fixture indices), first `n` proposals.
pub fn table_scores(phrase_ids: &[usize], n: usize) -> Matrix {
    let phs = phrases();
    let mut m = Matrix::zeros(phrase_ids.len(), n);
    for (r, &p) in phrase_ids.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&phs[p].scores[..n]);
    }
    m
}

fn brute_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |x: [f64; 4]| (x[2] - x[0]) * (x[3] - x[1]);
    inter / (area(a) + area(b) - inter)
}

fn brute_union(bs: &[[f64; 4]]) -> [f64; 4] {
    let mut u = bs[0];
    for b in &bs[1..] {
        u = [u[0].min(b[0]), u[1].min(b[1]), u[2].max(b[2]), u[3].max(b[3])];
    }
    u
}

/// `(hits, oracle hits)` enumerated phrase by phrase, keeping the first `limit` proposals.
pub fn brute_force(limit: Option<usize>) -> (usize, usize) {
    let imgs = images();
    let (mut hits, mut oracle) = (0, 0);
    for p in phrases() {
        let props = &imgs[p.image].proposals;
        let n = limit.map_or(props.len(), |l| l.min(props.len()));
        let gt = brute_union(&p.gt);
        let ious: Vec<f64> = props[..n].iter().map(|b| brute_iou(*b, gt)).collect();
        if ious.iter().any(|&v| v >= 0.5) {
            oracle += 1;
        }
        let mut best: Option<usize> = None;
        for i in 0..n {
            if best.map_or(true, |b| p.scores[i] > p.scores[b]) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            if ious[b] >= 0.5 {
                hits += 1;
            }
        }
    }
    (hits, oracle)
}
