mod common;

use cite::data::{gen_synthetic, SynthConfig, Split};
use cite::evaluation::{accuracy, evaluate_with, oracle_upper_bound};
use cite::network::{init_model, AssignmentMode, ModelConfig};
use cite::training::Assigner;
use common::eval_fixture;

fn fixture_report(limit: Option<usize>) -> cite::evaluation::EvalReport {
    let ds = eval_fixture::dataset();
    let counts: Vec<usize> = ds.images.iter().map(|i| limit.map_or(i.proposals.len(), |l| l.min(i.proposals.len()))).collect();
    let all: Vec<usize> = (0..ds.phrases.len()).collect();
    evaluate_with(&ds, &counts, &all, |img, ps| Ok(eval_fixture::table_scores(ps, counts[img]))).unwrap()
}

#[test]
fn fixture_matches_brute_force() {
    let ds = eval_fixture::dataset();
    let all: Vec<usize> = (0..ds.phrases.len()).collect();
    for limit in [None, Some(3), Some(1)] {
        let report = fixture_report(limit);
        let (hits, oracle) = eval_fixture::brute_force(limit);
        assert_eq!(report.correct, hits, "limit {limit:?}");
        assert_eq!(report.accuracy, hits as f64 / 20.0);
        assert_eq!(oracle_upper_bound(&ds, &all, limit).unwrap(), oracle as f64 / 20.0);
    }
    assert_eq!(eval_fixture::brute_force(None), (11, 14));
}

#[test]
fn fixture_csv_is_golden() {
    let report = fixture_report(None);
    assert_eq!(report.skipped, 4);
    let golden = "category,correct,total,accuracy
overall,11,20,0.55
animals,2,2,1
clothing,2,2,1
other,1,3,0.3333333333333333
people,3,5,0.6
scene,1,3,0.3333333333333333
unlabeled,1,3,0.3333333333333333
vehicles,1,2,0.5
";
    assert_eq!(report.to_csv(), golden);
}

#[test]
fn accuracy_never_exceeds_oracle() {
    let ds = gen_synthetic(&SynthConfig { train_images: 4, val_images: 2, test_images: 30, jitter: 0.6, ..SynthConfig::default() }).unwrap();
    let spatial = cite::geometry::SpatialEncoding::Flickr;
    let test = ds.phrases_in(Split::Test);
    for limit in [None, Some(2), Some(5)] {
        let enc = ds.encode(spatial, limit).unwrap();
        let bound = oracle_upper_bound(&ds, &test, limit).unwrap();
        for seed in 0..3 {
            let cfg = ModelConfig::new(enc.region_dim(), enc.phrase_dim(), 4, 2, AssignmentMode::Learned, seed);
            let acc = accuracy(&init_model(&cfg).unwrap(), &ds, &enc, &test, &Assigner::Learned).unwrap().accuracy;
            assert!(acc <= bound, "{acc} > {bound} at {limit:?}");
        }
    }
}
