//! Scores recomputed with plain loops straight from the stored tensors.

mod common;

use cite::network::{concept_weights, score, AssignmentMode, ModelConfig, ModelParams};
use cite::tensor::{Matrix, Mode, BN_EPS};
use common::{random_matrix, random_model, rng};

fn stage(m: &ModelParams, name: &str, x: &[f64], bn: bool) -> Vec<f64> {
    let w = m.tensor(&format!("{name}.w")).unwrap();
    let b = m.tensor(&format!("{name}.b")).unwrap();
    let mut y = vec![0.0; w.cols()];
    for j in 0..w.cols() {
        let mut acc = b[(0, j)];
        for (i, xi) in x.iter().enumerate() {
            acc += xi * w[(i, j)];
        }
        y[j] = acc;
    }
    if !bn {
        return y;
    }
    let g = m.tensor(&format!("{name}.gamma")).unwrap();
    let be = m.tensor(&format!("{name}.beta")).unwrap();
    let rs = m.running_stats(name).unwrap();
    for j in 0..y.len() {
        let z = (y[j] - rs.mean[j]) / (rs.var[j] + BN_EPS).sqrt() * g[(0, j)] + be[(0, j)];
        y[j] = z.max(0.0);
    }
    y
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n.max(1e-10)).collect()
}

fn oracle_u(m: &ModelParams, t: &[f64]) -> Vec<f64> {
    let h = stage(m, "concept.fc1", t, true);
    let phi = stage(m, "concept.fc2", &h, false);
    let mx = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = phi.iter().map(|p| (p - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn oracle_score(m: &ModelParams, r: &[f64], t: &[f64], u: &[f64]) -> f64 {
    let v = normalize(stage(m, "img.fc2", &stage(m, "img.fc1", r, true), true));
    let p = normalize(stage(m, "txt.fc2", &stage(m, "txt.fc1", t, true), true));
    let joint: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a * b).collect();
    let p1 = stage(m, "p1", &joint, true);
    let mut fused = vec![0.0; p1.len()];
    for (k, uk) in u.iter().enumerate() {
        let c = stage(m, &format!("cond{k}"), &p1, true);
        for (f, ci) in fused.iter_mut().zip(c) {
            *f += uk * ci;
        }
    }
    stage(m, "cls", &fused, false)[0]
}

#[test]
fn learned_scores_and_weights_match_loop_oracle() {
    let cfg = ModelConfig::new(7, 5, 3, 3, AssignmentMode::Learned, 11);
    let m = random_model(&cfg, 1);
    let mut r = rng(2);
    let regions = random_matrix(&mut r, 6, 7);
    let phrases = random_matrix(&mut r, 4, 5);
    let (s, _) = score(&m, &regions, &phrases, None, Mode::Infer).unwrap();
    let (u, phi) = concept_weights(&m, &phrases, Mode::Infer).unwrap();
    assert_eq!(phi.shape(), (4, 3));
    for i in 0..4 {
        let ou = oracle_u(&m, phrases.row(i));
        for k in 0..3 {
            assert!((u[(i, k)] - ou[k]).abs() < 1e-12);
        }
        for j in 0..6 {
            let o = oracle_score(&m, regions.row(j), phrases.row(i), &ou);
            assert!((s[(i, j)] - o).abs() < 1e-10, "({i},{j}) {} vs {o}", s[(i, j)]);
        }
    }
}

#[test]
fn external_scores_match_loop_oracle() {
    let cfg = ModelConfig::new(4, 6, 2, 2, AssignmentMode::External, 3);
    let m = random_model(&cfg, 5);
    let mut r = rng(8);
    let regions = random_matrix(&mut r, 3, 4);
    let phrases = random_matrix(&mut r, 2, 6);
    let u = Matrix::from_rows(&[[0.25, 0.75], [1.0, 0.0]]);
    let (s, _) = score(&m, &regions, &phrases, Some(&u), Mode::Infer).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            let o = oracle_score(&m, regions.row(j), phrases.row(i), u.row(i));
            assert!((s[(i, j)] - o).abs() < 1e-10);
        }
    }
}

#[test]
fn fusion_is_affine_in_weights() {
    let cfg = ModelConfig::new(5, 5, 4, 3, AssignmentMode::External, 9);
    let m = random_model(&cfg, 9);
    let mut r = rng(9);
    let regions = random_matrix(&mut r, 5, 5);
    let phrases = random_matrix(&mut r, 1, 5);
    let a = Matrix::from_rows(&[[0.2, 0.3, 0.5]]);
    let b = Matrix::from_rows(&[[0.6, 0.0, 0.4]]);
    let mix = Matrix::from_rows(&[[0.3 * 0.2 + 0.7 * 0.6, 0.3 * 0.3, 0.3 * 0.5 + 0.7 * 0.4]]);
    let sa = score(&m, &regions, &phrases, Some(&a), Mode::Infer).unwrap().0;
    let sb = score(&m, &regions, &phrases, Some(&b), Mode::Infer).unwrap().0;
    let sm = score(&m, &regions, &phrases, Some(&mix), Mode::Infer).unwrap().0;
    for j in 0..5 {
        assert!((sm[(0, j)] - (0.3 * sa[(0, j)] + 0.7 * sb[(0, j)])).abs() < 1e-12);
    }
}

#[test]
fn infer_scores_do_not_depend_on_batch_composition() {
    let cfg = ModelConfig::new(6, 6, 4, 2, AssignmentMode::Learned, 4);
    let m = random_model(&cfg, 4);
    let mut r = rng(4);
    let regions = random_matrix(&mut r, 9, 6);
    let phrases = random_matrix(&mut r, 5, 6);
    let (full, _) = score(&m, &regions, &phrases, None, Mode::Infer).unwrap();
    for i in 0..5 {
        for j in 0..9 {
            let one_r = regions.gather_rows(&[j]).unwrap();
            let one_p = phrases.gather_rows(&[i]).unwrap();
            let (s, _) = score(&m, &one_r, &one_p, None, Mode::Infer).unwrap();
            assert_eq!(s[(0, 0)], full[(i, j)]);
        }
    }
}

#[test]
fn permuting_inputs_permutes_scores() {
    let cfg = ModelConfig::new(6, 6, 4, 3, AssignmentMode::Learned, 6);
    let m = random_model(&cfg, 6);
    let mut r = rng(6);
    let regions = random_matrix(&mut r, 7, 6);
    let phrases = random_matrix(&mut r, 4, 6);
    let (full, _) = score(&m, &regions, &phrases, None, Mode::Infer).unwrap();
    let rp = [3, 0, 6, 1, 5, 2, 4];
    let pp = [2, 3, 1, 0];
    let (s, _) = score(
        &m,
        &regions.gather_rows(&rp).unwrap(),
        &phrases.gather_rows(&pp).unwrap(),
        None,
        Mode::Infer,
    )
    .unwrap();
    for (a, &i) in pp.iter().enumerate() {
        for (b, &j) in rp.iter().enumerate() {
            assert_eq!(s[(a, b)], full[(i, j)]);
        }
    }
}
