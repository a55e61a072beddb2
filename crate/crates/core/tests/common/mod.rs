#![allow(dead_code)]

pub mod eval_fixture;

use cite::network::{init_model, ModelConfig, ModelParams};
use cite::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Initialized model with every parameter and running statistic nudged off its default.
pub fn random_model(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut m = init_model(cfg).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in m.params_mut().values_mut() {
        for v in t.as_mut_slice() {
            *v += r.gen_range(-0.2..0.2);
        }
    }
    for (stage, _) in cfg.bn_stages() {
        let s = m.running_stats_mut(&stage).unwrap();
        s.mean.iter_mut().for_each(|x| *x = r.gen_range(-0.5..0.5));
        s.var.iter_mut().for_each(|x| *x = r.gen_range(0.5..1.5));
    }
    m
}
