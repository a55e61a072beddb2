//! Finite-difference check of the full scoring network and objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cite_objective;
use crate::error::Result;
use crate::network::{forward_pairs, init_model, AssignmentMode, ModelConfig, ModelParams};
use crate::tensor::{grad_check, GradCheckReport, Matrix, Mode, DEFAULT_STEP};

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

/// Scores every pair of `phrases` random phrases and `regions` random regions
/// in train mode and compares the objective's analytic gradient with central
/// differences. Parameters are the usual initialization plus a small random
/// offset, so batch-norm scales and shifts are not at their trivial values.
pub fn check_model_gradients(
    cfg: &ModelConfig,
    phrases: usize,
    regions: usize,
    lambda: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut model = init_model(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in model.params.values_mut() {
        for v in m.as_mut_slice() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let r = uniform(&mut rng, regions, cfg.region_dim);
    let t = uniform(&mut rng, phrases, cfg.phrase_dim);
    let external = (cfg.assignment == AssignmentMode::External).then(|| {
        let mut u = uniform(&mut rng, phrases, cfg.num_embeddings).map(f64::abs);
        for i in 0..phrases {
            let s: f64 = u.row(i).iter().sum();
            u.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        u
    });
    let pairs: Vec<(usize, usize)> = (0..phrases).flat_map(|p| (0..regions).map(move |q| (p, q))).collect();
    let labels: Vec<f64> = pairs
        .iter()
        .map(|&(p, q)| if q == p % regions { 1.0 } else { -1.0 })
        .collect();

    grad_check(model.params(), DEFAULT_STEP, seed, |p| {
        let m = ModelParams {
            config: *cfg,
            params: p.clone(),
            running: model.running.clone(),
        };
        let mut trace = forward_pairs(&m, &r, &t, &pairs, external.as_ref(), Mode::Train)?;
        let (scores, logits) = (trace.scores, trace.logits);
        let loss = cite_objective(trace.tape_mut(), scores, &labels, logits, lambda)?;
        Ok((trace.into_tape(), loss))
    })
}
