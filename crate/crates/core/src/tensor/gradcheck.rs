//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{CiteError, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Coordinates sampled per tensor; smaller tensors are checked exhaustively.
pub const COORDS_PER_TENSOR: usize = 200;
/// Denominator floor of the relative error. Gradients this small are dominated
/// by round-off in the difference quotient (e.g. biases feeding batch norm).
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose ±h evaluations straddle a ReLU/|·| kink.
    pub skipped: usize,
}

/// Compares analytic gradients of `loss_fn` against central differences.
///
/// `loss_fn` must rebuild the whole computation from the given parameters and
/// return the tape together with its scalar loss node.
pub fn grad_check<F>(params: &ParamSet, h: f64, seed: u64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(Tape, Var)>,
{
    if h <= 0.0 {
        return Err(CiteError::Validation("finite-difference step must be > 0".into()));
    }
    let (tape, loss) = loss_fn(params)?;
    let base = tape.scalar(loss);
    if !base.is_finite() {
        return Err(CiteError::Numeric("grad_check loss".into()));
    }
    let analytic = tape.backward(loss, 1.0)?.dense(params);
    let base_sig = tape.kink_signature();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
        skipped: 0,
    };
    let eval = |p: &ParamSet| -> Result<(f64, u64)> {
        let (t, l) = loss_fn(p)?;
        let v = t.scalar(l);
        if !v.is_finite() {
            return Err(CiteError::Numeric("grad_check perturbed loss".into()));
        }
        Ok((v, t.kink_signature()))
    };

    for (tensor_idx, (id, name, value)) in params.iter().enumerate() {
        let coords: Vec<usize> = if value.len() <= COORDS_PER_TENSOR {
            (0..value.len()).collect()
        } else {
            let mut c = sample(&mut rng, value.len(), COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        for coord in coords {
            let orig = value.as_slice()[coord];
            work.get_mut(id).as_mut_slice()[coord] = orig + h;
            let (plus, sig_plus) = eval(&work)?;
            work.get_mut(id).as_mut_slice()[coord] = orig - h;
            let (minus, sig_minus) = eval(&work)?;
            work.get_mut(id).as_mut_slice()[coord] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[tensor_idx].as_slice()[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.to_string();
                report.worst_index = coord;
            }
        }
    }
    Ok(report)
}
