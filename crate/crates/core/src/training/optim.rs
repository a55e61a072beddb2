use crate::error::{CiteError, Result};
use crate::tensor::{Matrix, ParamSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check(params: &ParamSet, grads: &[Matrix]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(CiteError::dim(
            "optimizer",
            format!("{} gradients for {} tensors", grads.len(), params.len()),
        ));
    }
    for ((_, name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(CiteError::dim(
                "optimizer",
                format!("gradient of {name} is {:?}, tensor is {:?}", g.shape(), p.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(CiteError::Numeric(format!("gradient of {name}")));
        }
    }
    Ok(())
}

/// Bias-corrected Adam with per-tensor moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix], lr: f64) -> Result<()> {
        check(params, grads)?;
        if self.m.len() != grads.len() {
            return Err(CiteError::State("optimizer state built for another parameter set".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent, `p ← p − lr·g`.
pub fn sgd_step(params: &mut ParamSet, grads: &[Matrix], lr: f64) -> Result<()> {
    check(params, grads)?;
    for (p, g) in params.values_mut().zip(grads) {
        for (x, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *x -= lr * d;
        }
    }
    Ok(())
}
