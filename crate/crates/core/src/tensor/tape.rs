//! Reverse-mode differentiation over a linear record of layer applications.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward sweep. [`Tape::backward`] walks the nodes in exact
//! reverse order and returns gradients for every parameter leaf.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use super::matrix::{dot, Matrix};
use super::params::{ParamId, ParamSet};
use crate::error::{CiteError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-column statistics of one batch, produced by train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Softmax {
        x: Var,
    },
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    Fusion {
        parts: Vec<Var>,
        weights: Var,
    },
    LogisticLoss {
        scores: Var,
        labels: Vec<f64>,
    },
    L1 {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients keyed by parameter id.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    /// One gradient per tensor of `params`, zero for tensors the loss never reached.
    pub fn dense(&self, params: &ParamSet) -> Vec<Matrix> {
        params
            .iter()
            .map(|(id, _, value)| {
                self.grads
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(value.rows(), value.cols()))
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerically stable `ln(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).clone(), Op::Param(id))
    }

    /// `x·W + b` with `b` a 1×m row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(CiteError::dim(
                "affine",
                format!(
                    "x {:?}, W {:?}, b {:?}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            ));
        }
        let mut out = xv.matmul(wv)?;
        let bias = bv.as_slice();
        for i in 0..out.rows() {
            for (o, &bj) in out.row_mut(i).iter_mut().zip(bias) {
                *o += bj;
            }
        }
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu { x })
    }

    /// Train-mode batch norm; returns the output and the batch statistics
    /// that the caller folds into the running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        if n < 2 {
            return Err(CiteError::BatchSize(n));
        }
        check_bn_params(xv, self.value(gamma), self.value(beta))?;
        let mut mean = vec![0.0; m];
        for i in 0..n {
            for (acc, v) in mean.iter_mut().zip(xv.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; m];
        for i in 0..n {
            for ((acc, v), mu) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (xhat, out) = self.bn_apply(xv, &mean, &inv_std, gamma, beta);
        let var_node = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((var_node, BatchStats { mean, var }))
    }

    /// Inference-mode batch norm using the supplied running statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let xv = self.value(x);
        check_bn_params(xv, self.value(gamma), self.value(beta))?;
        if running_mean.len() != xv.cols() || running_var.len() != xv.cols() {
            return Err(CiteError::dim(
                "batch_norm",
                "running statistics width differs from input",
            ));
        }
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        let (xhat, out) = self.bn_apply(xv, running_mean, &inv_std, gamma, beta);
        Ok(self.push(
            out,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    fn bn_apply(
        &self,
        xv: &Matrix,
        mean: &[f64],
        inv_std: &[f64],
        gamma: Var,
        beta: Var,
    ) -> (Matrix, Matrix) {
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let (n, m) = xv.shape();
        let mut xhat = Matrix::zeros(n, m);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let h = (xv[(i, j)] - mean[j]) * inv_std[j];
                xhat[(i, j)] = h;
                out[(i, j)] = g[j] * h + b[j];
            }
        }
        (xhat, out)
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(CiteError::Validation("l2 normalisation eps must be > 0".into()));
        }
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let norm = dot(xv.row(i), xv.row(i)).sqrt();
            let denom = norm.max(eps);
            out.row_mut(i).iter_mut().for_each(|v| *v /= denom);
            norms.push(norm);
        }
        Ok(self.push(out, Op::L2Normalize { x, norms, eps }))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.ensure_same_shape(bv, "hadamard")?;
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Hadamard { a, b }))
    }

    /// Max-shifted softmax over each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::Softmax { x })
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(x).gather_rows(indices)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Row-wise weighted combination: `out[n,:] = Σ_k weights[n,k] · parts[k][n,:]`.
    ///
    /// This is `F = C·U` evaluated for every row at once, with the columns of
    /// `C` supplied as separate n×M matrices.
    pub fn fusion(&mut self, parts: &[Var], weights: Var) -> Result<Var> {
        let wv = self.value(weights);
        if parts.is_empty() || wv.cols() != parts.len() {
            return Err(CiteError::dim(
                "fusion",
                format!("{} embeddings vs weights {:?}", parts.len(), wv.shape()),
            ));
        }
        let (n, m) = self.value(parts[0]).shape();
        if wv.rows() != n {
            return Err(CiteError::dim(
                "fusion",
                format!("weights {:?} for {n} rows", wv.shape()),
            ));
        }
        let mut out = Matrix::zeros(n, m);
        for (k, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            if pv.shape() != (n, m) {
                return Err(CiteError::dim(
                    "fusion",
                    format!("embedding {k} is {:?}, expected {:?}", pv.shape(), (n, m)),
                ));
            }
            for i in 0..n {
                let u = wv[(i, k)];
                for (o, &c) in out.row_mut(i).iter_mut().zip(pv.row(i)) {
                    *o += u * c;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Fusion {
                parts: parts.to_vec(),
                weights,
            },
        ))
    }

    /// `Σ log(1 + exp(−y·x))` over entries whose label is nonzero.
    ///
    /// `labels` is aligned with the score values; `0.0` marks a masked entry.
    pub fn logistic_loss(&mut self, scores: Var, labels: &[f64]) -> Result<Var> {
        let sv = self.value(scores);
        if sv.len() != labels.len() {
            return Err(CiteError::dim(
                "logistic_loss",
                format!("{} scores vs {} labels", sv.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0 && y != 0.0) {
            return Err(CiteError::Validation(format!("label {bad} is not ±1")));
        }
        let loss = logistic_loss_value(sv.as_slice(), labels);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::LogisticLoss {
                scores,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn l1_norm(&mut self, x: Var) -> Var {
        let total = self.value(x).as_slice().iter().map(|v| v.abs()).sum();
        self.push(Matrix::filled(1, 1, total), Op::L1 { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.ensure_same_shape(bv, "add")?;
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).scale(factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Matrix::filled(1, 1, total), Op::Sum { x })
    }

    /// Fingerprint of every branch taken at a nondifferentiable point
    /// (ReLU and |·| signs, the eps guard of L2 normalisation).
    ///
    /// Two evaluations with equal fingerprints lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } | Op::L1 { x } => {
                    for v in self.value(*x).as_slice() {
                        (v.partial_cmp(&0.0)).hash(&mut h);
                    }
                }
                Op::L2Normalize { norms, eps, .. } => {
                    for n in norms {
                        (n >= eps).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from the scalar `loss`, seeded with `loss_grad`.
    pub fn backward(&self, loss: Var, loss_grad: f64) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(CiteError::State("backward called before any forward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(CiteError::State(format!("loss node {} not on this tape", loss.0)));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(CiteError::State(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, loss_grad));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match out.grads.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.grads.insert(*id, g);
                    }
                },
                Op::Affine { x, w, b } => {
                    let dx = g.matmul_t(self.value(*w))?;
                    let dw = self.value(*x).t_matmul(&g)?;
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, v) in db.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma).as_slice();
                    let (n, m) = g.shape();
                    let nf = n as f64;
                    let mut dgamma = Matrix::zeros(1, m);
                    let mut dbeta = Matrix::zeros(1, m);
                    let mut dx = Matrix::zeros(n, m);
                    for j in 0..m {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut dg = 0.0;
                        let mut db = 0.0;
                        for i in 0..n {
                            let dy = g[(i, j)];
                            dg += dy * xhat[(i, j)];
                            db += dy;
                            let dxh = dy * gam[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[(i, j)];
                        }
                        dgamma.as_mut_slice()[j] = dg;
                        dbeta.as_mut_slice()[j] = db;
                        for i in 0..n {
                            let dxh = g[(i, j)] * gam[j];
                            dx[(i, j)] = inv_std[j] / nf
                                * (nf * dxh - sum_dxhat - xhat[(i, j)] * sum_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::BatchNormInfer {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma).as_slice();
                    let (n, m) = g.shape();
                    let mut dgamma = Matrix::zeros(1, m);
                    let mut dbeta = Matrix::zeros(1, m);
                    let mut dx = Matrix::zeros(n, m);
                    for i in 0..n {
                        for j in 0..m {
                            let dy = g[(i, j)];
                            dgamma.as_mut_slice()[j] += dy * xhat[(i, j)];
                            dbeta.as_mut_slice()[j] += dy;
                            dx[(i, j)] = dy * gam[j] * inv_std[j];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::L2Normalize { x, norms, eps } => {
                    let y = &node.value;
                    let mut dx = g.clone();
                    for (i, &norm) in norms.iter().enumerate() {
                        if norm >= *eps {
                            let proj = dot(y.row(i), g.row(i));
                            for (d, &yv) in dx.row_mut(i).iter_mut().zip(y.row(i)) {
                                *d = (*d - yv * proj) / norm;
                            }
                        } else {
                            dx.row_mut(i).iter_mut().for_each(|d| *d /= eps);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Hadamard { a, b } => {
                    let mut da = g.clone();
                    for (d, v) in da.as_mut_slice().iter_mut().zip(self.value(*b).as_slice()) {
                        *d *= v;
                    }
                    let mut db = g;
                    for (d, v) in db.as_mut_slice().iter_mut().zip(self.value(*a).as_slice()) {
                        *d *= v;
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let mut dx = g.clone();
                    for i in 0..y.rows() {
                        let proj = dot(y.row(i), g.row(i));
                        for (d, &yv) in dx.row_mut(i).iter_mut().zip(y.row(i)) {
                            *d = yv * (*d - proj);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherRows { x, indices } => {
                    let src = self.value(*x);
                    let mut dx = Matrix::zeros(src.rows(), src.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Fusion { parts, weights } => {
                    let wv = self.value(*weights);
                    let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                    for (k, &p) in parts.iter().enumerate() {
                        let pv = self.value(p);
                        let mut dp = g.clone();
                        for i in 0..g.rows() {
                            dw[(i, k)] = dot(g.row(i), pv.row(i));
                            let u = wv[(i, k)];
                            dp.row_mut(i).iter_mut().for_each(|d| *d *= u);
                        }
                        accumulate(&mut grads, p, dp);
                    }
                    accumulate(&mut grads, *weights, dw);
                }
                Op::LogisticLoss { scores, labels } => {
                    let upstream = g.as_slice()[0];
                    let sv = self.value(*scores);
                    let data = sv
                        .as_slice()
                        .iter()
                        .zip(labels)
                        .map(|(&x, &y)| {
                            if y == 0.0 {
                                0.0
                            } else {
                                -y * sigmoid(-y * x) * upstream
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *scores, Matrix::from_vec(sv.rows(), sv.cols(), data)?);
                }
                Op::L1 { x } => {
                    let upstream = g.as_slice()[0];
                    let dx = self.value(*x).map(|v| {
                        if v > 0.0 {
                            upstream
                        } else if v < 0.0 {
                            -upstream
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale { x, factor } => {
                    accumulate(&mut grads, *x, g.scale(*factor));
                }
                Op::Sum { x } => {
                    let upstream = g.as_slice()[0];
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, upstream));
                }
            }
        }
        for (id, g) in &out.grads {
            if !g.is_finite() {
                return Err(CiteError::Numeric(format!("gradient of parameter #{}", id.0)));
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn check_bn_params(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Result<()> {
    let m = x.cols();
    if gamma.shape() != (1, m) || beta.shape() != (1, m) {
        return Err(CiteError::dim(
            "batch_norm",
            format!(
                "input {:?}, gamma {:?}, beta {:?}",
                x.shape(),
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Row softmax with the row maximum subtracted first.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// `Σ softplus(−y·x)`, skipping entries whose label is 0.
pub fn logistic_loss_value(scores: &[f64], labels: &[f64]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&x, &y)| softplus(-y * x))
        .sum()
}
