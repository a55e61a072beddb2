//! Lloyd's k-means with k-means++ seeding.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConceptWeights, WeightSource};
use crate::error::{CiteError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    pub centers: Matrix,
    pub seed: u64,
    pub iterations_run: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest center, lowest index on ties, and its squared distance.
pub fn nearest_center(x: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(x, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(k, x.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centers.row(0))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.gen_range(0..n),
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centers.row(c)));
        }
    }
    centers
}

fn assign_all(x: &Matrix, centers: &Matrix) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = (0..x.rows())
        .map(|i| {
            let (c, d) = nearest_center(x.row(i), centers);
            inertia += d;
            c
        })
        .collect();
    (labels, inertia)
}

/// Fits `k` centers to the rows of `x`.
///
/// Runs Lloyd iterations until the assignment stops changing or `max_iter`
/// updates have been made. Empty clusters are reseeded with the point farthest
/// from its current center. Centers are finally ordered by the index of the
/// first row assigned to them.
pub fn kmeans_fit(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel> {
    let n = x.rows();
    if k == 0 {
        return Err(CiteError::Validation("k-means needs K ≥ 1".into()));
    }
    if n < k {
        return Err(CiteError::Validation(format!(
            "k-means with K={k} needs at least {k} points, got {n}"
        )));
    }
    if !x.is_finite() {
        return Err(CiteError::Numeric("k-means input".into()));
    }
    let d = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(x, k, &mut rng);
    let (mut labels, inertia) = assign_all(x, &centers);
    let mut history = vec![inertia];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centers.row(labels[a]));
                        let db = sq_dist(x.row(b), centers.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n ≥ k ≥ 1");
                centers.row_mut(c).copy_from_slice(x.row(far));
                labels[far] = c;
            }
        }
        let (next, inertia) = assign_all(x, &centers);
        history.push(inertia);
        let changed = next != labels;
        labels = next;
        if !changed {
            break;
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    let first_hit: Vec<usize> = (0..k)
        .map(|c| labels.iter().position(|&l| l == c).unwrap_or(usize::MAX))
        .collect();
    order.sort_by_key(|&c| (first_hit[c], c));
    let centers = centers.gather_rows(&order)?;

    Ok(KMeansModel {
        centers,
        seed,
        iterations_run: iterations,
        inertia_history: history,
    })
}

/// One-hot membership of the nearest center.
pub fn kmeans_assign(x: &[f64], model: &KMeansModel) -> Result<ConceptWeights> {
    if x.len() != model.dim() {
        return Err(CiteError::dim(
            "kmeans_assign",
            format!("vector of length {} vs centers of width {}", x.len(), model.dim()),
        ));
    }
    let (c, _) = nearest_center(x, &model.centers);
    ConceptWeights::one_hot(model.k(), c, WeightSource::Kmeans)
}
