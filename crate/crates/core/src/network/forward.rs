use super::{AssignmentMode, ModelParams, L2_EPS};
use crate::error::{CiteError, Result};
use crate::tensor::{BatchStats, Matrix, Mode, Tape, Var};

/// All intermediate activations of one scoring pass.
///
/// Pair-level values (joint vector, `P1`, the columns of `C`, `F`, scores)
/// have one row per scored `(phrase, region)` pair, in the order given to
/// [`forward_pairs`]. Phrase-level values (`φ`, `U`) have one row per phrase.
pub struct ForwardTrace {
    tape: Tape,
    pub(crate) pairs: Vec<(usize, usize)>,
    pub(crate) batch_stats: Vec<(String, BatchStats)>,
    pub region_pre_norm: Var,
    pub region_embedding: Var,
    pub phrase_pre_norm: Var,
    pub phrase_embedding: Var,
    pub joint: Var,
    pub p1: Var,
    pub conditional: Vec<Var>,
    pub logits: Option<Var>,
    pub weights: Var,
    pub pair_weights: Var,
    pub fused: Var,
    pub scores: Var,
}

impl ForwardTrace {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.tape.value(v)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Batch statistics of every train-mode batch-norm stage (empty in infer mode).
    pub fn batch_stats(&self) -> &[(String, BatchStats)] {
        &self.batch_stats
    }

    /// `x_ij` for each pair, as a column vector.
    pub fn pair_scores(&self) -> &Matrix {
        self.tape.value(self.scores)
    }

    /// Concept weights `U`, one row per phrase.
    pub fn concept_weights(&self) -> &Matrix {
        self.tape.value(self.weights)
    }

    /// Concept logits `φ` (learned mode only).
    pub fn concept_logits(&self) -> Option<&Matrix> {
        self.logits.map(|v| self.tape.value(v))
    }

    /// The `M×K` conditional matrix `C` for pair `row`.
    pub fn conditional_matrix(&self, row: usize) -> Matrix {
        let k = self.conditional.len();
        let m = self.tape.value(self.conditional[0]).cols();
        let mut c = Matrix::zeros(m, k);
        for (col, &v) in self.conditional.iter().enumerate() {
            for (i, &x) in self.tape.value(v).row(row).iter().enumerate() {
                c[(i, col)] = x;
            }
        }
        c
    }
}

struct Builder<'a> {
    params: &'a ModelParams,
    tape: Tape,
    mode: Mode,
    stats: Vec<(String, BatchStats)>,
}

impl Builder<'_> {
    fn param(&mut self, name: &str) -> Var {
        let id = self
            .params
            .params
            .id(name)
            .unwrap_or_else(|| panic!("model is missing tensor {name}"));
        self.tape.param(&self.params.params, id)
    }

    fn affine(&mut self, x: Var, stage: &str) -> Result<Var> {
        let w = self.param(&format!("{stage}.w"));
        let b = self.param(&format!("{stage}.b"));
        self.tape.affine(x, w, b)
    }

    fn batch_norm(&mut self, x: Var, stage: &str) -> Result<Var> {
        let gamma = self.param(&format!("{stage}.gamma"));
        let beta = self.param(&format!("{stage}.beta"));
        match self.mode {
            Mode::Train => {
                let (y, s) = self.tape.batch_norm_train(x, gamma, beta)?;
                self.stats.push((stage.to_string(), s));
                Ok(y)
            }
            Mode::Infer => {
                let r = &self.params.running[stage];
                self.tape.batch_norm_infer(x, gamma, beta, &r.mean, &r.var)
            }
        }
    }

    /// `affine → batch norm → ReLU`
    fn stage(&mut self, x: Var, stage: &str) -> Result<Var> {
        let a = self.affine(x, stage)?;
        let n = self.batch_norm(a, stage)?;
        Ok(self.tape.relu(n))
    }

    fn concept_branch(&mut self, phrases: Var) -> Result<(Var, Var)> {
        let h = self.stage(phrases, "concept.fc1")?;
        let logits = self.affine(h, "concept.fc2")?;
        let weights = self.tape.softmax_rows(logits);
        Ok((logits, weights))
    }
}

fn check_inputs(params: &ModelParams, regions: &Matrix, phrases: &Matrix) -> Result<()> {
    let cfg = params.config();
    if regions.cols() != cfg.region_dim {
        return Err(CiteError::dim(
            "score",
            format!("region features have {} columns, model expects {}", regions.cols(), cfg.region_dim),
        ));
    }
    if phrases.cols() != cfg.phrase_dim {
        return Err(CiteError::dim(
            "score",
            format!("phrase features have {} columns, model expects {}", phrases.cols(), cfg.phrase_dim),
        ));
    }
    Ok(())
}

/// Scores the listed `(phrase index, region index)` pairs.
///
/// `external` holds one row of concept weights per phrase and is required
/// exactly when the model uses external assignment.
pub fn forward_pairs(
    params: &ModelParams,
    regions: &Matrix,
    phrases: &Matrix,
    pairs: &[(usize, usize)],
    external: Option<&Matrix>,
    mode: Mode,
) -> Result<ForwardTrace> {
    check_inputs(params, regions, phrases)?;
    let cfg = *params.config();
    if let Some(&(p, r)) = pairs
        .iter()
        .find(|&&(p, r)| p >= phrases.rows() || r >= regions.rows())
    {
        return Err(CiteError::dim(
            "score",
            format!("pair ({p}, {r}) outside {} phrases × {} regions", phrases.rows(), regions.rows()),
        ));
    }
    let mut b = Builder {
        params,
        tape: Tape::new(),
        mode,
        stats: Vec::new(),
    };

    let rv = b.tape.constant(regions.clone());
    let h = b.stage(rv, "img.fc1")?;
    let region_pre_norm = b.stage(h, "img.fc2")?;
    let region_embedding = b.tape.l2_normalize_rows(region_pre_norm, L2_EPS)?;

    let pv = b.tape.constant(phrases.clone());
    let h = b.stage(pv, "txt.fc1")?;
    let phrase_pre_norm = b.stage(h, "txt.fc2")?;
    let phrase_embedding = b.tape.l2_normalize_rows(phrase_pre_norm, L2_EPS)?;

    let phrase_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let region_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let rg = b.tape.gather_rows(region_embedding, &region_idx)?;
    let pg = b.tape.gather_rows(phrase_embedding, &phrase_idx)?;
    let joint = b.tape.hadamard(rg, pg)?;

    let p1 = b.stage(joint, "p1")?;
    let conditional = (0..cfg.num_embeddings)
        .map(|k| b.stage(p1, &format!("cond{k}")))
        .collect::<Result<Vec<_>>>()?;

    let (logits, weights) = match (cfg.assignment, external) {
        (AssignmentMode::Learned, _) => {
            let (l, w) = b.concept_branch(pv)?;
            (Some(l), w)
        }
        (AssignmentMode::External, Some(u)) => {
            if u.shape() != (phrases.rows(), cfg.num_embeddings) {
                return Err(CiteError::dim(
                    "score",
                    format!(
                        "external weights {:?}, expected ({}, {})",
                        u.shape(),
                        phrases.rows(),
                        cfg.num_embeddings
                    ),
                ));
            }
            (None, b.tape.constant(u.clone()))
        }
        (AssignmentMode::External, None) => {
            return Err(CiteError::Validation(
                "external assignment mode needs concept weights for every phrase".into(),
            ))
        }
    };
    let pair_weights = b.tape.gather_rows(weights, &phrase_idx)?;
    let fused = b.tape.fusion(&conditional, pair_weights)?;
    let scores = b.affine(fused, "cls")?;
    if !b.tape.value(scores).is_finite() {
        return Err(CiteError::Numeric("scores".into()));
    }

    Ok(ForwardTrace {
        tape: b.tape,
        pairs: pairs.to_vec(),
        batch_stats: b.stats,
        region_pre_norm,
        region_embedding,
        phrase_pre_norm,
        phrase_embedding,
        joint,
        p1,
        conditional,
        logits,
        weights,
        pair_weights,
        fused,
        scores,
    })
}

/// Scores every phrase against every region, returning a `phrases × regions` matrix.
pub fn score(
    params: &ModelParams,
    regions: &Matrix,
    phrases: &Matrix,
    external: Option<&Matrix>,
    mode: Mode,
) -> Result<(Matrix, ForwardTrace)> {
    let (p, r) = (phrases.rows(), regions.rows());
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (0..r).map(move |j| (i, j))).collect();
    let trace = forward_pairs(params, regions, phrases, &pairs, external, mode)?;
    let scores = Matrix::from_vec(p, r, trace.pair_scores().as_slice().to_vec())?;
    Ok((scores, trace))
}

/// Concept logits `φ` and weights `U = softmax(φ)` for a block of phrases.
pub fn concept_weights(params: &ModelParams, phrases: &Matrix, mode: Mode) -> Result<(Matrix, Matrix)> {
    let cfg = params.config();
    if cfg.assignment != AssignmentMode::Learned {
        return Err(CiteError::Mode {
            op: "concept_weights",
            mode: cfg.assignment.to_string(),
        });
    }
    if phrases.cols() != cfg.phrase_dim {
        return Err(CiteError::dim(
            "concept_weights",
            format!("{} columns, model expects {}", phrases.cols(), cfg.phrase_dim),
        ));
    }
    let mut b = Builder {
        params,
        tape: Tape::new(),
        mode,
        stats: Vec::new(),
    };
    let pv = b.tape.constant(phrases.clone());
    let (logits, weights) = b.concept_branch(pv)?;
    Ok((b.tape.value(weights).clone(), b.tape.value(logits).clone()))
}
