//! Set-to-set classification by entropic optimal transport.
//!
//! For every class the visual set and the class's textual set become two
//! discrete measures weighted by entropy-based importance. A Sinkhorn solve
//! couples them under cosine-distance cost, and the class score is the total
//! transported similarity `sum P_ij (1 - C_ij)`. Class probabilities are a
//! temperature softmax over those scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cadrs::ViewSet;
use crate::embed::{dot, entropy, norm, softmax, EmbeddingSet, Matrix};
use crate::error::{Error, Result};
use crate::tgssg::ClassTextualSet;

/// Weights summing to one over the rows of a support set.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub support: EmbeddingSet,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: EmbeddingSet, weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights, "weights")?;
        if weights.len() != support.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} weights for {} support points",
                weights.len(),
                support.len()
            )));
        }
        Ok(Self { support, weights })
    }

    pub fn uniform(support: EmbeddingSet) -> Self {
        let n = support.len();
        Self {
            support,
            weights: vec![1.0 / n as f64; n],
        }
    }
}

fn check_simplex(w: &[f64], name: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidMeasure(format!("{name} empty")));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidMeasure(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMeasure(format!("{name} sum to {total}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Entropy,
    Uniform,
}

/// Entropy-based importance of each element relative to a reference set.
///
/// Element `e_i` gets `q_i = softmax_r(cos(e_i, r) / tau_w)`; a peaked `q_i`
/// (low entropy) marks a discriminative element. Weights are
/// `softmax_i(-H(q_i) / tau_w)`.
pub fn importance_weights(elements: &EmbeddingSet, references: &EmbeddingSet, tau_w: f64) -> Vec<f64> {
    let n = elements.len();
    if n == 1 {
        return vec![1.0];
    }
    let ref_norms: Vec<f64> = references.rows().map(norm).collect();
    let neg_entropy: Vec<f64> = elements
        .rows()
        .map(|e| {
            let ne = norm(e);
            let sims: Vec<f64> = references
                .rows()
                .zip(&ref_norms)
                .map(|(r, nr)| dot(e, r) / (ne * nr))
                .collect();
            -entropy(&softmax(&sims, tau_w))
        })
        .collect();
    softmax(&neg_entropy, tau_w)
}

/// Cosine distance `1 - cos(v_i, t_j)` between every view and every prompt.
pub fn cost_matrix(views: &EmbeddingSet, prompts: &EmbeddingSet) -> Result<Matrix> {
    if views.dim() != prompts.dim() {
        return Err(Error::DimensionMismatch {
            expected: views.dim(),
            got: prompts.dim(),
        });
    }
    let vn: Vec<f64> = views.rows().map(norm).collect();
    let tn: Vec<f64> = prompts.rows().map(norm).collect();
    if vn.iter().chain(&tn).any(|n| !(*n > 0.0)) {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(Matrix::from_fn(views.len(), prompts.len(), |i, j| {
        (1.0 - dot(views.row(i), prompts.row(j)) / (vn[i] * tn[j])).clamp(0.0, 2.0)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    /// Rows index visual elements, columns textual elements.
    pub cost: Matrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub converged: bool,
    pub iterations_used: usize,
    /// Max absolute marginal violation of the returned plan.
    pub marginal_error: f64,
}

impl TransportPlan {
    /// `<P, C>`.
    pub fn cost(&self, cost: &Matrix) -> f64 {
        self.plan
            .as_slice()
            .iter()
            .zip(cost.as_slice())
            .map(|(p, c)| p * c)
            .sum()
    }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn max_violation(plan: &Matrix, a: &[f64], b: &[f64]) -> f64 {
    let rows = plan.row_sums().iter().zip(a).map(|(s, t)| (s - t).abs()).fold(0.0, f64::max);
    let cols = plan.col_sums().iter().zip(b).map(|(s, t)| (s - t).abs()).fold(0.0, f64::max);
    rows.max(cols)
}

/// Entropic OT by Sinkhorn iterations on the dual potentials.
///
/// Works with `f, g` where `P_ij = exp((f_i + g_j - C_ij) / eps)`, so small
/// `eps` never overflows. Zero-mass rows or columns get potential `-inf` and
/// come out as zero.
pub fn sinkhorn(problem: &TransportProblem) -> Result<TransportPlan> {
    let TransportProblem {
        cost,
        a,
        b,
        epsilon,
        max_iters,
        tol,
    } = problem;
    let (n, m) = (cost.rows(), cost.cols());
    if cost.as_slice().iter().any(|c| c.is_nan()) {
        return Err(Error::NanCost);
    }
    if a.len() != n || b.len() != m {
        return Err(Error::InvalidMeasure(format!(
            "marginals {}x{} for a {n}x{m} cost",
            a.len(),
            b.len()
        )));
    }
    check_simplex(a, "a")?;
    check_simplex(b, "b")?;
    if !(*epsilon > 0.0) {
        return Err(Error::InvalidMeasure(format!("epsilon {epsilon}")));
    }
    let eps = *epsilon;
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let plan_of = |f: &[f64], g: &[f64]| {
        Matrix::from_fn(n, m, |i, j| {
            let z = (f[i] + g[j] - cost.get(i, j)) / eps;
            if z.is_nan() {
                0.0
            } else {
                z.exp()
            }
        })
    };

    let mut iterations_used = 0;
    let mut converged = false;
    for it in 1..=*max_iters.max(&1) {
        for i in 0..n {
            f[i] = if log_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let lse = logsumexp((0..m).map(|j| (g[j] - cost.get(i, j)) / eps));
                eps * (log_a[i] - lse)
            };
        }
        for j in 0..m {
            g[j] = if log_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let lse = logsumexp((0..n).map(|i| (f[i] - cost.get(i, j)) / eps));
                eps * (log_b[j] - lse)
            };
        }
        iterations_used = it;
        // columns are exact after the g update; rows carry the residual
        let mut row_err: f64 = 0.0;
        for i in 0..n {
            let s: f64 = (0..m)
                .map(|j| {
                    let z = (f[i] + g[j] - cost.get(i, j)) / eps;
                    if z.is_nan() {
                        0.0
                    } else {
                        z.exp()
                    }
                })
                .sum();
            row_err = row_err.max((s - a[i]).abs());
        }
        if row_err < *tol {
            converged = true;
            break;
        }
    }
    let plan = plan_of(&f, &g);
    let marginal_error = max_violation(&plan, a, b);
    Ok(TransportPlan {
        converged: converged && marginal_error < *tol,
        plan,
        iterations_used,
        marginal_error,
    })
}

/// Scores and normalized probabilities over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    pub fn from_scores(scores: Vec<f64>, tau: f64) -> Self {
        let probabilities = softmax(&scores, tau);
        Self {
            scores,
            probabilities,
        }
    }

    /// Winning class position; ties go to the lower index.
    pub fn prediction(&self) -> usize {
        crate::embed::argmax(&self.probabilities)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtParams {
    pub tau: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub tau_w: f64,
    pub weights: WeightScheme,
}

impl Default for OtParams {
    fn default() -> Self {
        Self {
            tau: 0.01,
            epsilon: 0.1,
            max_iters: 100,
            tol: 1e-6,
            tau_w: 0.5,
            weights: WeightScheme::Entropy,
        }
    }
}

/// Per-class transport score `sum_ij P_ij (1 - C_ij)`.
pub fn transport_score(plan: &TransportPlan, cost: &Matrix) -> f64 {
    1.0 - plan.cost(cost)
}

pub fn classify_ot(
    views: &ViewSet,
    textual_sets: &[ClassTextualSet],
    params: &OtParams,
) -> Result<ClassScores> {
    if textual_sets.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let v = views.embeddings();
    let a = match params.weights {
        WeightScheme::Uniform => vec![1.0 / v.len() as f64; v.len()],
        WeightScheme::Entropy => {
            let centroids: Vec<Vec<f64>> = textual_sets.iter().map(ClassTextualSet::centroid).collect();
            let refs = EmbeddingSet::from_rows("centroids", &centroids)?;
            importance_weights(v, &refs, params.tau_w)
        }
    };
    let scores = textual_sets
        .par_iter()
        .map(|t| {
            let prompts = &t.prompt_embeddings;
            let cost = cost_matrix(v, prompts)?;
            let b = match params.weights {
                WeightScheme::Uniform => vec![1.0 / prompts.len() as f64; prompts.len()],
                WeightScheme::Entropy => importance_weights(prompts, v, params.tau_w),
            };
            let plan = sinkhorn(&TransportProblem {
                cost: cost.clone(),
                a: a.clone(),
                b,
                epsilon: params.epsilon,
                max_iters: params.max_iters,
                tol: params.tol,
            })?;
            Ok(transport_score(&plan, &cost))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ClassScores::from_scores(scores, params.tau))
}
