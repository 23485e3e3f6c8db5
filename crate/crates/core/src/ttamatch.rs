//! Test-time adaptation of per-class shift vectors.
//!
//! Each class centroid `c_k` is shifted by a learnable `l_k`. Views are
//! classified by `softmax_k((c_k + l_k) . v / tau)`; the most confident views
//! are averaged into a marginal whose entropy is reduced by one gradient
//! step on the shifts. Inference compares the mean view with the shifted
//! centroids.

use serde::{Deserialize, Serialize};

use crate::cadrs::ViewSet;
use crate::embed::{dot, entropy, norm, softmax};
use crate::error::{Error, Result};
use crate::otmatch::ClassScores;
use crate::tgssg::ClassTextualSet;

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftState {
    pub shifts: Vec<Vec<f64>>,
    pub learning_rate: f64,
}

impl ShiftState {
    pub fn zeros(classes: usize, dim: usize, learning_rate: f64) -> Self {
        Self {
            shifts: vec![vec![0.0; dim]; classes],
            learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewDistribution {
    pub probs: Vec<f64>,
    pub entropy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtaParams {
    pub tau: f64,
    pub learning_rate: f64,
    /// Fraction of views kept for the marginal.
    pub fraction: f64,
    /// Renormalize `c_k + l_k` to unit length before scoring.
    pub renormalize_shifted: bool,
}

impl Default for TtaParams {
    fn default() -> Self {
        Self {
            tau: 0.01,
            learning_rate: 5e-4,
            fraction: 0.1,
            renormalize_shifted: false,
        }
    }
}

/// `c_k + l_k` for every class, optionally normalized.
pub fn shifted_centroids(centroids: &[Vec<f64>], shifts: &ShiftState, renormalize: bool) -> Vec<Vec<f64>> {
    centroids
        .iter()
        .zip(&shifts.shifts)
        .map(|(c, l)| {
            let w: Vec<f64> = c.iter().zip(l).map(|(a, b)| a + b).collect();
            if renormalize {
                let n = norm(&w);
                if n > 0.0 {
                    return w.iter().map(|x| x / n).collect();
                }
            }
            w
        })
        .collect()
}

fn distributions_for(views: &[&[f64]], targets: &[Vec<f64>], tau: f64) -> Vec<ViewDistribution> {
    views
        .iter()
        .map(|v| {
            let logits: Vec<f64> = targets.iter().map(|t| dot(t, v)).collect();
            let probs = softmax(&logits, tau);
            ViewDistribution {
                entropy: entropy(&probs),
                probs,
            }
        })
        .collect()
}

pub fn view_distributions(
    views: &ViewSet,
    centroids: &[Vec<f64>],
    shifts: &ShiftState,
    tau: f64,
    renormalize: bool,
) -> Vec<ViewDistribution> {
    let targets = shifted_centroids(centroids, shifts, renormalize);
    let rows: Vec<&[f64]> = views.embeddings().rows().collect();
    distributions_for(&rows, &targets, tau)
}

/// Indices of the `max(1, ceil(fraction * n))` lowest-entropy views,
/// ascending. Ties prefer the lower index.
pub fn select_confident(dists: &[ViewDistribution], fraction: f64) -> Vec<usize> {
    if dists.is_empty() {
        return Vec::new();
    }
    let m = ((fraction * dists.len() as f64).ceil() as usize).clamp(1, dists.len());
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&i, &j| dists[i].entropy.total_cmp(&dists[j].entropy).then(i.cmp(&j)));
    let mut chosen = order[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

fn marginal(dists: &[ViewDistribution], selected: &[usize]) -> Vec<f64> {
    let k = dists[0].probs.len();
    let mut out = vec![0.0; k];
    for &i in selected {
        for (o, p) in out.iter_mut().zip(&dists[i].probs) {
            *o += p;
        }
    }
    let m = selected.len() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    out
}

/// Entropy of the mean distribution over the `selected` views.
pub fn marginal_entropy(
    views: &ViewSet,
    centroids: &[Vec<f64>],
    shifts: &ShiftState,
    params: &TtaParams,
    selected: &[usize],
) -> f64 {
    let d = view_distributions(views, centroids, shifts, params.tau, params.renormalize_shifted);
    entropy(&marginal(&d, selected))
}

/// Analytic gradient of the marginal entropy with respect to every shift,
/// holding the selected views fixed.
pub fn entropy_gradient(
    views: &ViewSet,
    centroids: &[Vec<f64>],
    shifts: &ShiftState,
    params: &TtaParams,
    selected: &[usize],
) -> Vec<Vec<f64>> {
    let k = centroids.len();
    let dim = views.embeddings().dim();
    let raw = shifted_centroids(centroids, shifts, false);
    let targets = shifted_centroids(centroids, shifts, params.renormalize_shifted);
    let rows: Vec<&[f64]> = views.embeddings().rows().collect();
    let dists = distributions_for(&rows, &targets, params.tau);
    let pbar = marginal(&dists, selected);
    // dL/dpbar_k = -(ln pbar_k + 1)
    let dl_dp: Vec<f64> = pbar
        .iter()
        .map(|&p| if p > 0.0 { -(p.ln() + 1.0) } else { 0.0 })
        .collect();
    let m = selected.len() as f64;

    // gradient with respect to the scoring targets
    let mut grad = vec![vec![0.0; dim]; k];
    for &i in selected {
        let p = &dists[i].probs;
        let weighted: f64 = dl_dp.iter().zip(p).map(|(g, q)| g * q).sum();
        for c in 0..k {
            // sum_k' dl_dp[k'] p(k') (delta - p(c)) = p(c) (dl_dp[c] - weighted)
            let coeff = p[c] * (dl_dp[c] - weighted) / (m * params.tau);
            if coeff != 0.0 {
                for (g, v) in grad[c].iter_mut().zip(rows[i]) {
                    *g += coeff * v;
                }
            }
        }
    }
    if params.renormalize_shifted {
        // d(w/|w|)/dw = (I - u u^T) / |w|
        for c in 0..k {
            let n = norm(&raw[c]);
            if n > 0.0 {
                let u = &targets[c];
                let proj = dot(u, &grad[c]);
                for (g, ui) in grad[c].iter_mut().zip(u) {
                    *g = (*g - proj * ui) / n;
                }
            }
        }
    }
    grad
}

/// One entropy-minimizing gradient step on the shifts.
pub fn tta_step(
    views: &ViewSet,
    centroids: &[Vec<f64>],
    shifts: &ShiftState,
    params: &TtaParams,
) -> ShiftState {
    let dists = view_distributions(views, centroids, shifts, params.tau, params.renormalize_shifted);
    let selected = select_confident(&dists, params.fraction);
    let grad = entropy_gradient(views, centroids, shifts, params, &selected);
    let lr = shifts.learning_rate;
    let updated = shifts
        .shifts
        .iter()
        .zip(&grad)
        .map(|(l, g)| l.iter().zip(g).map(|(a, b)| a - lr * b).collect())
        .collect();
    ShiftState {
        shifts: updated,
        learning_rate: lr,
    }
}

/// Scores `(c_k + l_k) . mean(V) / tau`.
pub fn infer_tta(
    views: &ViewSet,
    centroids: &[Vec<f64>],
    shifts: &ShiftState,
    params: &TtaParams,
) -> ClassScores {
    let vbar = views.embeddings().mean();
    let targets = shifted_centroids(centroids, shifts, params.renormalize_shifted);
    let scores = targets.iter().map(|t| dot(t, &vbar)).collect();
    ClassScores::from_scores(scores, params.tau)
}

/// Resets shifts, adapts once, and classifies.
pub fn classify_tta(
    views: &ViewSet,
    textual_sets: &[ClassTextualSet],
    params: &TtaParams,
) -> Result<ClassScores> {
    if textual_sets.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let dim = views.embeddings().dim();
    if let Some(t) = textual_sets.iter().find(|t| t.prompt_embeddings.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: t.prompt_embeddings.dim(),
        });
    }
    let centroids: Vec<Vec<f64>> = textual_sets.iter().map(ClassTextualSet::centroid).collect();
    let shifts = ShiftState::zeros(centroids.len(), dim, params.learning_rate);
    let adapted = tta_step(views, &centroids, &shifts, params);
    Ok(infer_tta(views, &centroids, &adapted, params))
}
