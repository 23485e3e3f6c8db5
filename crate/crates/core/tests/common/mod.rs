#![allow(dead_code)]

use cpe_core::cadrs::ViewSet;
use cpe_core::embed::{EmbeddingSet, Matrix};
use cpe_core::tgssg::ClassTextualSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    unit(gaussian(rng, dim, 1.0))
}

pub fn around(rng: &mut ChaCha8Rng, center: &[f64], scale: f64) -> Vec<f64> {
    let noise = gaussian(rng, center.len(), scale / (center.len() as f64).sqrt());
    unit(center.iter().zip(noise).map(|(c, n)| c + n).collect())
}

pub fn view_set(rows: &[Vec<f64>]) -> ViewSet {
    ViewSet::from_embeddings(EmbeddingSet::from_rows("views", rows).unwrap())
}

pub fn textual_set(class_id: u32, rows: &[Vec<f64>]) -> ClassTextualSet {
    ClassTextualSet {
        class_id,
        prompt_embeddings: EmbeddingSet::from_rows(format!("t{class_id}"), rows).unwrap(),
        provenance: (0..rows.len()).map(|i| (format!("s{i}"), None)).collect(),
        prompts: (0..rows.len()).map(|i| format!("a photo of a s{i}")).collect(),
    }
}

/// Random metric on `n` points: Euclidean distances of random planar points,
/// rounded to a coarse grid so ties occur.
pub fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0..8) as f64, rng.random_range(0..8) as f64))
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
        ((dx * dx + dy * dy).sqrt() * 8.0).round() / 8.0
    })
}

/// Threshold-sweep connectivity oracle: for each distinct edge weight `t`
/// ascending, count components of the graph with edges `<= t` by flood
/// fill; each drop in the count contributes that many deaths at `t`.
pub fn sweep_deaths(d: &Matrix) -> Vec<f64> {
    let n = d.rows();
    let mut weights: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| d.get(i, j))
        .collect();
    weights.sort_by(f64::total_cmp);
    weights.dedup();
    let components = |t: f64| {
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if !seen[v] && d.get(u, v) <= t {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    };
    let mut deaths = Vec::new();
    let mut prev = n;
    for t in weights {
        let c = components(t);
        deaths.extend(std::iter::repeat_n(t, prev - c));
        prev = c;
    }
    deaths
}

/// Plain Sinkhorn-Knopp scaling in the primal domain, iterated to `tol`.
pub fn sinkhorn_oracle(cost: &Matrix, a: &[f64], b: &[f64], eps: f64, tol: f64) -> Matrix {
    let (n, m) = (cost.rows(), cost.cols());
    let k = cost.map(|c| (-c / eps).exp());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    for _ in 0..1_000_000 {
        for i in 0..n {
            let s: f64 = (0..m).map(|j| k.get(i, j) * v[j]).sum();
            u[i] = a[i] / s;
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| k.get(i, j) * u[i]).sum();
            v[j] = b[j] / s;
        }
        let err = (0..n)
            .map(|i| ((0..m).map(|j| u[i] * k.get(i, j) * v[j]).sum::<f64>() - a[i]).abs())
            .fold(0.0, f64::max);
        if err < tol {
            break;
        }
    }
    Matrix::from_fn(n, m, |i, j| u[i] * k.get(i, j) * v[j])
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut w: Vec<f64> = w.into_iter().map(|x| x / s).collect();
    // exact unit sum up to rounding of the last entry
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    w
}

/// Softmax of `scores / tau`, computed independently of the crate.
pub fn softmax_oracle(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Three well-separated synonym clouds on disjoint coordinate planes, with
/// an outlier in the third. Angles are in degrees.
pub fn synonym_fixture_angles() -> [(u32, Vec<f64>); 3] {
    [
        (0, vec![0.0, 10.0, 20.0]),
        (1, vec![0.0, 15.0, 30.0]),
        (2, vec![0.0, 10.0, 20.0, 85.0]),
    ]
}

pub fn plane_vector(dim: usize, plane: usize, degrees: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let r = degrees.to_radians();
    v[2 * plane] = r.cos();
    v[2 * plane + 1] = r.sin();
    v
}
