//! Embedding vectors, embedding sets and cosine geometry.
//!
//! Values are held as `f64` in memory. The on-disk format stores `f32`, so a
//! set loaded from disk widens exactly and saves back bit-for-bit.

use crate::error::{Error, Result};

/// Tolerance on `| ||v|| - 1 |` for a row to count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// A single embedding row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateEmbedding);
        }
        let normalized = (norm(&values) - 1.0).abs() <= NORM_TOLERANCE;
        Ok(Self { values, normalized })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `v / ||v||`. Fails on a zero vector.
pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let values = normalized(v.values())?;
    Ok(EmbeddingVector {
        values,
        normalized: true,
    })
}

pub(crate) fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    cosine(u.values(), v.values())
}

/// Cosine similarity on raw slices, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = norm(u);
    let nv = norm(v);
    if !(nu > 0.0) || !(nv > 0.0) {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Metric used to fill a [`SimilarityMatrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub entries: Matrix,
    pub metric: Metric,
}

/// An ordered collection of equal-length embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    set_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    /// Builds a set from row-major values. Requires at least one row.
    pub fn from_flat(set_id: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSet("dim must be positive".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidSet(format!(
                "{} values do not form rows of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSet("non-finite entry".into()));
        }
        Ok(Self {
            set_id: set_id.into(),
            dim,
            data,
        })
    }

    pub fn from_rows(set_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::from_flat(set_id, dim, rows.concat())
    }

    /// Like [`EmbeddingSet::from_rows`] but L2-normalizes every row.
    pub fn from_rows_normalized(set_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| normalized(r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(set_id, &rows)
    }

    pub fn set_id(&self) -> &str {
        &self.set_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> EmbeddingVector {
        EmbeddingVector::new(self.row(i).to_vec()).expect("rows are finite and nonempty")
    }

    /// First row whose norm is off by more than [`NORM_TOLERANCE`].
    pub fn check_normalized(&self) -> Result<()> {
        for (i, r) in self.rows().enumerate() {
            let n = norm(r);
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row: i, norm: n });
            }
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        self.check_normalized().is_ok()
    }

    /// Arithmetic mean of the rows (not renormalized).
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// New set made of the given rows, in the given order.
    pub fn select(&self, set_id: impl Into<String>, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_flat(set_id, self.dim, data)
    }
}

pub fn pairwise_similarity(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<SimilarityMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let an: Vec<f64> = a.rows().map(norm).collect();
    let bn: Vec<f64> = b.rows().map(norm).collect();
    if an.iter().chain(&bn).any(|n| !(*n > 0.0)) {
        return Err(Error::DegenerateEmbedding);
    }
    let entries = Matrix::from_fn(a.len(), b.len(), |i, j| {
        (dot(a.row(i), b.row(j)) / (an[i] * bn[j])).clamp(-1.0, 1.0)
    });
    Ok(SimilarityMatrix {
        entries,
        metric: Metric::Cosine,
    })
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
