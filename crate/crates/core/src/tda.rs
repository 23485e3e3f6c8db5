//! Zero-dimensional Vietoris–Rips persistence over cosine distances.
//!
//! In a VR filtration every point is born at scale 0 and two components
//! merge at the length of the shortest edge joining them, so the finite H0
//! deaths are exactly the minimum-spanning-tree edge weights. Kruskal's
//! algorithm with a union-find yields them in ascending order.

use crate::embed::{dot, EmbeddingSet, Matrix};
use crate::error::{Error, Result};

/// Symmetric matrix of pairwise distances with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    entries: Matrix,
}

impl DistanceMatrix {
    /// Validates squareness, zero diagonal, symmetry (1e-9) and finiteness.
    pub fn new(entries: Matrix) -> Result<Self> {
        let n = entries.rows();
        if entries.cols() != n {
            return Err(Error::InvalidSet(format!(
                "distance matrix is {}x{}",
                n,
                entries.cols()
            )));
        }
        for i in 0..n {
            if entries.get(i, i) != 0.0 {
                return Err(Error::InvalidSet(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (entries.get(i, j), entries.get(j, i));
                if !a.is_finite() || a < 0.0 || (a - b).abs() > 1e-9 {
                    return Err(Error::InvalidSet(format!(
                        "entry ({i},{j}) invalid or asymmetric"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// Returns a copy with every entry multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            entries: self.entries.map(|v| v * alpha),
        }
    }

    /// Upper-triangle edges `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j, self.get(i, j)));
            }
        }
        edges
    }
}

/// `1 - cos(f_i, f_j)` for normalized rows, clamped to `[0, 2]`.
pub fn cosine_distance_matrix(set: &EmbeddingSet) -> Result<DistanceMatrix> {
    set.check_normalized()?;
    let n = set.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = (1.0 - dot(set.row(i), set.row(j))).clamp(0.0, 2.0);
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    DistanceMatrix::new(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bar {
    pub birth: f64,
    pub death: f64,
}

impl Bar {
    pub fn length(&self) -> f64 {
        self.death - self.birth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceDiagram {
    /// Finite bars sorted by death.
    pub finite_bars: Vec<Bar>,
    pub essential_count: usize,
}

impl PersistenceDiagram {
    pub fn deaths(&self) -> Vec<f64> {
        self.finite_bars.iter().map(|b| b.death).collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// H0 persistence of the VR filtration on `dist`.
///
/// Ties are broken by `(i, j)` order; only the multiset of deaths is
/// observable so the choice does not matter.
pub fn zero_dim_persistence(dist: &DistanceMatrix) -> PersistenceDiagram {
    let n = dist.len();
    let mut edges = dist.edges();
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut uf = UnionFind::new(n);
    let mut finite_bars = Vec::with_capacity(n.saturating_sub(1));
    for (i, j, w) in edges {
        if uf.union(i, j) {
            finite_bars.push(Bar {
                birth: 0.0,
                death: w,
            });
            if finite_bars.len() + 1 == n {
                break;
            }
        }
    }
    PersistenceDiagram {
        finite_bars,
        essential_count: usize::from(n > 0),
    }
}

/// Mean finite bar length over an `n`-point space; 0 for a single point.
pub fn total_persistence(diag: &PersistenceDiagram, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let total: f64 = diag.finite_bars.iter().map(Bar::length).sum();
    total / (n - 1) as f64
}

/// Compactness scalar of an embedding cloud: mean H0 bar length under
/// cosine distance.
pub fn compactness(set: &EmbeddingSet) -> Result<f64> {
    let dist = cosine_distance_matrix(set)?;
    Ok(total_persistence(&zero_dim_persistence(&dist), set.len()))
}
