//! Discriminative region selection.
//!
//! Candidate crops are scored by the mean of a category-agnostic attention
//! map over their footprint. Treating the scores as Gaussian, views scoring
//! at or below `mu - 2 sigma` are discarded; the full image is always kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};

/// Non-negative saliency grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidAttention("empty grid".into()));
        }
        if values.len() != height * width {
            return Err(Error::InvalidAttention(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidAttention(format!("invalid value {v}")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// A crop in relative image coordinates.
///
/// Serialized as `[x0, y0, w, h, hflip]`; `seed_index` is positional and
/// is not stored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64, f64, bool)", into = "(f64, f64, f64, f64, bool)")]
pub struct CropSpec {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
    pub hflip: bool,
    pub seed_index: u64,
}

impl From<(f64, f64, f64, f64, bool)> for CropSpec {
    fn from((x0, y0, w, h, hflip): (f64, f64, f64, f64, bool)) -> Self {
        Self {
            x0,
            y0,
            w,
            h,
            hflip,
            seed_index: 0,
        }
    }
}

impl From<CropSpec> for (f64, f64, f64, f64, bool) {
    fn from(c: CropSpec) -> Self {
        (c.x0, c.y0, c.w, c.h, c.hflip)
    }
}

impl CropSpec {
    pub fn full() -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            w: 1.0,
            h: 1.0,
            hflip: false,
            seed_index: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x0 + self.w <= 1.0
            && self.y0 + self.h <= 1.0
    }

    /// Half-open pixel ranges `(rows, cols)` covered on an `h x w` grid.
    /// Edges are rounded to the nearest pixel boundary; at least one pixel
    /// is always covered.
    pub fn pixel_rect(&self, height: usize, width: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        fn span(start: f64, len: f64, n: usize) -> std::ops::Range<usize> {
            let lo = ((start * n as f64).round() as usize).min(n - 1);
            let hi = (((start + len) * n as f64).round() as usize).clamp(lo + 1, n);
            lo..hi
        }
        (span(self.y0, self.h, height), span(self.x0, self.w, width))
    }
}

/// Sampling ranges for [`generate_crop_specs`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    /// Area fraction range.
    pub scale: [f64; 2],
    /// Width/height ratio range.
    pub ratio: [f64; 2],
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            scale: [0.2, 1.0],
            ratio: [3.0 / 4.0, 4.0 / 3.0],
        }
    }
}

/// Random stream for view `index` under `seed`: ChaCha8 keyed by the seed
/// with the view index as the stream id.
pub fn view_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Largest `x <= 1 - len` so that `x + len <= 1` holds in floating point.
fn place(u: f64, len: f64) -> f64 {
    let mut x = u * (1.0 - len);
    while x > 0.0 && x + len > 1.0 {
        x = x.next_down().max(0.0);
    }
    x
}

/// Deterministic random-resized-crop specs. View `i` draws only from its own
/// stream, so a prefix of a longer list equals the shorter list.
pub fn generate_crop_specs(seed: u64, n: usize, params: &CropParams) -> Vec<CropSpec> {
    (0..n as u64)
        .map(|i| {
            let mut rng = view_rng(seed, i);
            let area = uniform(&mut rng, params.scale[0], params.scale[1]);
            let ratio = uniform(&mut rng, params.ratio[0], params.ratio[1]);
            let w = (area * ratio).sqrt().min(1.0);
            let h = (area / ratio).sqrt().min(1.0);
            let x0 = place(rng.random::<f64>(), w);
            let y0 = place(rng.random::<f64>(), h);
            let hflip = rng.random::<f64>() < 0.5;
            CropSpec {
                x0,
                y0,
                w,
                h,
                hflip,
                seed_index: i,
            }
        })
        .collect()
}

/// Mean of the map over the crop footprint. Flipping does not move the
/// footprint, so `hflip` is ignored.
pub fn mean_activation(map: &AttentionMap, spec: &CropSpec) -> f64 {
    let (rows, cols) = spec.pixel_rect(map.height(), map.width());
    let count = (rows.len() * cols.len()) as f64;
    let mut sum = 0.0;
    for y in rows {
        for x in cols.clone() {
            sum += map.get(y, x);
        }
    }
    sum / count
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    pub per_view_mean: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub threshold: f64,
}

impl ActivationStats {
    pub fn from_activations(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        let sigma = var.sqrt();
        Self {
            per_view_mean: values.to_vec(),
            mu,
            sigma,
            threshold: mu - 2.0 * sigma,
        }
    }
}

/// One-based indices of the views with activation strictly above
/// `mu - 2 sigma`. With `sigma == 0` every view is kept.
pub fn select_views(activations: &[f64]) -> Vec<usize> {
    if activations.is_empty() {
        return Vec::new();
    }
    let stats = ActivationStats::from_activations(activations);
    activations
        .iter()
        .enumerate()
        .filter(|(_, &a)| stats.sigma == 0.0 || a > stats.threshold)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Full-image embedding plus the retained crops.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    embeddings: EmbeddingSet,
    retained: Vec<usize>,
}

impl ViewSet {
    /// A view set holding only the given rows, with no crop bookkeeping.
    pub fn from_embeddings(embeddings: EmbeddingSet) -> Self {
        let retained = (1..embeddings.len()).collect();
        Self {
            embeddings,
            retained,
        }
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    /// One-based crop indices, strictly increasing.
    pub fn retained_indices(&self) -> &[usize] {
        &self.retained
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Stacks `full` and crops `indices` (one-based into `crops`).
pub fn build_view_set(full: &[f64], crops: &EmbeddingSet, indices: &[usize]) -> Result<ViewSet> {
    if full.len() != crops.dim() {
        return Err(Error::DimensionMismatch {
            expected: crops.dim(),
            got: full.len(),
        });
    }
    let mut retained = indices.to_vec();
    retained.sort_unstable();
    retained.dedup();
    let mut data = full.to_vec();
    for &i in &retained {
        if i == 0 || i > crops.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: crops.len(),
            });
        }
        data.extend_from_slice(crops.row(i - 1));
    }
    Ok(ViewSet {
        embeddings: EmbeddingSet::from_flat(crops.set_id(), crops.dim(), data)?,
        retained,
    })
}
