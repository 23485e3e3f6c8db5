//! Seeded synthetic datasets written in the on-disk formats.
//!
//! Each class has a random unit mean. Synonym and prompt embeddings scatter
//! around it; hallucinated synonyms point in unrelated directions. Each
//! image draws a latent vector near its class mean. Its attention map is
//! bright except for a dark bottom-right corner. A crop's embedding mixes the
//! latent with a background direction (another class's mean) in proportion
//! to the crop's dark fraction. Injected noise crops sit inside the dark
//! corner, so their embeddings point at the wrong class.
//!
//! Descriptions stand for local parts: description `d` of a class adds a
//! fixed offset to its prompts, and a crop whose center falls in the `d`-th
//! vertical band of the image carries the same offset scaled by
//! `part_strength`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cadrs::{generate_crop_specs, mean_activation, AttentionMap, CropParams, CropSpec};
use crate::embed::{normalized, EmbeddingSet};
use crate::error::{Error, Result};
use crate::format::{save_attention_map, save_embedding_set};
use crate::manifest::{ClassRecord, DescriptionEntry, ImageRecord, Manifest, SynonymEntry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewModel {
    /// Views are noisy crops of a latent image vector.
    #[default]
    Gaussian,
    /// Every view equals the normalized prompt centroid of the true class.
    ExactCentroid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dataset_name: String,
    pub n_classes: usize,
    pub dim: usize,
    pub images_per_class: usize,
    /// Candidate crops stored per image (including noise crops).
    pub pool_views: usize,
    /// Share of the pool placed inside the dark background corner.
    pub noise_fraction: f64,
    /// Norm of the latent offset from the class mean.
    pub image_noise: f64,
    pub view_noise: f64,
    /// Synonyms besides the original name, including hallucinated ones.
    pub synonyms_per_class: usize,
    pub hallucinated_synonyms: usize,
    pub synonym_noise: f64,
    pub original_noise: f64,
    pub descriptions_per_class: usize,
    pub description_noise: f64,
    /// Scale of the part offset carried by crops.
    pub part_strength: f64,
    pub attention_size: usize,
    pub view_model: ViewModel,
    /// Shift every label by one class, so a perfect matcher scores zero.
    pub permute_labels: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dataset_name: "synthetic".into(),
            n_classes: 10,
            dim: 32,
            images_per_class: 50,
            pool_views: 100,
            noise_fraction: 0.15,
            image_noise: 2.3,
            view_noise: 0.6,
            synonyms_per_class: 5,
            hallucinated_synonyms: 1,
            synonym_noise: 0.35,
            original_noise: 0.35,
            descriptions_per_class: 3,
            description_noise: 0.8,
            part_strength: 1.0,
            attention_size: 32,
            view_model: ViewModel::Gaussian,
            permute_labels: false,
            seed: 0,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    dim: usize,
}

impl Gen {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        let s = scale / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| s * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn around(&mut self, center: &[f64], scale: f64) -> Vec<f64> {
        let noise = self.gaussian(scale);
        let v: Vec<f64> = center.iter().zip(&noise).map(|(c, n)| c + n).collect();
        normalized(&v).expect("gaussian offset is nonzero")
    }

    fn unit(&mut self) -> Vec<f64> {
        normalized(&self.gaussian(1.0)).expect("gaussian draw is nonzero")
    }
}

fn to_f32_precision(v: Vec<f64>) -> Vec<f64> {
    // store-exact rows keep CPEB round trips and in-memory values identical
    let narrowed: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
    narrowed
}

/// The dark region of every synthetic attention map, in relative units.
pub const DARK_CORNER: f64 = 0.25;

fn attention_map(size: usize) -> Result<AttentionMap> {
    let dark_from = ((1.0 - DARK_CORNER) * size as f64).round() as usize;
    let values = (0..size * size)
        .map(|p| {
            let (y, x) = (p / size, p % size);
            if y >= dark_from && x >= dark_from {
                0.02
            } else {
                1.0
            }
        })
        .collect();
    AttentionMap::new(size, size, values)
}

fn noise_crop(rng: &mut ChaCha8Rng, index: u64) -> CropSpec {
    let side = DARK_CORNER * rng.random_range(0.5..1.0);
    let slack = DARK_CORNER - side;
    CropSpec {
        x0: 1.0 - DARK_CORNER + slack * rng.random::<f64>(),
        y0: 1.0 - DARK_CORNER + slack * rng.random::<f64>(),
        w: side,
        h: side,
        hflip: rng.random::<bool>(),
        seed_index: index,
    }
}

/// Writes a dataset under `dir` and returns the manifest path.
pub fn generate(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if spec.n_classes < 2 || spec.dim < 2 || spec.synonyms_per_class < spec.hallucinated_synonyms {
        return Err(Error::Config("synthetic spec needs >= 2 classes, dim >= 2".into()));
    }
    for sub in ["views", "attn"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        dim: spec.dim,
    };
    let means: Vec<Vec<f64>> = (0..spec.n_classes).map(|_| g.unit()).collect();

    // text rows: per class, synonyms then description prompts
    let mut text_rows: Vec<Vec<f64>> = Vec::new();
    let mut classes = Vec::with_capacity(spec.n_classes);
    let mut prompt_centroids = Vec::with_capacity(spec.n_classes);
    let mut class_parts: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.n_classes);
    for (c, mean) in means.iter().enumerate() {
        let n_syn = spec.synonyms_per_class + 1;
        let hallucinated_at: Vec<usize> = (0..spec.hallucinated_synonyms).map(|h| n_syn - 1 - h).collect();
        let mut syn_vecs = Vec::with_capacity(n_syn);
        let mut synonyms = Vec::with_capacity(n_syn);
        for s in 0..n_syn {
            let v = if s == 0 {
                g.around(mean, spec.original_noise)
            } else if hallucinated_at.contains(&s) {
                g.unit()
            } else {
                g.around(mean, spec.synonym_noise)
            };
            let v = to_f32_precision(v);
            synonyms.push(SynonymEntry {
                text: if s == 0 {
                    format!("class {c}")
                } else {
                    format!("class {c} synonym {s}")
                },
                row: text_rows.len(),
                is_original: s == 0,
                prompt_row: Some(text_rows.len()),
            });
            text_rows.push(v.clone());
            syn_vecs.push(v);
        }
        let mut descriptions = Vec::new();
        let mut parts = Vec::new();
        let mut prompt_sum = vec![0.0; spec.dim];
        let mut prompt_count = 0.0;
        for d in 0..spec.descriptions_per_class {
            let offset = g.gaussian(spec.description_noise);
            parts.push(offset.clone());
            let start = text_rows.len();
            for sv in &syn_vecs {
                let v: Vec<f64> = sv.iter().zip(&offset).map(|(a, b)| a + b).collect();
                let v = to_f32_precision(normalized(&v)?);
                for (acc, x) in prompt_sum.iter_mut().zip(&v) {
                    *acc += x;
                }
                prompt_count += 1.0;
                text_rows.push(v);
            }
            descriptions.push(DescriptionEntry {
                text: format!("description {d} of class {c}"),
                rows: [start, text_rows.len()],
            });
        }
        if prompt_count == 0.0 {
            for sv in &syn_vecs {
                for (acc, x) in prompt_sum.iter_mut().zip(sv) {
                    *acc += x;
                }
            }
        }
        prompt_centroids.push(normalized(&prompt_sum)?);
        class_parts.push(parts);
        classes.push(ClassRecord {
            class_id: c as u32,
            given_name: format!("class {c}"),
            synonyms,
            descriptions,
        });
    }
    let text = EmbeddingSet::from_rows("text", &text_rows)?;
    save_embedding_set(&text, dir.join("text.cpeb"))?;

    let map = match spec.view_model {
        ViewModel::Gaussian => attention_map(spec.attention_size)?,
        ViewModel::ExactCentroid => AttentionMap::constant(spec.attention_size, spec.attention_size, 1.0)?,
    };
    let n_noise = (spec.noise_fraction * spec.pool_views as f64).round() as usize;
    let crop_params = CropParams::default();
    let mut images = Vec::new();
    for c in 0..spec.n_classes {
        for i in 0..spec.images_per_class {
            let image_index = (c * spec.images_per_class + i) as u64;
            let image_id = format!("img{image_index:05}");
            let mut crops = generate_crop_specs(spec.seed ^ image_index.wrapping_mul(0x9E37_79B9), spec.pool_views, &crop_params);
            if spec.view_model == ViewModel::Gaussian {
                // spread noise crops evenly through the pool
                for k in 0..n_noise {
                    let at = (k * spec.pool_views) / n_noise.max(1);
                    crops[at] = noise_crop(&mut g.rng, at as u64);
                }
            }
            let rows: Vec<Vec<f64>> = match spec.view_model {
                ViewModel::ExactCentroid => vec![prompt_centroids[c].clone(); spec.pool_views + 1],
                ViewModel::Gaussian => {
                    let latent = g.around(&means[c], spec.image_noise);
                    let other = (c + 1 + g.rng.random_range(0..spec.n_classes - 1)) % spec.n_classes;
                    let background = &means[other];
                    let mut rows = vec![latent.clone()];
                    for crop in &crops {
                        let object = mean_activation(&map, crop).clamp(0.0, 1.0);
                        let parts = &class_parts[c];
                        let part = (!parts.is_empty()).then(|| {
                            let center = crop.x0 + crop.w / 2.0;
                            &parts[((center * parts.len() as f64) as usize).min(parts.len() - 1)]
                        });
                        let mix: Vec<f64> = (0..spec.dim)
                            .map(|k| {
                                let p = part.map_or(0.0, |p| spec.part_strength * p[k]);
                                object * (latent[k] + p) + (1.0 - object) * background[k]
                            })
                            .collect();
                        rows.push(g.around(&mix, spec.view_noise));
                    }
                    rows
                }
            };
            let rows: Vec<Vec<f64>> = rows.into_iter().map(to_f32_precision).collect();
            let views = EmbeddingSet::from_rows(image_id.clone(), &rows)?;
            let views_rel = PathBuf::from("views").join(format!("{image_id}.cpeb"));
            let attn_rel = PathBuf::from("attn").join(format!("{image_id}.cpea"));
            save_embedding_set(&views, dir.join(&views_rel))?;
            save_attention_map(&map, dir.join(&attn_rel))?;
            let label = if spec.permute_labels { (c + 1) % spec.n_classes } else { c };
            images.push(ImageRecord {
                image_id,
                true_class_id: label as u32,
                views: views_rel,
                attention: attn_rel,
                crops,
            });
        }
    }

    let manifest = Manifest {
        dataset_name: spec.dataset_name.clone(),
        text_embeddings: PathBuf::from("text.cpeb"),
        classes,
        images,
        retained_synonyms: None,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
