//! Benchmark harness: loads a manifest, runs a matcher over every image and
//! aggregates top-1 accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cadrs::{self, build_view_set, mean_activation, ViewSet};
use crate::config::{MatchConfig, Matcher, SynonymFilterMode, ViewFilter};
use crate::embed::{cosine, EmbeddingSet};
use crate::error::{Error, Result};
use crate::format::{load_attention_map, load_normalized_set};
use crate::manifest::{resolve, ImageRecord, Manifest};
use crate::otmatch::{classify_ot, ClassScores};
use crate::tgssg::{self, build_textual_set, ClassTextualSet, ManifestPrompts, SynonymFilter};
use crate::ttamatch::classify_tta;

/// A manifest with its text embeddings loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub text: EmbeddingSet,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref().to_path_buf();
        let manifest = Manifest::load(&manifest_path)?;
        let text_path = resolve(&manifest_path, &manifest.text_embeddings);
        let text = load_normalized_set(&text_path).map_err(|e| e.context("text embeddings"))?;
        manifest.validate(text.len())?;
        Ok(Self {
            manifest_path,
            manifest,
            text,
        })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        resolve(&self.manifest_path, rel)
    }
}

/// Filters synonyms and assembles one textual set per class, in manifest
/// class order.
pub fn build_textual_sets(ds: &Dataset, config: &MatchConfig) -> Result<(Vec<ClassTextualSet>, SynonymFilter)> {
    let candidates: Vec<_> = ds
        .manifest
        .classes
        .iter()
        .map(|c| tgssg::class_candidates(c, &ds.text, config.synonyms_max))
        .collect();
    let filter = match config.synonym_filter {
        SynonymFilterMode::Topological => tgssg::filter_synonyms(&candidates, config.ambiguity_metric)?,
        SynonymFilterMode::None => tgssg::keep_all(&candidates)?,
    };
    let sets = ds
        .manifest
        .classes
        .iter()
        .map(|c| {
            let retained = filter.retained(c.class_id).expect("every class scored");
            let descriptions: Vec<String> = c.descriptions.iter().map(|d| d.text.clone()).collect();
            let encoder = ManifestPrompts::new(c, &ds.text);
            build_textual_set(c.class_id, &retained, &descriptions, &encoder)
                .map_err(|e| e.context(format!("class {}", c.class_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sets, filter))
}

/// Random stream used to subsample an image's crop pool. Lives on the upper
/// half of the stream space so it never collides with crop streams.
pub fn image_rng(seed: u64, image_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | image_index);
    rng
}

/// One-based crop indices used for an image: all of them when the pool is
/// no larger than `n_views`, otherwise a seeded subset in ascending order.
pub fn candidate_views(seed: u64, image_index: u64, pool: usize, n_views: usize) -> Vec<usize> {
    if pool <= n_views {
        return (1..=pool).collect();
    }
    let mut rng = image_rng(seed, image_index);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool, n_views)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    picked.sort_unstable();
    picked
}

/// Loads an image's files and applies view selection.
pub fn prepare_views(ds: &Dataset, image_index: usize, config: &MatchConfig) -> Result<ViewSet> {
    let img = &ds.manifest.images[image_index];
    prepare_image(ds, img, image_index, config).map_err(|e| e.context(format!("image {}", img.image_id)))
}

fn prepare_image(ds: &Dataset, img: &ImageRecord, image_index: usize, config: &MatchConfig) -> Result<ViewSet> {
    let views = load_normalized_set(ds.resolve(&img.views))?;
    if views.dim() != ds.text.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.text.dim(),
            got: views.dim(),
        });
    }
    let pool = views.len() - 1;
    if img.crops.len() != pool {
        return Err(Error::Manifest(format!(
            "{} crop specs for {} crop rows",
            img.crops.len(),
            pool
        )));
    }
    if pool == 0 {
        return Ok(ViewSet::from_embeddings(views));
    }
    let full = views.row(0).to_vec();
    let crops = views.select("crops", &(1..views.len()).collect::<Vec<_>>())?;
    let candidates = candidate_views(config.seed, image_index as u64, pool, config.n_views);
    let kept: Vec<usize> = match config.view_filter {
        ViewFilter::None => candidates,
        ViewFilter::TwoSigma => {
            let map = load_attention_map(ds.resolve(&img.attention))?;
            let acts: Vec<f64> = candidates
                .iter()
                .map(|&i| mean_activation(&map, &img.crops[i - 1]))
                .collect();
            cadrs::select_views(&acts)
                .into_iter()
                .map(|pos| candidates[pos - 1])
                .collect()
        }
    };
    build_view_set(&full, &crops, &kept)
}

/// Point-to-point scoring: `softmax_k(cos(mean(V), mean(T_k)) / tau)`.
pub fn classify_pointwise(views: &ViewSet, textual_sets: &[ClassTextualSet], tau: f64) -> Result<ClassScores> {
    if textual_sets.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let vbar = views.embeddings().mean();
    let scores = textual_sets
        .iter()
        .map(|t| cosine(&vbar, &t.centroid()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassScores::from_scores(scores, tau))
}

pub fn dispatch(views: &ViewSet, textual_sets: &[ClassTextualSet], config: &MatchConfig) -> Result<ClassScores> {
    match config.matcher {
        Matcher::Ot => classify_ot(views, textual_sets, &config.ot_params()),
        Matcher::Tta => classify_tta(views, textual_sets, &config.tta_params()),
        Matcher::Pointwise => classify_pointwise(views, textual_sets, config.tau),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub true_class_id: u32,
    pub predicted_class_id: u32,
    pub correct: bool,
    pub views_used: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub matcher: Matcher,
    pub n_images: usize,
    pub n_correct: usize,
    pub top1_accuracy: f64,
    pub per_class_accuracy: BTreeMap<u32, ClassAccuracy>,
    pub mean_views_used: f64,
    /// Wall-clock seconds per image spent in the matcher.
    pub mean_inference_seconds: f64,
    pub seed: u64,
    pub config: MatchConfig,
    pub retained_synonyms: BTreeMap<u32, Vec<String>>,
}

impl EvalReport {
    /// JSON with timing zeroed, for byte-level comparison across runs.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.mean_inference_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset   {}", self.dataset);
        let _ = writeln!(s, "matcher   {}", self.matcher);
        let _ = writeln!(s, "seed      {}", self.seed);
        let _ = writeln!(
            s,
            "top-1     {:.2}%  ({}/{})",
            100.0 * self.top1_accuracy,
            self.n_correct,
            self.n_images
        );
        let _ = writeln!(s, "views     {:.1} per image", self.mean_views_used);
        let _ = writeln!(s, "time      {:.6} s per image", self.mean_inference_seconds);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>8}  {:>8}  {:>8}  {:>8}", "class", "correct", "total", "acc(%)");
        for (id, c) in &self.per_class_accuracy {
            let _ = writeln!(
                s,
                "{:>8}  {:>8}  {:>8}  {:>8.2}",
                id,
                c.correct,
                c.total,
                100.0 * c.accuracy
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRun {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

impl BenchmarkRun {
    /// One JSON object per line, in manifest image order.
    pub fn predictions_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.predictions {
            out.push_str(&serde_json::to_string(p)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&self.report)?)?;
        write_file(&dir.join("report.txt"), &self.report.to_table())?;
        write_file(&dir.join("predictions.jsonl"), &self.predictions_jsonl()?)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Worker count from `CPE_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("CPE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs a loaded dataset under `config`.
pub fn run_dataset(ds: &Dataset, config: &MatchConfig) -> Result<BenchmarkRun> {
    config.validate()?;
    let (textual_sets, filter) = build_textual_sets(ds, config)?;
    let class_ids: Vec<u32> = ds.manifest.classes.iter().map(|c| c.class_id).collect();

    let outcomes = with_pool(|| {
        (0..ds.manifest.images.len())
            .into_par_iter()
            .map(|idx| {
                let img = &ds.manifest.images[idx];
                let views = prepare_views(ds, idx, config)?;
                let start = Instant::now();
                let scores = dispatch(&views, &textual_sets, config)
                    .map_err(|e| e.context(format!("image {}", img.image_id)))?;
                let elapsed = start.elapsed().as_secs_f64();
                let k = scores.prediction();
                let predicted = class_ids[k];
                Ok((
                    Prediction {
                        image_id: img.image_id.clone(),
                        true_class_id: img.true_class_id,
                        predicted_class_id: predicted,
                        correct: predicted == img.true_class_id,
                        views_used: views.len(),
                        probability: scores.probabilities[k],
                    },
                    elapsed,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let (predictions, times): (Vec<Prediction>, Vec<f64>) = outcomes.into_iter().unzip();
    let report = summarize(ds, config, &predictions, &times, &filter);
    Ok(BenchmarkRun { report, predictions })
}

fn summarize(
    ds: &Dataset,
    config: &MatchConfig,
    predictions: &[Prediction],
    times: &[f64],
    filter: &SynonymFilter,
) -> EvalReport {
    let mut per_class: BTreeMap<u32, ClassAccuracy> = ds
        .manifest
        .classes
        .iter()
        .map(|c| {
            (
                c.class_id,
                ClassAccuracy {
                    correct: 0,
                    total: 0,
                    accuracy: 0.0,
                },
            )
        })
        .collect();
    for p in predictions {
        let e = per_class.get_mut(&p.true_class_id).expect("validated class id");
        e.total += 1;
        e.correct += p.correct as usize;
    }
    for c in per_class.values_mut() {
        c.accuracy = if c.total == 0 {
            0.0
        } else {
            c.correct as f64 / c.total as f64
        };
    }
    let n = predictions.len();
    let n_correct = predictions.iter().filter(|p| p.correct).count();
    let mean = |xs: &mut dyn Iterator<Item = f64>| if n == 0 { 0.0 } else { xs.sum::<f64>() / n as f64 };
    EvalReport {
        dataset: ds.manifest.dataset_name.clone(),
        matcher: config.matcher,
        n_images: n,
        n_correct,
        top1_accuracy: if n == 0 { 0.0 } else { n_correct as f64 / n as f64 },
        per_class_accuracy: per_class,
        mean_views_used: mean(&mut predictions.iter().map(|p| p.views_used as f64)),
        mean_inference_seconds: mean(&mut times.iter().copied()),
        seed: config.seed,
        config: config.clone(),
        retained_synonyms: filter.classes.iter().map(|(id, d)| (*id, d.retained_texts())).collect(),
    }
}

pub fn run_benchmark(manifest_path: impl AsRef<Path>, config: &MatchConfig) -> Result<BenchmarkRun> {
    config.validate()?;
    let ds = Dataset::load(manifest_path)?;
    run_dataset(&ds, config)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        if values.iter().all(|&v| v == values[0]) {
            return Self { mean: values[0], std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub top1_accuracy: MeanStd,
    pub mean_views_used: MeanStd,
    pub mean_inference_seconds: MeanStd,
    pub reports: Vec<EvalReport>,
}

impl RepeatSummary {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>10}  {:>10}  {:>8}", "seed", "top-1(%)", "views");
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{:>10}  {:>10.2}  {:>8.1}",
                r.seed,
                100.0 * r.top1_accuracy,
                r.mean_views_used
            );
        }
        let _ = writeln!(
            s,
            "{:>10}  {:>5.2} ± {:.2}",
            "mean±std",
            100.0 * self.top1_accuracy.mean,
            100.0 * self.top1_accuracy.std
        );
        s
    }
}

/// Reruns the benchmark once per seed. Only crop sampling depends on the
/// seed.
pub fn run_repeats(manifest_path: impl AsRef<Path>, config: &MatchConfig, seeds: &[u64]) -> Result<RepeatSummary> {
    if seeds.len() < 2 {
        return Err(Error::Config("repeats need at least two seeds".into()));
    }
    config.validate()?;
    let ds = Dataset::load(manifest_path)?;
    let reports = seeds
        .iter()
        .map(|&seed| {
            let cfg = MatchConfig { seed, ..config.clone() };
            run_dataset(&ds, &cfg).map(|r| r.report)
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(RepeatSummary {
        seeds: seeds.to_vec(),
        top1_accuracy: pick(|r| r.top1_accuracy),
        mean_views_used: pick(|r| r.mean_views_used),
        mean_inference_seconds: pick(|r| r.mean_inference_seconds),
        reports,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    SynonymsMax,
    NViews,
    Matcher,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synonyms_max" => Ok(Self::SynonymsMax),
            "n_views" => Ok(Self::NViews),
            "matcher" => Ok(Self::Matcher),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl AblationAxis {
    /// Config with `value` applied along this axis.
    pub fn apply(self, base: &MatchConfig, value: &str) -> Result<MatchConfig> {
        let mut cfg = base.clone();
        let bad = |e: std::num::ParseIntError| Error::Config(format!("bad value {value:?}: {e}"));
        match self {
            Self::SynonymsMax => cfg.synonyms_max = value.trim().parse().map_err(bad)?,
            Self::NViews => cfg.n_views = value.trim().parse().map_err(bad)?,
            Self::Matcher => cfg.matcher = value.trim().parse()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>14}  {:>10}  {:>8}  {:>12}", format!("{:?}", self.axis), "top-1(%)", "views", "s/image");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>14}  {:>10.2}  {:>8.1}  {:>12.6}",
                r.value,
                100.0 * r.report.top1_accuracy,
                r.report.mean_views_used,
                r.report.mean_inference_seconds
            );
        }
        s
    }
}

/// One report per value along `axis`, everything else fixed.
pub fn run_ablation(
    manifest_path: impl AsRef<Path>,
    base: &MatchConfig,
    axis: AblationAxis,
    values: &[String],
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::load(manifest_path)?;
    let rows = values
        .iter()
        .zip(configs)
        .map(|(v, cfg)| {
            run_dataset(&ds, &cfg).map(|run| AblationRow {
                value: v.trim().to_owned(),
                report: run.report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { axis, rows })
}
