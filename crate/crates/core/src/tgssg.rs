//! Topology-guided synonym filtering and textual prompt set assembly.
//!
//! Each class carries candidate synonyms with text embeddings. A candidate's
//! ambiguity entropy is `-sum_{j != i} d_ij ln d_ij` over its cosine
//! similarities to the other candidates. A class's compactness `P_k` is the
//! mean H0 bar length of its candidate cloud. Candidate `i` of class `k` is
//! kept when `H_k(i) * P_k` is below the mean compactness over all classes;
//! the original class name is always kept.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbeddingSet};
use crate::error::{Error, Result};
use crate::manifest::{ClassRecord, Manifest};
use crate::tda;

/// Lower clamp applied before taking logs.
pub const SIMILARITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityMetric {
    /// `d = cos(f_i, f_j)`.
    #[default]
    Similarity,
    /// `d = 1 - cos(f_i, f_j)`.
    Distance,
}

impl AmbiguityMetric {
    fn weight(self, cos: f64) -> f64 {
        let d = match self {
            AmbiguityMetric::Similarity => cos,
            AmbiguityMetric::Distance => 1.0 - cos,
        };
        d.clamp(SIMILARITY_FLOOR, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynonymCandidate {
    pub text: String,
    /// Unit-norm text embedding.
    pub embedding: Vec<f64>,
    pub is_original: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbiguityScore {
    pub candidate_index: usize,
    pub value: f64,
}

pub fn ambiguity_entropy(
    features: &EmbeddingSet,
    i: usize,
    metric: AmbiguityMetric,
) -> AmbiguityScore {
    let fi = features.row(i);
    let value = features
        .rows()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, fj)| {
            let d = metric.weight(dot(fi, fj).clamp(-1.0, 1.0));
            -d * d.ln()
        })
        .sum::<f64>()
        .max(0.0);
    AmbiguityScore {
        candidate_index: i,
        value,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassCandidates {
    pub class_id: u32,
    pub candidates: Vec<SynonymCandidate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDecision {
    /// Candidates after case-folded deduplication, in input order.
    pub candidates: Vec<SynonymCandidate>,
    pub entropies: Vec<f64>,
    pub persistence: f64,
    pub keep: Vec<bool>,
}

impl ClassDecision {
    pub fn retained(&self) -> Vec<SynonymCandidate> {
        self.candidates
            .iter()
            .zip(&self.keep)
            .filter(|(_, k)| **k)
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn retained_texts(&self) -> Vec<String> {
        self.retained().into_iter().map(|c| c.text).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynonymFilter {
    /// Mean compactness over classes, the retention threshold.
    pub expected_persistence: f64,
    pub classes: BTreeMap<u32, ClassDecision>,
}

impl SynonymFilter {
    pub fn retained(&self, class_id: u32) -> Option<Vec<SynonymCandidate>> {
        self.classes.get(&class_id).map(ClassDecision::retained)
    }
}

/// Drops later candidates whose lowercased text repeats an earlier one;
/// the survivor inherits `is_original` from any dropped duplicate.
pub fn dedup_candidates(candidates: &[SynonymCandidate]) -> Vec<SynonymCandidate> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<SynonymCandidate> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let key = c.text.trim().to_lowercase();
        match seen.get(&key) {
            Some(&at) => out[at].is_original |= c.is_original,
            None => {
                seen.insert(key, out.len());
                out.push(c.clone());
            }
        }
    }
    out
}

fn score_class(class: &ClassCandidates, metric: AmbiguityMetric) -> Result<ClassDecision> {
    let ctx = |e: Error| e.context(format!("class {}", class.class_id));
    let candidates = dedup_candidates(&class.candidates);
    if candidates.is_empty() {
        return Err(ctx(Error::InvalidSet("no synonym candidates".into())));
    }
    let rows: Vec<Vec<f64>> = candidates.iter().map(|c| c.embedding.clone()).collect();
    let features = EmbeddingSet::from_rows(format!("class-{}", class.class_id), &rows).map_err(ctx)?;
    let persistence = tda::compactness(&features).map_err(ctx)?;
    let entropies = (0..features.len())
        .map(|i| ambiguity_entropy(&features, i, metric).value)
        .collect();
    Ok(ClassDecision {
        keep: vec![false; candidates.len()],
        candidates,
        entropies,
        persistence,
    })
}

/// Scores every class, then keeps candidates with `H * P < E[P]`.
pub fn filter_synonyms(
    per_class: &[ClassCandidates],
    metric: AmbiguityMetric,
) -> Result<SynonymFilter> {
    if per_class.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let scored: Vec<ClassDecision> = per_class
        .par_iter()
        .map(|c| score_class(c, metric))
        .collect::<Result<_>>()?;
    let expected = scored.iter().map(|d| d.persistence).sum::<f64>() / scored.len() as f64;

    let mut classes = BTreeMap::new();
    for (class, mut decision) in per_class.iter().zip(scored) {
        decision.keep = decision
            .candidates
            .iter()
            .zip(&decision.entropies)
            .map(|(c, h)| c.is_original || h * decision.persistence < expected)
            .collect();
        classes.insert(class.class_id, decision);
    }
    Ok(SynonymFilter {
        expected_persistence: expected,
        classes,
    })
}

/// Keeps every (deduplicated) candidate; used when filtering is disabled.
pub fn keep_all(per_class: &[ClassCandidates]) -> Result<SynonymFilter> {
    if per_class.is_empty() {
        return Err(Error::EmptyClassList);
    }
    let classes = per_class
        .iter()
        .map(|c| {
            let candidates = dedup_candidates(&c.candidates);
            let n = candidates.len();
            let decision = ClassDecision {
                candidates,
                entropies: vec![0.0; n],
                persistence: 0.0,
                keep: vec![true; n],
            };
            (c.class_id, decision)
        })
        .collect();
    Ok(SynonymFilter {
        expected_persistence: 0.0,
        classes,
    })
}

pub fn prompt_text(synonym: &str, description: Option<&str>) -> String {
    match description {
        Some(d) => format!("a photo of a {synonym}, {d}"),
        None => format!("a photo of a {synonym}"),
    }
}

/// Source of prompt embeddings, keyed by the prompt's provenance.
pub trait PromptEncoder {
    fn encode(&self, synonym: &str, description: Option<&str>) -> Option<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTextualSet {
    pub class_id: u32,
    pub prompt_embeddings: EmbeddingSet,
    /// `(synonym, description)` behind each row.
    pub provenance: Vec<(String, Option<String>)>,
    pub prompts: Vec<String>,
}

impl ClassTextualSet {
    /// Mean prompt embedding (not renormalized).
    pub fn centroid(&self) -> Vec<f64> {
        self.prompt_embeddings.mean()
    }
}

/// One prompt per (synonym, description) pair, synonym-major; with no
/// descriptions, one template-only prompt per synonym.
pub fn build_textual_set(
    class_id: u32,
    retained: &[SynonymCandidate],
    descriptions: &[String],
    encoder: &dyn PromptEncoder,
) -> Result<ClassTextualSet> {
    if retained.is_empty() {
        return Err(Error::InvalidSet(format!("class {class_id}: no retained synonyms")));
    }
    let descs: Vec<Option<&str>> = if descriptions.is_empty() {
        vec![None]
    } else {
        descriptions.iter().map(|d| Some(d.as_str())).collect()
    };
    let mut rows = Vec::with_capacity(retained.len() * descs.len());
    let mut provenance = Vec::with_capacity(rows.capacity());
    let mut prompts = Vec::with_capacity(rows.capacity());
    for syn in retained {
        for &d in &descs {
            let prompt = prompt_text(&syn.text, d);
            let emb = encoder
                .encode(&syn.text, d)
                .ok_or_else(|| Error::UnencodedPrompt(prompt.clone()))?;
            rows.push(emb);
            provenance.push((syn.text.clone(), d.map(str::to_owned)));
            prompts.push(prompt);
        }
    }
    Ok(ClassTextualSet {
        class_id,
        prompt_embeddings: EmbeddingSet::from_rows(format!("class-{class_id}-prompts"), &rows)?,
        provenance,
        prompts,
    })
}

/// Prompt rows of one manifest class, looked up by exact provenance.
pub struct ManifestPrompts<'a> {
    text: &'a EmbeddingSet,
    rows: HashMap<(String, Option<String>), usize>,
}

impl<'a> ManifestPrompts<'a> {
    pub fn new(class: &ClassRecord, text: &'a EmbeddingSet) -> Self {
        let mut rows = HashMap::new();
        for (s_idx, s) in class.synonyms.iter().enumerate() {
            if let Some(r) = s.prompt_row {
                rows.insert((s.text.clone(), None), r);
            }
            for d in &class.descriptions {
                rows.insert((s.text.clone(), Some(d.text.clone())), d.rows[0] + s_idx);
            }
        }
        Self { text, rows }
    }
}

impl PromptEncoder for ManifestPrompts<'_> {
    fn encode(&self, synonym: &str, description: Option<&str>) -> Option<Vec<f64>> {
        let key = (synonym.to_owned(), description.map(str::to_owned));
        self.rows
            .get(&key)
            .filter(|&&r| r < self.text.len())
            .map(|&r| self.text.row(r).to_vec())
    }
}

/// Candidates for one manifest class: the original name plus at most
/// `max_synonyms` further synonyms, in manifest order.
pub fn class_candidates(
    class: &ClassRecord,
    text: &EmbeddingSet,
    max_synonyms: usize,
) -> ClassCandidates {
    let mut extra = 0;
    let candidates = class
        .synonyms
        .iter()
        .filter(|s| {
            if s.is_original {
                true
            } else {
                extra += 1;
                extra <= max_synonyms
            }
        })
        .map(|s| SynonymCandidate {
            text: s.text.clone(),
            embedding: text.row(s.row).to_vec(),
            is_original: s.is_original,
        })
        .collect();
    ClassCandidates {
        class_id: class.class_id,
        candidates,
    }
}

/// Records the filter outcome under the manifest's `retained_synonyms` key.
pub fn annotate_manifest(manifest: &mut Manifest, filter: &SynonymFilter) {
    manifest.retained_synonyms = Some(
        filter
            .classes
            .iter()
            .map(|(id, d)| (*id, d.retained_texts()))
            .collect(),
    );
}
