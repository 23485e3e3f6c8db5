//! Run configuration shared by the harness and the CLI.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cadrs::CropParams;
use crate::error::{Error, Result};
use crate::otmatch::{OtParams, WeightScheme};
use crate::tgssg::AmbiguityMetric;
use crate::ttamatch::TtaParams;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    #[default]
    Ot,
    Tta,
    #[serde(alias = "pointwise-baseline", alias = "pointwise_baseline")]
    Pointwise,
}

impl FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(Matcher::Ot),
            "tta" => Ok(Matcher::Tta),
            "pointwise" | "pointwise-baseline" => Ok(Matcher::Pointwise),
            other => Err(Error::Config(format!("unknown matcher {other:?}"))),
        }
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Matcher::Ot => "ot",
            Matcher::Tta => "tta",
            Matcher::Pointwise => "pointwise",
        })
    }
}

/// How candidate crops are pruned before matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewFilter {
    #[default]
    TwoSigma,
    None,
}

/// How synonym candidates are pruned before prompt assembly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynonymFilterMode {
    #[default]
    Topological,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub matcher: Matcher,
    pub tau: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub tau_w: f64,
    pub weights: WeightScheme,
    pub tta_lr: f64,
    pub tta_fraction: f64,
    pub renormalize_shifted: bool,
    /// Candidate crops drawn per image.
    pub n_views: usize,
    pub crop_scale: [f64; 2],
    /// Synonyms considered per class besides the original name.
    pub synonyms_max: usize,
    pub ambiguity_metric: AmbiguityMetric,
    pub view_filter: ViewFilter,
    pub synonym_filter: SynonymFilterMode,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            matcher: Matcher::Ot,
            tau: 0.01,
            epsilon: 0.1,
            sinkhorn_iters: 100,
            sinkhorn_tol: 1e-6,
            tau_w: 0.5,
            weights: WeightScheme::Entropy,
            tta_lr: 5e-4,
            tta_fraction: 0.1,
            renormalize_shifted: false,
            n_views: 100,
            crop_scale: [0.2, 1.0],
            synonyms_max: 5,
            ambiguity_metric: AmbiguityMetric::Similarity,
            view_filter: ViewFilter::TwoSigma,
            synonym_filter: SynonymFilterMode::Topological,
            seed: 0,
        }
    }
}

impl MatchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("sinkhorn_tol", self.sinkhorn_tol),
            ("tau_w", self.tau_w),
            ("tta_lr", self.tta_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tta_fraction > 0.0 && self.tta_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tta_fraction must be in (0, 1], got {}",
                self.tta_fraction
            )));
        }
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop_scale must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]")));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::Config("sinkhorn_iters must be positive".into()));
        }
        if self.n_views == 0 {
            return Err(Error::Config("n_views must be positive".into()));
        }
        Ok(())
    }

    pub fn ot_params(&self) -> OtParams {
        OtParams {
            tau: self.tau,
            epsilon: self.epsilon,
            max_iters: self.sinkhorn_iters,
            tol: self.sinkhorn_tol,
            tau_w: self.tau_w,
            weights: self.weights,
        }
    }

    pub fn tta_params(&self) -> TtaParams {
        TtaParams {
            tau: self.tau,
            learning_rate: self.tta_lr,
            fraction: self.tta_fraction,
            renormalize_shifted: self.renormalize_shifted,
        }
    }

    pub fn crop_params(&self) -> CropParams {
        CropParams {
            scale: self.crop_scale,
            ..CropParams::default()
        }
    }
}
