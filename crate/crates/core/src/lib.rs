//! Set-to-set visual-textual matching on precomputed embeddings.
//!
//! Images are represented by a compact set of view embeddings and classes by
//! sets of prompt embeddings. The crate provides:
//!
//! * [`tgssg`]: synonym filtering by ambiguity entropy gated on H0
//!   persistence ([`tda`]), and prompt set assembly;
//! * [`cadrs`]: attention-scored crop selection with a two-sigma rule;
//! * [`otmatch`]: classification by entropic optimal transport;
//! * [`ttamatch`]: classification with a single step of entropy-minimizing
//!   test-time adaptation;
//! * [`harness`]: dataset loading, benchmarking, repeats and ablations.
//!
//! Embeddings and attention maps are exchanged through the binary formats in
//! [`format`] and a JSON [`manifest`].

pub mod cadrs;
pub mod config;
pub mod embed;
pub mod error;
pub mod format;
pub mod harness;
pub mod manifest;
pub mod otmatch;
pub mod synth;
pub mod tda;
pub mod tgssg;
pub mod ttamatch;

pub use cadrs::{AttentionMap, CropParams, CropSpec, ViewSet};
pub use config::{MatchConfig, Matcher, SynonymFilterMode, ViewFilter};
pub use embed::{EmbeddingSet, EmbeddingVector, Matrix, SimilarityMatrix};
pub use error::{Error, Result};
pub use harness::{run_ablation, run_benchmark, run_repeats, AblationAxis, EvalReport};
pub use manifest::Manifest;
pub use otmatch::{ClassScores, TransportPlan, TransportProblem};
pub use tda::{DistanceMatrix, PersistenceDiagram};
pub use tgssg::ClassTextualSet;
pub use ttamatch::ShiftState;
