//! Terminology-constrained automatic post-editing.
//!
//! The crate covers the whole workflow: triplet corpora and constraint
//! files ([`corpus`]), synthetic data ([`synthgen`]), subword segmentation
//! ([`subword`]), terminology mining ([`termmine`]), constraint-aware input
//! encoding ([`encode`]), the multi-source Transformer ([`mst`]) and
//! Levenshtein Transformer ([`levt`]) post-editors, augmentation and probe
//! sets ([`augment`]), metrics ([`evalsuite`]) and experiment orchestration
//! ([`pipeline`]).

pub mod augment;
pub mod corpus;
pub mod encode;
pub mod error;
pub mod evalsuite;
pub mod levt;
pub mod mst;
pub mod nn;
pub mod pipeline;
pub mod subword;
pub mod synthgen;
pub mod termmine;

pub use corpus::{Constraint, ConstraintSet, Corpus, Sentence, Token, Triplet};
pub use encode::{EncodeMethod, EncodedSource, SourceFactor};
pub use error::{ApeError, ErrorCategory, Result};
pub use evalsuite::EvalReport;
pub use levt::{InitStrategy, LevtConfig, LevtModel};
pub use mst::{MstConfig, MstModel};
pub use nn::{Codec, ModelConfig, TrainConfig};
pub use pipeline::{ApeModel, ModelKind, TrainVariant};
