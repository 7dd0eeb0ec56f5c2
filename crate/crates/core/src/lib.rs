//! Few-shot adaptation of frozen vision-language embeddings.
//!
//! A linear probe is initialized from zero-shot text prototypes and
//! optionally held near them by a class-adaptive anchor penalty.

pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod penalty;
pub mod primitives;
pub mod probe;
pub mod zeroshot;

pub use error::{Error, Result};
pub use primitives::{
    argmax, cross_entropy, dot, l2_normalize, l2_normalize_rows, norm, softmax_scores,
    EmbeddingSet, Matrix, OneHotBatch, PrototypeBank,
};
