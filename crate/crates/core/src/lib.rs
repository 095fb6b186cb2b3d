//! Multimodal misinformation detection with multi-perspective rationales.
//!
//! A chat model writes one rationale per analysis perspective. Rationale
//! sentences are scored for factuality against a retrieval corpus and for
//! relevance to the article, the weak ones are dropped, and the survivors are
//! fused with the article and image features into a trainable detector.

pub mod detector;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod pipeline;
pub mod providers;
pub mod refinement;
pub mod retrieval;
pub mod synthetic;

pub use domain::{Dataset, EmbeddingVec, Label, NewsInstance, Perspective, Rationale, Sentence};
pub use error::{Error, Result};
