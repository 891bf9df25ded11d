//! Concept frequency estimation over image-caption corpora, and zero-shot
//! classifiers that exploit it.
//!
//! The pipeline, module by module:
//!
//! * [`corpus`]: stream and shard JSONL/TSV caption files, normalize text.
//! * [`lexicon`]: concepts, synonym expansion through a provider, and
//!   embedding-based removal of confusable synonyms.
//! * [`matcher`]: one Aho-Corasick automaton over all synonyms; per-caption
//!   concept and synonym counts.
//! * [`judge`]: relevance judging of matches, filtered counts, definition
//!   precision on a validation set.
//! * [`analytics`]: frequency ordering, log bins, head/tail split,
//!   correlation, mean per-class accuracy.
//! * [`embeddings`]: the `CEMB` embedding file format and vector helpers.
//! * [`realprompt`]: most-frequent-synonym prompts and the zero-shot
//!   classifier.
//! * [`reallinear`]: balanced retrieval, cross-modal linear probe, ensemble.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod analytics;
pub mod corpus;
pub mod embeddings;
pub mod http;
pub mod jsonl;
pub mod judge;
pub mod lexicon;
pub mod matcher;
pub mod reallinear;
pub mod realprompt;
pub mod scalar;

pub use scalar::Scalar;

pub type EmbeddingMatrixF32 = embeddings::EmbeddingMatrix<f32>;
pub type EmbeddingMatrixF64 = embeddings::EmbeddingMatrix<f64>;
pub type ClassifierF32 = realprompt::ClassifierWeights<f32>;
pub type ClassifierF64 = realprompt::ClassifierWeights<f64>;
pub type TrainingSetF64 = reallinear::TrainingSet<f64>;
