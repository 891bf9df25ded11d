//! Retrieval-augmented linear probing: balanced retrieval of matched
//! captions, a cross-modal linear classifier trained on their image
//! embeddings plus text embeddings, and the sum ensemble with the
//! zero-shot classifier.

mod retrieval;
mod train;

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

pub use retrieval::{
    candidate_pools, query_vectors, retrieve_balanced, RetrievalQuery, RetrievalSet, Retrieved, Shortfall, DEFAULT_K,
    SWEEP_K,
};
pub use train::{objective, train_crossmodal, ExampleKind, ProbeMode, TrainConfig, TrainOutcome, TrainingSet};

use crate::analytics::{mean_per_class_accuracy, AccuracyTable, AnalyticsError};
use crate::embeddings::{EmbeddingError, EmbeddingMatrix};
use crate::jsonl::JsonlError;
use crate::lexicon::ConceptId;
use crate::realprompt::{classify, ClassifierWeights, PromptError, WeightRole};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("missing embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("no retrieval query for concept {0}")]
    MissingQuery(ConceptId),
    #[error("concept {0} is not a classifier row")]
    UnknownConcept(ConceptId),
    #[error("class {0} has no training examples")]
    ClassAbsent(ConceptId),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("classifiers differ in shape or concept order")]
    EnsembleMismatch,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// `W + W_zs`, elementwise, without renormalizing rows.
pub fn ensemble<T: Scalar>(learned: &ClassifierWeights<T>, zero_shot: &ClassifierWeights<T>) -> Result<ClassifierWeights<T>, LinearError> {
    if learned.dim() != zero_shot.dim() || learned.concepts() != zero_shot.concepts() {
        return Err(LinearError::EnsembleMismatch);
    }
    let data = learned
        .as_slice()
        .iter()
        .zip(zero_shot.as_slice())
        .map(|(&a, &b)| a + b)
        .collect();
    Ok(
        ClassifierWeights::new(WeightRole::Ensemble, learned.concepts().to_vec(), learned.dim(), data)?
            .with_provenance("parents", serde_json::json!([learned.role, zero_shot.role]))
            .with_provenance("learned", serde_json::Value::Object(learned.provenance.clone().into_iter().collect()))
            .with_provenance("zero_shot", serde_json::Value::Object(zero_shot.provenance.clone().into_iter().collect())),
    )
}

/// Classifies every labelled test vector and reports mean per-class accuracy.
/// `labels` pairs embedding keys with gold concepts.
pub fn evaluate<T: Scalar>(
    weights: &ClassifierWeights<T>,
    test: &EmbeddingMatrix<T>,
    labels: &[(String, ConceptId)],
) -> Result<(f64, AccuracyTable), LinearError> {
    if test.dim() != weights.dim() {
        return Err(LinearError::DimMismatch {
            expected: weights.dim(),
            found: test.dim(),
        });
    }
    let known: HashMap<ConceptId, usize> = weights.row_index();
    let predictions: Vec<(ConceptId, ConceptId)> = labels
        .par_iter()
        .map(|(key, gold)| {
            if !known.contains_key(gold) {
                return Err(LinearError::UnknownConcept(*gold));
            }
            let x = test
                .get(key)
                .ok_or_else(|| LinearError::MissingEmbedding(key.clone()))?;
            Ok((*gold, classify(weights, x)?.0))
        })
        .collect::<Result<_, LinearError>>()?;
    let (mean, mut table) = mean_per_class_accuracy(&predictions, None)?;
    table.model_id = format!("{:?}", weights.role);
    Ok((mean, table))
}
