//! Cross-modal linear probe trained by mini-batch SGD on softmax
//! cross-entropy, with weight decay and cosine learning-rate annealing.
//!
//! Shuffling is ChaCha8 keyed by the run seed with the epoch number as the
//! stream id, so every epoch's permutation is a pure function of
//! `(seed, epoch)` and a rerun reproduces `W` bit for bit.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LinearError;
use crate::lexicon::ConceptId;
use crate::realprompt::{ClassifierWeights, WeightRole};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Image and text embeddings pooled into one training set.
    #[default]
    CrossModal,
    /// Retrieved image embeddings only.
    ImageOnly,
}

impl std::str::FromStr for ProbeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cross_modal" => Ok(Self::CrossModal),
            "image_only" => Ok(Self::ImageOnly),
            o => Err(format!("unknown probe mode {o:?} (expected cross_modal or image_only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: ProbeMode,
    /// Multiplier on `W x` before the softmax (CLIP's fixed temperature).
    pub logit_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            mode: ProbeMode::CrossModal,
            logit_scale: 100.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LinearError> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.logit_scale > 0.0
            && self.learning_rate.is_finite()
            && self.logit_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(LinearError::Config(format!("{self:?}")))
        }
    }

    /// Learning rate at `step` of `total` steps: cosine decay to zero.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.learning_rate;
        }
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Image,
    Text,
}

/// Flat `n x dim` examples with labels as row indices of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    dim: usize,
    xs: Vec<T>,
    labels: Vec<usize>,
    kinds: Vec<ExampleKind>,
}

impl<T: Scalar> TrainingSet<T> {
    /// Builds the pooled example list in the classifier's concept order.
    /// Text examples are dropped in image-only mode. Every class must keep
    /// at least one example.
    pub fn build<'a>(
        concepts: &[ConceptId],
        dim: usize,
        images: impl IntoIterator<Item = (ConceptId, &'a [T])>,
        texts: impl IntoIterator<Item = (ConceptId, &'a [T])>,
        mode: ProbeMode,
    ) -> Result<Self, LinearError> {
        let index: HashMap<ConceptId, usize> = concepts.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut set = TrainingSet {
            dim,
            xs: Vec::new(),
            labels: Vec::new(),
            kinds: Vec::new(),
        };
        let mut push = |c: ConceptId, x: &[T], kind| -> Result<(), LinearError> {
            let &row = index.get(&c).ok_or(LinearError::UnknownConcept(c))?;
            if x.len() != dim {
                return Err(LinearError::DimMismatch {
                    expected: dim,
                    found: x.len(),
                });
            }
            set.xs.extend_from_slice(x);
            set.labels.push(row);
            set.kinds.push(kind);
            Ok(())
        };
        for (c, x) in images {
            push(c, x, ExampleKind::Image)?;
        }
        if mode == ProbeMode::CrossModal {
            for (c, x) in texts {
                push(c, x, ExampleKind::Text)?;
            }
        }
        let mut seen = vec![false; concepts.len()];
        for &l in &set.labels {
            seen[l] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(LinearError::ClassAbsent(concepts[i]));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[T] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn count(&self, kind: ExampleKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

/// Mean softmax cross-entropy of `scale * W x` over `batch`, plus
/// `weight_decay / 2 * |W|^2`. Returns the loss and its gradient w.r.t. `W`
/// (row-major, same layout as `weights`).
pub fn objective<T: Scalar>(
    weights: &[T],
    n_classes: usize,
    set: &TrainingSet<T>,
    batch: &[usize],
    logit_scale: T,
    weight_decay: T,
) -> (T, Vec<T>) {
    let dim = set.dim;
    let mut grad = vec![T::zero(); weights.len()];
    let mut loss = T::zero();
    let mut logits = vec![T::zero(); n_classes];
    let inv_n = T::one() / T::of(batch.len().max(1) as f64);
    for &i in batch {
        let x = set.x(i);
        let y = set.labels[i];
        for (c, l) in logits.iter_mut().enumerate() {
            let row = &weights[c * dim..(c + 1) * dim];
            *l = logit_scale * row.iter().zip(x).fold(T::zero(), |a, (&w, &v)| a + w * v);
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            z = z + *l;
        }
        // logits now hold unnormalized probabilities
        loss = loss - (logits[y] / z).ln() * inv_n;
        for (c, &e) in logits.iter().enumerate() {
            let p = e / z;
            let coef = (p - if c == y { T::one() } else { T::zero() }) * logit_scale * inv_n;
            if coef == T::zero() {
                continue;
            }
            for (g, &v) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *g = *g + coef * v;
            }
        }
    }
    let half = T::of(0.5);
    for (g, &w) in grad.iter_mut().zip(weights) {
        *g = *g + weight_decay * w;
        loss = loss + half * weight_decay * w * w;
    }
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub weights: ClassifierWeights<T>,
    /// Full-set objective before training and after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains `W` starting from `init` (normally the zero-shot classifier).
pub fn train_crossmodal<T: Scalar>(
    set: &TrainingSet<T>,
    init: &ClassifierWeights<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, LinearError> {
    config.validate()?;
    if init.dim() != set.dim() {
        return Err(LinearError::DimMismatch {
            expected: init.dim(),
            found: set.dim(),
        });
    }
    if set.is_empty() {
        return Err(LinearError::EmptyTrainingSet);
    }
    let c = init.n_classes();
    let scale = T::of(config.logit_scale);
    let wd = T::of(config.weight_decay);
    let mut w: Vec<T> = init.as_slice().to_vec();
    let all: Vec<usize> = (0..set.len()).collect();
    let full_loss = |w: &[T]| objective(w, c, set, &all, scale, wd).0.to_f64_lossy();

    let mut epoch_losses = vec![full_loss(&w)];
    let steps_per_epoch = set.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut step = 0usize;
    let mut order = all.clone();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.copy_from_slice(&all);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = objective(&w, c, set, batch, scale, wd);
            if !loss.is_finite() {
                return Err(LinearError::Diverged { step });
            }
            let lr = T::of(config.lr_at(step, total));
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi = *wi - lr * *gi;
            }
            step += 1;
        }
        let l = full_loss(&w);
        if !l.is_finite() {
            return Err(LinearError::Diverged { step });
        }
        epoch_losses.push(l);
    }
    let mut weights = ClassifierWeights::new(WeightRole::Learned, init.concepts().to_vec(), init.dim(), w)
        .expect("shape preserved")
        .with_provenance("init", serde_json::to_value(init.role).unwrap())
        .with_provenance("train_config", serde_json::to_value(config).unwrap())
        .with_provenance("image_examples", set.count(ExampleKind::Image))
        .with_provenance("text_examples", set.count(ExampleKind::Text));
    if config.epochs == 0 {
        weights.provenance.insert("note".into(), "no updates (epochs = 0)".into());
    }
    Ok(TrainOutcome {
        weights,
        epoch_losses,
        steps: step,
    })
}
