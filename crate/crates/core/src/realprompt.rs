//! Frequency-aware prompting: pick each concept's most frequent synonym,
//! expand prompt templates with it, and average the prompt embeddings into
//! a zero-shot classifier.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::CountKind;
use crate::embeddings::{average_normalized, load_embeddings, EmbeddingError, EmbeddingMatrix};
use crate::lexicon::{ConceptId, SynonymSet};
use crate::matcher::SynonymFrequency;
use crate::scalar::{dot, l2_norm, normalize_in_place, Scalar};

pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {0:?} must contain exactly one \"{{}}\" placeholder")]
    BadTemplate(String),
    #[error("template set is empty")]
    NoTemplates,
    #[error("concept {0} has no prompts")]
    NoPrompts(ConceptId),
    #[error("dimension mismatch: classifier has {expected}, input has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("classifier shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("classifier concept order differs")]
    ConceptOrderMismatch,
    #[error("classifier has no rows")]
    Empty,
    #[error("unknown template source {0:?}")]
    UnknownSource(String),
    #[error("weights sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    Plain,
    PhotoOf,
    Openai80,
    Dclip,
    Cupl,
}

impl FromStr for TemplateSource {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, PromptError> {
        Ok(match s {
            "plain" => Self::Plain,
            "photo_of" => Self::PhotoOf,
            "openai80" => Self::Openai80,
            "dclip" => Self::Dclip,
            "cupl" => Self::Cupl,
            o => return Err(PromptError::UnknownSource(o.to_string())),
        })
    }
}

/// The 80 ImageNet prompt templates released with CLIP.
pub const OPENAI_IMAGENET_TEMPLATES: [&str; 80] = [
    "a bad photo of a {}.",
    "a photo of many {}.",
    "a sculpture of a {}.",
    "a photo of the hard to see {}.",
    "a low resolution photo of the {}.",
    "a rendering of a {}.",
    "graffiti of a {}.",
    "a bad photo of the {}.",
    "a cropped photo of the {}.",
    "a tattoo of a {}.",
    "the embroidered {}.",
    "a photo of a hard to see {}.",
    "a bright photo of a {}.",
    "a photo of a clean {}.",
    "a photo of a dirty {}.",
    "a dark photo of the {}.",
    "a drawing of a {}.",
    "a photo of my {}.",
    "the plastic {}.",
    "a photo of the cool {}.",
    "a close-up photo of a {}.",
    "a black and white photo of the {}.",
    "a painting of the {}.",
    "a painting of a {}.",
    "a pixelated photo of the {}.",
    "a sculpture of the {}.",
    "a bright photo of the {}.",
    "a cropped photo of a {}.",
    "a plastic {}.",
    "a photo of the dirty {}.",
    "a jpeg corrupted photo of a {}.",
    "a blurry photo of the {}.",
    "a photo of the {}.",
    "a good photo of the {}.",
    "a rendering of the {}.",
    "a {} in a video game.",
    "a photo of one {}.",
    "a doodle of a {}.",
    "a close-up photo of the {}.",
    "a photo of a {}.",
    "the origami {}.",
    "the {} in a video game.",
    "a sketch of a {}.",
    "a doodle of the {}.",
    "a origami {}.",
    "a low resolution photo of a {}.",
    "the toy {}.",
    "a rendition of the {}.",
    "a photo of the clean {}.",
    "a photo of a large {}.",
    "a rendition of a {}.",
    "a photo of a nice {}.",
    "a photo of a weird {}.",
    "a blurry photo of a {}.",
    "a cartoon {}.",
    "art of a {}.",
    "a sketch of the {}.",
    "a embroidered {}.",
    "a pixelated photo of a {}.",
    "itap of the {}.",
    "a jpeg corrupted photo of the {}.",
    "a good photo of a {}.",
    "a plushie {}.",
    "a photo of the nice {}.",
    "a photo of the small {}.",
    "a photo of the weird {}.",
    "the cartoon {}.",
    "art of the {}.",
    "a drawing of the {}.",
    "a photo of the large {}.",
    "a black and white photo of a {}.",
    "the plushie {}.",
    "a dark photo of a {}.",
    "itap of a {}.",
    "graffiti of the {}.",
    "a toy {}.",
    "itap of my {}.",
    "a photo of a cool {}.",
    "a photo of a small {}.",
    "a tattoo of the {}.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplateSet {
    templates: Vec<String>,
    source: TemplateSource,
}

impl PromptTemplateSet {
    pub fn new(templates: Vec<String>, source: TemplateSource) -> Result<Self, PromptError> {
        for t in &templates {
            if t.matches(PLACEHOLDER).count() != 1 {
                return Err(PromptError::BadTemplate(t.clone()));
            }
        }
        Ok(PromptTemplateSet { templates, source })
    }

    /// `"{}"`: the bare concept name.
    pub fn plain() -> Self {
        Self::new(vec![PLACEHOLDER.into()], TemplateSource::Plain).unwrap()
    }

    pub fn photo_of() -> Self {
        Self::new(vec!["a photo of {}".into()], TemplateSource::PhotoOf).unwrap()
    }

    pub fn openai80() -> Self {
        Self::new(
            OPENAI_IMAGENET_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            TemplateSource::Openai80,
        )
        .unwrap()
    }

    pub fn builtin(source: TemplateSource) -> Option<Self> {
        match source {
            TemplateSource::Plain => Some(Self::plain()),
            TemplateSource::PhotoOf => Some(Self::photo_of()),
            TemplateSource::Openai80 => Some(Self::openai80()),
            TemplateSource::Dclip | TemplateSource::Cupl => None,
        }
    }

    /// Plain text, one template per non-blank line.
    pub fn load(path: impl AsRef<Path>, source: TemplateSource) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let templates: Vec<String> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect();
        if templates.is_empty() {
            return Err(PromptError::NoTemplates);
        }
        Self::new(templates, source)
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn source(&self) -> TemplateSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// One string per template with the placeholder replaced by `synonym`.
pub fn build_prompts(synonym: &str, templates: &PromptTemplateSet) -> Vec<String> {
    templates
        .templates
        .iter()
        .map(|t| t.replacen(PLACEHOLDER, synonym, 1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymChoice {
    pub concept_id: ConceptId,
    pub original: String,
    pub chosen: String,
    pub count: u64,
    /// True when every synonym had zero count and the original was kept.
    pub fallback: bool,
}

/// The synonym with the highest count; ties keep the earlier list entry,
/// so the original name wins unless strictly outnumbered.
pub fn most_frequent_synonym(set: &SynonymSet, freq: &SynonymFrequency, kind: CountKind) -> SynonymChoice {
    let count = |s: &str| {
        let c = freq.get(set.concept_id, s);
        match kind {
            CountKind::Raw => c.raw,
            CountKind::Filtered => c.filtered,
        }
    };
    let mut best = 0usize;
    let mut best_n = count(&set.synonyms[0]);
    for (i, s) in set.synonyms.iter().enumerate().skip(1) {
        let n = count(s);
        if n > best_n {
            best = i;
            best_n = n;
        }
    }
    let fallback = best_n == 0;
    if fallback {
        log::warn!(
            "no synonym of concept {} ({:?}) was found in the corpus; keeping the original name",
            set.concept_id,
            set.original_name()
        );
    }
    SynonymChoice {
        concept_id: set.concept_id,
        original: set.original_name().to_string(),
        chosen: set.synonyms[best].clone(),
        count: best_n,
        fallback,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ChoiceRow {
    concept_id: ConceptId,
    original: String,
    chosen: String,
    count: u64,
}

/// CSV `concept_id,original,chosen,count`.
pub fn write_choices_csv(path: impl AsRef<Path>, choices: &[SynonymChoice]) -> Result<(), PromptError> {
    let path = path.as_ref();
    let io = |e: csv::Error| PromptError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for c in choices {
        w.serialize(ChoiceRow {
            concept_id: c.concept_id,
            original: c.original.clone(),
            chosen: c.chosen.clone(),
            count: c.count,
        })
        .map_err(io)?;
    }
    w.flush().map_err(|source| PromptError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightRole {
    #[serde(rename = "W_zs")]
    ZeroShot,
    #[serde(rename = "W")]
    Learned,
    #[serde(rename = "W_ensemble")]
    Ensemble,
}

/// A `C x d` linear classifier with rows in concept order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights<T> {
    pub role: WeightRole,
    concepts: Vec<ConceptId>,
    dim: usize,
    data: Vec<T>,
    pub provenance: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    role: WeightRole,
    concepts: Vec<ConceptId>,
    dim: usize,
    #[serde(default)]
    provenance: BTreeMap<String, serde_json::Value>,
}

impl<T: Scalar> ClassifierWeights<T> {
    pub fn new(role: WeightRole, concepts: Vec<ConceptId>, dim: usize, data: Vec<T>) -> Result<Self, PromptError> {
        if data.len() != concepts.len() * dim {
            return Err(PromptError::ShapeMismatch {
                left: (concepts.len(), dim),
                right: (data.len() / dim.max(1), dim),
            });
        }
        Ok(ClassifierWeights {
            role,
            concepts,
            dim,
            data,
            provenance: BTreeMap::new(),
        })
    }

    pub fn zeros(role: WeightRole, concepts: Vec<ConceptId>, dim: usize) -> Self {
        let n = concepts.len() * dim;
        Self::new(role, concepts, dim, vec![T::zero(); n]).unwrap()
    }

    pub fn concepts(&self) -> &[ConceptId] {
        &self.concepts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.concepts.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row_index(&self) -> HashMap<ConceptId, usize> {
        self.concepts.iter().enumerate().map(|(i, &c)| (c, i)).collect()
    }

    pub fn with_provenance(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.provenance.insert(key.to_string(), value.into());
        self
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>, PromptError> {
        if x.len() != self.dim {
            return Err(PromptError::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok((0..self.n_classes()).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierWeights<U> {
        ClassifierWeights {
            role: self.role,
            concepts: self.concepts.clone(),
            dim: self.dim,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Whether every row has unit norm within the embedding tolerance.
    pub fn rows_normalized(&self) -> bool {
        (0..self.n_classes()).all(|i| (l2_norm(self.row(i)).to_f64_lossy() - 1.0).abs() <= crate::embeddings::NORM_TOLERANCE)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the matrix as a `CEMB` file keyed by concept id and the role,
    /// concept order and provenance to `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PromptError> {
        let path = path.as_ref();
        let normalized = self.role == WeightRole::ZeroShot && self.rows_normalized();
        let rows = self
            .concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), self.row(i).to_vec()));
        EmbeddingMatrix::from_rows(self.dim, rows, normalized)?.save(path)?;
        let side = Sidecar {
            role: self.role,
            concepts: self.concepts.clone(),
            dim: self.dim,
            provenance: self.provenance.clone(),
        };
        let sp = Self::sidecar_path(path);
        let body = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        std::fs::write(&sp, body + "\n").map_err(|source| PromptError::Io { path: sp, source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let sp = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|source| PromptError::Io {
            path: sp.clone(),
            source,
        })?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| PromptError::Sidecar {
            path: sp.clone(),
            message: e.to_string(),
        })?;
        let m: EmbeddingMatrix<T> = load_embeddings(path)?;
        if m.dim() != side.dim {
            return Err(PromptError::DimMismatch {
                expected: side.dim,
                found: m.dim(),
            });
        }
        let mut data = Vec::with_capacity(side.concepts.len() * side.dim);
        for c in &side.concepts {
            data.extend_from_slice(m.require(&c.to_string())?);
        }
        let mut w = Self::new(side.role, side.concepts, side.dim, data)?;
        w.provenance = side.provenance;
        Ok(w)
    }
}

/// Prompt strings of one concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPrompts {
    pub concept_id: ConceptId,
    pub prompts: Vec<String>,
}

/// Zero-shot classifier: row `c` is the normalized mean of concept `c`'s
/// individually normalized prompt embeddings.
pub fn build_zeroshot<T: Scalar>(
    prompts: &[ConceptPrompts],
    prompt_embs: &EmbeddingMatrix<T>,
) -> Result<ClassifierWeights<T>, PromptError> {
    if prompts.is_empty() {
        return Err(PromptError::Empty);
    }
    let dim = prompt_embs.dim();
    let mut data = Vec::with_capacity(prompts.len() * dim);
    for cp in prompts {
        if cp.prompts.is_empty() {
            return Err(PromptError::NoPrompts(cp.concept_id));
        }
        let rows: Vec<Vec<T>> = cp
            .prompts
            .iter()
            .map(|p| {
                let mut v = prompt_embs.require(p)?.to_vec();
                if !normalize_in_place(&mut v) {
                    return Err(EmbeddingError::ZeroVector);
                }
                Ok(v)
            })
            .collect::<Result<_, EmbeddingError>>()?;
        data.extend(average_normalized(&rows)?);
    }
    ClassifierWeights::new(
        WeightRole::ZeroShot,
        prompts.iter().map(|p| p.concept_id).collect(),
        dim,
        data,
    )
}

/// Predicted concept and all logits; ties go to the smallest concept id.
pub fn classify<T: Scalar>(weights: &ClassifierWeights<T>, image_emb: &[T]) -> Result<(ConceptId, Vec<T>), PromptError> {
    let logits = weights.logits(image_emb)?;
    let mut best: Option<usize> = None;
    for (i, &l) in logits.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let lb = logits[b];
                if l > lb || (l == lb && weights.concepts[i] < weights.concepts[b]) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    let b = best.ok_or(PromptError::Empty)?;
    Ok((weights.concepts[b], logits))
}
