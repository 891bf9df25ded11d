//! Concepts, their synonym lists, and the embedding-based synonym filter.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_text;
use crate::embeddings::{cosine, EmbeddingError, EmbeddingMatrix};
use crate::http::{JsonEndpoint, ProviderError};
use crate::jsonl::{append_jsonl, read_jsonl, JsonlError};
use crate::scalar::Scalar;

pub type ConceptId = u32;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("concept {concept_id}: synonym provider failed: {source}")]
    Provider {
        concept_id: ConceptId,
        #[source]
        source: ProviderError,
    },
    #[error("duplicate concept id {0}")]
    DuplicateConcept(ConceptId),
    #[error("concept {0} has an empty name")]
    EmptyName(ConceptId),
    #[error("no synonym set for concept {0}")]
    MissingSet(ConceptId),
    #[error("missing text embedding for {0:?}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// A downstream class: its index, task-given name and labeling definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: ConceptId,
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

/// Concepts in task order with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConceptSet {
    concepts: Vec<Concept>,
    by_id: HashMap<ConceptId, usize>,
}

impl ConceptSet {
    pub fn new(concepts: Vec<Concept>) -> Result<Self, LexiconError> {
        let mut by_id = HashMap::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            if c.name.trim().is_empty() {
                return Err(LexiconError::EmptyName(c.concept_id));
            }
            if by_id.insert(c.concept_id, i).is_some() {
                return Err(LexiconError::DuplicateConcept(c.concept_id));
            }
        }
        Ok(ConceptSet { concepts, by_id })
    }

    /// Reads a concepts file: JSONL `{"concept_id", "name", "definition"}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::new(read_jsonl(path)?)
    }

    pub fn get(&self, id: ConceptId) -> Option<&Concept> {
        self.by_id.get(&id).map(|&i| &self.concepts[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Concept> {
        self.concepts.iter()
    }

    pub fn ids(&self) -> Vec<ConceptId> {
        self.concepts.iter().map(|c| c.concept_id).collect()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

impl<'a> IntoIterator for &'a ConceptSet {
    type Item = &'a Concept;
    type IntoIter = std::slice::Iter<'a, Concept>;
    fn into_iter(self) -> Self::IntoIter {
        self.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynonymSource {
    Original,
    Provider,
    Manual,
}

/// Normalized synonym list for one concept; the original name comes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymSet {
    pub concept_id: ConceptId,
    pub synonyms: Vec<String>,
    pub provenance: Vec<SynonymSource>,
}

impl SynonymSet {
    /// A set holding only the normalized original name.
    pub fn original(concept_id: ConceptId, name: &str) -> Self {
        SynonymSet {
            concept_id,
            synonyms: vec![normalize_text(name)],
            provenance: vec![SynonymSource::Original],
        }
    }

    /// Adds a synonym after normalization. Empty and duplicate forms are
    /// ignored; returns whether the set grew.
    pub fn add(&mut self, raw: &str, source: SynonymSource) -> bool {
        let s = normalize_text(raw);
        if s.is_empty() || self.synonyms.contains(&s) {
            return false;
        }
        self.synonyms.push(s);
        self.provenance.push(source);
        true
    }

    pub fn original_name(&self) -> &str {
        &self.synonyms[0]
    }

    pub fn len(&self) -> usize {
        self.synonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty()
    }
}

pub fn load_synonym_sets(path: impl AsRef<Path>) -> Result<Vec<SynonymSet>, LexiconError> {
    Ok(read_jsonl(path)?)
}

/// Anything that can answer "what are some common ways of referring to X".
pub trait SynonymProvider: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> String;
    fn synonyms(&self, name: &str) -> Result<Vec<String>, ProviderError>;
}

impl<P: SynonymProvider + ?Sized> SynonymProvider for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn synonyms(&self, name: &str) -> Result<Vec<String>, ProviderError> {
        (**self).synonyms(name)
    }
}

/// One line of a synonym fixture or cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymEntry {
    pub name: String,
    pub synonyms: Vec<String>,
}

/// Fixture-backed provider reading `{"name", "synonyms"}` lines.
/// Names are matched after normalization; unknown names yield no synonyms.
#[derive(Debug, Clone)]
pub struct FileSynonymProvider {
    path: PathBuf,
    entries: HashMap<String, Vec<String>>,
}

impl FileSynonymProvider {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        for e in read_jsonl::<SynonymEntry>(path)? {
            entries.insert(normalize_text(&e.name), e.synonyms);
        }
        Ok(FileSynonymProvider {
            path: path.to_path_buf(),
            entries,
        })
    }
}

impl SynonymProvider for FileSynonymProvider {
    fn id(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn synonyms(&self, name: &str) -> Result<Vec<String>, ProviderError> {
        Ok(self
            .entries
            .get(&normalize_text(name))
            .cloned()
            .unwrap_or_default())
    }
}

#[derive(Serialize)]
struct SynonymRequest<'a> {
    name: &'a str,
}

#[derive(Deserialize)]
struct SynonymResponse {
    synonyms: Vec<String>,
}

/// `POST {base}/synonyms {"name"} -> {"synonyms": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpSynonymProvider {
    endpoint: JsonEndpoint,
}

impl HttpSynonymProvider {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(HttpSynonymProvider {
            endpoint: JsonEndpoint::new(base_url, "/synonyms", timeout)?,
        })
    }
}

impl SynonymProvider for HttpSynonymProvider {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint.url())
    }

    fn synonyms(&self, name: &str) -> Result<Vec<String>, ProviderError> {
        let r: SynonymResponse = self.endpoint.post(&SynonymRequest { name })?;
        Ok(r.synonyms)
    }
}

/// Replaces characters that are awkward in file names.
pub(crate) fn cache_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Write-through disk cache in front of another provider, keyed by
/// (concept name, provider id). Once a name is cached the inner provider
/// is never consulted again for it.
pub struct CachedSynonymProvider<P> {
    inner: P,
    path: PathBuf,
    entries: Mutex<HashMap<String, Vec<String>>>,
}

impl<P: SynonymProvider> CachedSynonymProvider<P> {
    pub fn new(inner: P, cache_dir: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let dir = cache_dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(format!("synonyms-{}.jsonl", cache_file_stem(&inner.id())));
        let mut entries = HashMap::new();
        if path.exists() {
            for e in read_jsonl::<SynonymEntry>(&path)? {
                entries.insert(e.name, e.synonyms);
            }
        }
        Ok(CachedSynonymProvider {
            inner,
            path,
            entries: Mutex::new(entries),
        })
    }

    pub fn cache_path(&self) -> &Path {
        &self.path
    }
}

impl<P: SynonymProvider> SynonymProvider for CachedSynonymProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn synonyms(&self, name: &str) -> Result<Vec<String>, ProviderError> {
        if let Some(hit) = self.entries.lock().unwrap().get(name) {
            return Ok(hit.clone());
        }
        let fresh = self.inner.synonyms(name)?;
        let mut entries = self.entries.lock().unwrap();
        if let Some(raced) = entries.get(name) {
            return Ok(raced.clone());
        }
        append_jsonl(
            &self.path,
            &SynonymEntry {
                name: name.to_string(),
                synonyms: fresh.clone(),
            },
        )
        .map_err(|e| ProviderError::Other(e.to_string()))?;
        entries.insert(name.to_string(), fresh.clone());
        Ok(fresh)
    }
}

impl fmt::Debug for dyn SynonymProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SynonymProvider({})", self.id())
    }
}

/// Asks `provider` for the concept's synonyms and returns them normalized
/// and deduplicated, original name first.
pub fn expand_synonyms(concept: &Concept, provider: &dyn SynonymProvider) -> Result<SynonymSet, LexiconError> {
    let found = provider
        .synonyms(&concept.name)
        .map_err(|source| LexiconError::Provider {
            concept_id: concept.concept_id,
            source,
        })?;
    let mut set = SynonymSet::original(concept.concept_id, &concept.name);
    if found.is_empty() {
        log::warn!(
            "provider {} returned no synonyms for {:?}; keeping the original name only",
            provider.id(),
            concept.name
        );
    }
    for s in &found {
        set.add(s, SynonymSource::Provider);
    }
    Ok(set)
}

/// Keeps a synonym only if, among all concept names, its text embedding is
/// closest to its own concept's name (ties keep it). Original names always
/// survive; order is preserved.
///
/// `name_embs` is keyed by normalized concept name and `synonym_embs` by
/// normalized synonym.
pub fn filter_synonyms<T: Scalar>(
    sets: &[SynonymSet],
    name_embs: &EmbeddingMatrix<T>,
    synonym_embs: &EmbeddingMatrix<T>,
) -> Result<Vec<SynonymSet>, LexiconError> {
    let names: Vec<&[T]> = sets
        .iter()
        .map(|s| {
            name_embs
                .get(s.original_name())
                .ok_or_else(|| LexiconError::MissingEmbedding(s.original_name().to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(sets.len());
    for (own, set) in sets.iter().enumerate() {
        let mut kept = SynonymSet {
            concept_id: set.concept_id,
            synonyms: Vec::with_capacity(set.len()),
            provenance: Vec::with_capacity(set.len()),
        };
        for (i, (syn, src)) in set.synonyms.iter().zip(&set.provenance).enumerate() {
            let keep = if i == 0 {
                true
            } else {
                let e = synonym_embs
                    .get(syn)
                    .ok_or_else(|| LexiconError::MissingEmbedding(syn.clone()))?;
                let own_sim = cosine(e, names[own])?;
                let mut best_foreign = None::<T>;
                for (j, n) in names.iter().enumerate() {
                    if j != own {
                        let c = cosine(e, n)?;
                        best_foreign = Some(best_foreign.map_or(c, |b| b.max(c)));
                    }
                }
                best_foreign.map_or(true, |b| own_sim >= b)
            };
            if keep {
                kept.synonyms.push(syn.clone());
                kept.provenance.push(*src);
            }
        }
        out.push(kept);
    }
    Ok(out)
}

/// Every distinct synonym across `sets`, in first-seen order. Handy for
/// building the list of strings that need text embeddings.
pub fn distinct_synonyms(sets: &[SynonymSet]) -> Vec<String> {
    let mut seen = HashSet::new();
    sets.iter()
        .flat_map(|s| s.synonyms.iter())
        .filter(|s| seen.insert(s.as_str()))
        .cloned()
        .collect()
}
