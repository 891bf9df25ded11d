//! Relevance judging of matched captions.
//!
//! A string match says a caption *mentions* a synonym; a judge decides
//! whether that mention refers to the concept's definition ("tiger shark"
//! is not a tiger). Irrelevant hits are dropped from the filtered counts.
//! Judges that keep failing leave the pair undecided; undecided pairs are
//! excluded from filtered counts and reported separately.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::FrequencyTable;
use crate::corpus::normalize_text;
use crate::http::{JsonEndpoint, ProviderError};
use crate::jsonl::{append_jsonl, read_jsonl, JsonlError};
use crate::lexicon::{cache_file_stem, Concept, ConceptId, ConceptSet};
use crate::matcher::{MatchHit, SynonymFrequency};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("hit references unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("concept {0} has no definition to judge against")]
    MissingDefinition(ConceptId),
    #[error("no caption text for caption {0}")]
    MissingCaption(u64),
    #[error("no verdict for caption {caption_id} / concept {concept_id}")]
    MissingVerdict { caption_id: u64, concept_id: ConceptId },
    #[error("validation set repeats caption {caption_id} / concept {concept_id}")]
    DuplicateValidationPair { caption_id: u64, concept_id: ConceptId },
    #[error("precision undefined for concept {0}: the judge accepted none of its validation pairs")]
    UndefinedPrecision(ConceptId),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// The three-part question put to a judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JudgeQuery<'a> {
    pub concept: &'a str,
    pub definition: &'a str,
    pub caption: &'a str,
}

impl JudgeQuery<'_> {
    /// The natural-language form of the question, for LLM-backed judges.
    pub fn prompt(&self) -> String {
        format!(
            "Does {} in the {} refer to {}?",
            self.concept, self.caption, self.definition
        )
    }
}

pub trait JudgeProvider: Send + Sync {
    fn id(&self) -> String;
    fn judge(&self, query: &JudgeQuery<'_>) -> Result<bool, ProviderError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlocklistEntry {
    pub name: String,
    pub reject_phrases: Vec<String>,
}

/// Deterministic offline judge: rejects a hit iff the normalized caption
/// contains one of the concept's blocklisted phrases; accepts otherwise.
#[derive(Debug, Clone, Default)]
pub struct RuleStubJudge {
    label: String,
    blocklist: HashMap<String, Vec<String>>,
}

impl RuleStubJudge {
    pub fn new(label: impl Into<String>, entries: impl IntoIterator<Item = BlocklistEntry>) -> Self {
        let mut blocklist: HashMap<String, Vec<String>> = HashMap::new();
        for e in entries {
            let phrases = blocklist.entry(normalize_text(&e.name)).or_default();
            phrases.extend(
                e.reject_phrases
                    .iter()
                    .map(|p| normalize_text(p))
                    .filter(|p| !p.is_empty()),
            );
        }
        RuleStubJudge {
            label: label.into(),
            blocklist,
        }
    }

    /// Blocklist file: JSONL `{"name", "reject_phrases": [...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, JudgeError> {
        let path = path.as_ref();
        let entries: Vec<BlocklistEntry> = read_jsonl(path)?;
        Ok(Self::new(format!("stub:{}", path.display()), entries))
    }
}

impl JudgeProvider for RuleStubJudge {
    fn id(&self) -> String {
        if self.label.is_empty() {
            "stub".into()
        } else {
            self.label.clone()
        }
    }

    fn judge(&self, q: &JudgeQuery<'_>) -> Result<bool, ProviderError> {
        let Some(phrases) = self.blocklist.get(&normalize_text(q.concept)) else {
            return Ok(true);
        };
        let caption = normalize_text(q.caption);
        Ok(!phrases.iter().any(|p| caption.contains(p.as_str())))
    }
}

#[derive(Deserialize)]
struct JudgeResponse {
    relevant: bool,
}

/// `POST {base}/judge {"concept", "definition", "caption"} -> {"relevant"}`.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    endpoint: JsonEndpoint,
}

impl HttpJudge {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(HttpJudge {
            endpoint: JsonEndpoint::new(base_url, "/judge", timeout)?,
        })
    }
}

impl JudgeProvider for HttpJudge {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint.url())
    }

    fn judge(&self, q: &JudgeQuery<'_>) -> Result<bool, ProviderError> {
        let r: JudgeResponse = self.endpoint.post(q)?;
        Ok(r.relevant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Doubles after every failed attempt.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

/// One judgement of a (caption, concept) pair. `relevant == None` means the
/// judge could not be reached within the retry budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub caption_id: u64,
    pub concept_id: ConceptId,
    pub relevant: Option<bool>,
    pub judge_id: String,
}

impl JudgeVerdict {
    pub fn is_undecided(&self) -> bool {
        self.relevant.is_none()
    }
}

pub fn text_hash(s: &str) -> String {
    let d = Sha256::digest(s.as_bytes());
    hex::encode(&d[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
struct CacheKey {
    judge_id: String,
    concept_id: ConceptId,
    caption_hash: String,
    definition_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    #[serde(flatten)]
    key: CacheKey,
    relevant: bool,
}

/// Append-only JSONL cache of decided verdicts. Undecided outcomes are
/// never cached so that a rerun retries them.
#[derive(Debug)]
pub struct VerdictCache {
    path: PathBuf,
    entries: Mutex<HashMap<CacheKey, bool>>,
}

impl VerdictCache {
    pub fn open(cache_dir: impl AsRef<Path>, judge_id: &str) -> Result<Self, JudgeError> {
        let dir = cache_dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(format!("verdicts-{}.jsonl", cache_file_stem(judge_id)));
        let mut entries = HashMap::new();
        if path.exists() {
            for line in read_jsonl::<CacheLine>(&path)? {
                entries.insert(line.key, line.relevant);
            }
        }
        Ok(VerdictCache {
            path,
            entries: Mutex::new(entries),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(judge_id: &str, concept_id: ConceptId, q: &JudgeQuery<'_>) -> CacheKey {
        CacheKey {
            judge_id: judge_id.to_string(),
            concept_id,
            caption_hash: text_hash(q.caption),
            definition_hash: text_hash(q.definition),
        }
    }

    fn get(&self, key: &CacheKey) -> Option<bool> {
        self.entries.lock().unwrap().get(key).copied()
    }

    fn put(&self, key: CacheKey, relevant: bool) -> Result<(), JudgeError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        append_jsonl(
            &self.path,
            &CacheLine {
                key: key.clone(),
                relevant,
            },
        )?;
        entries.insert(key, relevant);
        Ok(())
    }
}

/// Shared judging machinery: provider, optional cache, retry budget.
pub struct Judging<'a> {
    pub provider: &'a dyn JudgeProvider,
    pub cache: Option<&'a VerdictCache>,
    pub retry: RetryPolicy,
}

impl<'a> Judging<'a> {
    pub fn new(provider: &'a dyn JudgeProvider) -> Self {
        Judging {
            provider,
            cache: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_cache(mut self, cache: &'a VerdictCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// `Ok(None)` when the retry budget is exhausted.
    pub fn decide(&self, concept_id: ConceptId, q: &JudgeQuery<'_>) -> Result<Option<bool>, JudgeError> {
        let judge_id = self.provider.id();
        let key = self.cache.map(|_| VerdictCache::key(&judge_id, concept_id, q));
        if let (Some(cache), Some(key)) = (self.cache, key.as_ref()) {
            if let Some(v) = cache.get(key) {
                return Ok(Some(v));
            }
        }
        let mut backoff = self.retry.initial_backoff;
        for attempt in 1..=self.retry.max_attempts.max(1) {
            match self.provider.judge(q) {
                Ok(v) => {
                    if let (Some(cache), Some(key)) = (self.cache, key) {
                        cache.put(key, v)?;
                    }
                    return Ok(Some(v));
                }
                Err(e) => {
                    log::warn!(
                        "judge {judge_id} failed on concept {concept_id} (attempt {attempt}/{}): {e}",
                        self.retry.max_attempts
                    );
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Ok(None)
    }
}

fn definition_of(concepts: &ConceptSet, id: ConceptId) -> Result<&Concept, JudgeError> {
    let c = concepts.get(id).ok_or(JudgeError::UnknownConcept(id))?;
    if c.definition.trim().is_empty() {
        return Err(JudgeError::MissingDefinition(id));
    }
    Ok(c)
}

/// Judges every distinct (caption, concept) pair among `hits`, in order of
/// first appearance, using up to `threads` concurrent requests.
pub fn judge_hits(
    hits: &[MatchHit],
    concepts: &ConceptSet,
    captions: &HashMap<u64, String>,
    judging: &Judging<'_>,
    threads: usize,
) -> Result<Vec<JudgeVerdict>, JudgeError> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for h in hits {
        if seen.insert((h.caption_id, h.concept_id)) {
            definition_of(concepts, h.concept_id)?;
            if !captions.contains_key(&h.caption_id) {
                return Err(JudgeError::MissingCaption(h.caption_id));
            }
            pairs.push((h.caption_id, h.concept_id));
        }
    }
    let judge_id = judging.provider.id();
    let run = |chunk: &[(u64, ConceptId)]| -> Result<Vec<JudgeVerdict>, JudgeError> {
        chunk
            .iter()
            .map(|&(caption_id, concept_id)| {
                let c = definition_of(concepts, concept_id)?;
                let q = JudgeQuery {
                    concept: &c.name,
                    definition: &c.definition,
                    caption: &captions[&caption_id],
                };
                Ok(JudgeVerdict {
                    caption_id,
                    concept_id,
                    relevant: judging.decide(concept_id, &q)?,
                    judge_id: judge_id.clone(),
                })
            })
            .collect()
    };
    let threads = threads.max(1);
    if threads == 1 || pairs.len() < 2 {
        return run(&pairs);
    }
    let chunk = pairs.len().div_ceil(threads);
    let parts: Vec<Result<Vec<JudgeVerdict>, JudgeError>> = std::thread::scope(|s| {
        let handles: Vec<_> = pairs.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("judge worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(pairs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Concept and synonym counts after judging, plus the undecided pairs that
/// were left out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilteredTallies {
    pub concepts: FrequencyTable,
    pub synonyms: SynonymFrequency,
    pub undecided: u64,
}

/// Recounts hits keeping only captions judged relevant. Raw counts include
/// every hit; filtered counts include only relevant ones.
pub fn filtered_frequency(
    hits: &[MatchHit],
    verdicts: &[JudgeVerdict],
    concept_ids: &[ConceptId],
) -> Result<FilteredTallies, JudgeError> {
    let by_pair: HashMap<(u64, ConceptId), Option<bool>> = verdicts
        .iter()
        .map(|v| ((v.caption_id, v.concept_id), v.relevant))
        .collect();
    let mut out = FilteredTallies {
        concepts: FrequencyTable::zeros("", concept_ids.iter().copied()),
        ..Default::default()
    };
    let mut counted: HashSet<(u64, ConceptId)> = HashSet::new();
    let mut undecided: HashSet<(u64, ConceptId)> = HashSet::new();
    for h in hits {
        let pair = (h.caption_id, h.concept_id);
        let verdict = by_pair.get(&pair).ok_or(JudgeError::MissingVerdict {
            caption_id: h.caption_id,
            concept_id: h.concept_id,
        })?;
        let relevant = verdict.unwrap_or(false);
        if verdict.is_none() {
            undecided.insert(pair);
        }
        if counted.insert(pair) {
            let c = out.concepts.entry(h.concept_id);
            c.raw += 1;
            if relevant {
                c.filtered += 1;
            }
        }
        let s = out.synonyms.entry(h.concept_id, &h.synonym);
        s.raw += 1;
        if relevant {
            s.filtered += 1;
        }
    }
    out.undecided = undecided.len() as u64;
    Ok(out)
}

/// Hits whose pair was judged relevant. Pairs without a verdict are dropped.
pub fn relevant_hits<'h>(hits: &'h [MatchHit], verdicts: &[JudgeVerdict]) -> Vec<&'h MatchHit> {
    let ok: HashSet<(u64, ConceptId)> = verdicts
        .iter()
        .filter(|v| v.relevant == Some(true))
        .map(|v| (v.caption_id, v.concept_id))
        .collect();
    hits.iter()
        .filter(|h| ok.contains(&(h.caption_id, h.concept_id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationPair {
    pub caption_id: u64,
    pub concept_id: ConceptId,
    pub gold_relevant: bool,
}

/// Hand-labelled (caption, concept) pairs used to tune definitions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationSet {
    pairs: Vec<ValidationPair>,
}

impl ValidationSet {
    pub fn new(pairs: Vec<ValidationPair>) -> Result<Self, JudgeError> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert((p.caption_id, p.concept_id)) {
                return Err(JudgeError::DuplicateValidationPair {
                    caption_id: p.caption_id,
                    concept_id: p.concept_id,
                });
            }
        }
        Ok(ValidationSet { pairs })
    }

    /// JSONL `{"caption_id", "concept_id", "gold_relevant"}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, JudgeError> {
        Self::new(read_jsonl(path)?)
    }

    pub fn pairs(&self) -> &[ValidationPair] {
        &self.pairs
    }

    pub fn for_concept(&self, id: ConceptId) -> impl Iterator<Item = &ValidationPair> {
        self.pairs.iter().filter(move |p| p.concept_id == id)
    }

    /// Pair counts per concept, for checking against a per-concept target.
    pub fn sizes(&self) -> BTreeMap<ConceptId, usize> {
        let mut m = BTreeMap::new();
        for p in &self.pairs {
            *m.entry(p.concept_id).or_insert(0) += 1;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    pub value: f64,
    pub judged_relevant: usize,
    pub true_positives: usize,
    pub undecided: usize,
}

/// Retrieval precision of a candidate definition: among the concept's
/// validation pairs the judge accepts, the fraction that are gold-relevant.
pub fn definition_precision(
    concept: &Concept,
    candidate_definition: &str,
    validation: &ValidationSet,
    captions: &HashMap<u64, String>,
    judging: &Judging<'_>,
) -> Result<Precision, JudgeError> {
    let (mut judged, mut tp, mut undecided) = (0, 0, 0);
    for p in validation.for_concept(concept.concept_id) {
        let caption = captions
            .get(&p.caption_id)
            .ok_or(JudgeError::MissingCaption(p.caption_id))?;
        let q = JudgeQuery {
            concept: &concept.name,
            definition: candidate_definition,
            caption,
        };
        match judging.decide(concept.concept_id, &q)? {
            Some(true) => {
                judged += 1;
                if p.gold_relevant {
                    tp += 1;
                }
            }
            Some(false) => {}
            None => undecided += 1,
        }
    }
    if judged == 0 {
        return Err(JudgeError::UndefinedPrecision(concept.concept_id));
    }
    Ok(Precision {
        value: tp as f64 / judged as f64,
        judged_relevant: judged,
        true_positives: tp,
        undecided,
    })
}
