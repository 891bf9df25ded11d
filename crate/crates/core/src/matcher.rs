//! Multi-pattern synonym matching over normalized captions.
//!
//! All synonyms of all concepts are compiled into one Aho-Corasick automaton
//! and every caption is scanned once. Captions and patterns are both in
//! [`normalize_text`](crate::corpus::normalize_text) form, so in whole-word
//! mode a match is valid iff it is bounded by the string ends or a space.
//! Partial mode drops the boundary check and accepts any substring.
//!
//! Counting is per caption: a caption adds at most 1 to a concept's count
//! and at most 1 to each synonym's count, however often the text repeats it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{ConceptCount, FrequencyTable};
use crate::corpus::{open_corpus, shard_corpus, CaptionRecord, CorpusError, CorpusFormat, SkippedRecord};
use crate::lexicon::{ConceptId, SynonymSet};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("no synonyms to compile")]
    EmptyPatterns,
    #[error("failed to build automaton: {0}")]
    Build(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("concept {0} has more than one synonym set")]
    DuplicateConcept(ConceptId),
    #[error("unknown match mode {0:?} (expected whole_word or partial)")]
    UnknownMode(String),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    WholeWord,
    Partial,
}

impl FromStr for MatchMode {
    type Err = MatchError;
    fn from_str(s: &str) -> Result<Self, MatchError> {
        match s {
            "whole_word" => Ok(MatchMode::WholeWord),
            "partial" => Ok(MatchMode::Partial),
            o => Err(MatchError::UnknownMode(o.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub synonym: String,
    pub concept_id: ConceptId,
}

/// Immutable compiled index over every (synonym, concept) pair.
#[derive(Debug, Clone)]
pub struct PatternAutomaton {
    patterns: Vec<Pattern>,
    /// distinct synonym strings, indexed like the automaton's pattern ids
    owners: Vec<Vec<usize>>,
    automaton: AhoCorasick,
    mode: MatchMode,
    concepts: Vec<ConceptId>,
}

impl PatternAutomaton {
    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    /// Concept ids of the compiled sets, in input order.
    pub fn concept_ids(&self) -> &[ConceptId] {
        &self.concepts
    }
}

/// Compiles synonym sets into one automaton. A string shared by several
/// concepts is indexed once and reported for each owner.
pub fn compile(sets: &[SynonymSet], mode: MatchMode) -> Result<PatternAutomaton, MatchError> {
    let mut patterns = Vec::new();
    let mut distinct: Vec<String> = Vec::new();
    let mut owners: Vec<Vec<usize>> = Vec::new();
    let mut by_text: HashMap<String, usize> = HashMap::new();
    let mut seen = std::collections::HashSet::new();
    for set in sets {
        // per-caption counting relies on each concept's patterns being contiguous
        if !seen.insert(set.concept_id) {
            return Err(MatchError::DuplicateConcept(set.concept_id));
        }
        for syn in &set.synonyms {
            if syn.is_empty() {
                continue;
            }
            let pid = patterns.len();
            patterns.push(Pattern {
                synonym: syn.clone(),
                concept_id: set.concept_id,
            });
            let slot = *by_text.entry(syn.clone()).or_insert_with(|| {
                distinct.push(syn.clone());
                owners.push(Vec::new());
                distinct.len() - 1
            });
            owners[slot].push(pid);
        }
    }
    if patterns.is_empty() {
        return Err(MatchError::EmptyPatterns);
    }
    let automaton = AhoCorasick::builder()
        .match_kind(MatchKind::Standard)
        .build(&distinct)
        .map_err(|e| MatchError::Build(e.to_string()))?;
    Ok(PatternAutomaton {
        patterns,
        owners,
        automaton,
        mode,
        concepts: sets.iter().map(|s| s.concept_id).collect(),
    })
}

/// One (caption, concept, synonym) match with the span of its first
/// occurrence in the normalized caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchHit {
    pub caption_id: u64,
    pub concept_id: ConceptId,
    pub synonym: String,
    pub start: usize,
    pub end: usize,
}

#[inline]
fn on_boundaries(text: &[u8], start: usize, end: usize) -> bool {
    (start == 0 || text[start - 1] == b' ') && (end == text.len() || text[end] == b' ')
}

/// Matches one normalized caption; hits are ordered by pattern index, i.e.
/// by concept input order and then synonym list order.
pub fn match_text(automaton: &PatternAutomaton, caption_id: u64, norm_text: &str) -> Vec<MatchHit> {
    let bytes = norm_text.as_bytes();
    // pattern index -> first span
    let mut first: Vec<(usize, usize, usize)> = Vec::new();
    for m in automaton.automaton.find_overlapping_iter(norm_text) {
        let (s, e) = (m.start(), m.end());
        if automaton.mode == MatchMode::WholeWord && !on_boundaries(bytes, s, e) {
            continue;
        }
        for &pid in &automaton.owners[m.pattern().as_usize()] {
            match first.iter_mut().find(|(p, _, _)| *p == pid) {
                Some(slot) => {
                    if s < slot.1 {
                        *slot = (pid, s, e);
                    }
                }
                None => first.push((pid, s, e)),
            }
        }
    }
    first.sort_unstable_by_key(|&(pid, _, _)| pid);
    first
        .into_iter()
        .map(|(pid, start, end)| {
            let p = &automaton.patterns[pid];
            MatchHit {
                caption_id,
                concept_id: p.concept_id,
                synonym: p.synonym.clone(),
                start,
                end,
            }
        })
        .collect()
}

/// Per-synonym caption counts, nested by concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymFrequency {
    pub counts: BTreeMap<ConceptId, BTreeMap<String, ConceptCount>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SynonymFrequencyRow {
    concept_id: ConceptId,
    synonym: String,
    raw: u64,
    filtered: u64,
}

impl SynonymFrequency {
    pub fn entry(&mut self, concept: ConceptId, synonym: &str) -> &mut ConceptCount {
        self.counts
            .entry(concept)
            .or_default()
            .entry(synonym.to_string())
            .or_default()
    }

    pub fn get(&self, concept: ConceptId, synonym: &str) -> ConceptCount {
        self.counts
            .get(&concept)
            .and_then(|m| m.get(synonym))
            .copied()
            .unwrap_or_default()
    }

    pub fn merge(&mut self, other: &SynonymFrequency) {
        for (&c, m) in &other.counts {
            for (s, &n) in m {
                *self.entry(c, s) += n;
            }
        }
    }

    /// Zero entries for every synonym so the CSV lists unmatched forms too.
    pub fn seed(&mut self, sets: &[SynonymSet]) {
        for set in sets {
            for s in &set.synonyms {
                self.entry(set.concept_id, s);
            }
        }
    }

    /// CSV `concept_id,synonym,raw,filtered`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MatchError> {
        let path = path.as_ref();
        let err = |e: csv::Error| MatchError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for (&concept_id, m) in &self.counts {
            for (synonym, c) in m {
                w.serialize(SynonymFrequencyRow {
                    concept_id,
                    synonym: synonym.clone(),
                    raw: c.raw,
                    filtered: c.filtered,
                })
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| MatchError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, MatchError> {
        let path = path.as_ref();
        let err = |e: csv::Error| MatchError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let mut out = SynonymFrequency::default();
        for row in r.deserialize::<SynonymFrequencyRow>() {
            let row = row.map_err(err)?;
            *out.entry(row.concept_id, &row.synonym) = ConceptCount {
                raw: row.raw,
                filtered: row.filtered,
            };
        }
        Ok(out)
    }
}

/// Everything a scan produces. Before any judging, `filtered == raw`.
#[derive(Debug, Clone, Default)]
pub struct ScanOutput {
    pub hits: Vec<MatchHit>,
    pub table: FrequencyTable,
    pub synonyms: SynonymFrequency,
    pub records: u64,
    pub skipped: Vec<SkippedRecord>,
}

impl ScanOutput {
    fn empty(automaton: &PatternAutomaton, corpus_id: &str) -> Self {
        ScanOutput {
            table: FrequencyTable::zeros(corpus_id, automaton.concepts.iter().copied()),
            ..Default::default()
        }
    }

    fn absorb(&mut self, caption_hits: Vec<MatchHit>) {
        let mut last_concept = None;
        for h in &caption_hits {
            // hits arrive grouped by concept input order; equal neighbours
            // mean the same concept matched through another synonym
            if last_concept != Some(h.concept_id) {
                let c = self.table.entry(h.concept_id);
                c.raw += 1;
                c.filtered += 1;
                last_concept = Some(h.concept_id);
            }
            let s = self.synonyms.entry(h.concept_id, &h.synonym);
            s.raw += 1;
            s.filtered += 1;
        }
        self.hits.extend(caption_hits);
    }

    /// Appends a later part of the same corpus.
    pub fn append(&mut self, other: ScanOutput) {
        self.hits.extend(other.hits);
        self.table.merge(&other.table);
        self.synonyms.merge(&other.synonyms);
        self.records += other.records;
        self.skipped.extend(other.skipped);
    }
}

/// Single-threaded scan over an in-order record stream.
pub fn scan<I>(records: I, automaton: &PatternAutomaton) -> ScanOutput
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<CaptionRecord>,
{
    use std::borrow::Borrow;
    let mut out = ScanOutput::empty(automaton, "");
    for r in records {
        let r = r.borrow();
        out.records += 1;
        let hits = match_text(automaton, r.id, &r.norm_text);
        out.absorb(hits);
    }
    out
}

/// Scans a corpus file with `threads` workers, one record-aligned shard
/// each. Results are merged in shard order, so the output is identical to
/// a single-threaded scan.
pub fn scan_file(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    automaton: &PatternAutomaton,
    threads: usize,
) -> Result<ScanOutput, MatchError> {
    let path = path.as_ref();
    let corpus_id = path.display().to_string();
    let shards = shard_corpus(path, threads.max(1))?;
    let parts: Vec<Result<ScanOutput, CorpusError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .map(|shard| {
                scope.spawn(move || {
                    let mut reader = shard.open(format)?;
                    let mut out = scan(reader.by_ref(), automaton);
                    let stats = reader.finish_partial()?;
                    out.skipped = stats.skipped;
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scan worker panicked"))
            .collect()
    });
    let mut total = ScanOutput::empty(automaton, &corpus_id);
    for part in parts {
        total.append(part?);
    }
    if total.records == 0 {
        return Err(CorpusError::Empty(path.to_path_buf()).into());
    }
    total.table.corpus_id = corpus_id;
    Ok(total)
}

/// Convenience single-threaded scan of a whole file.
pub fn scan_file_serial(path: impl AsRef<Path>, format: CorpusFormat, automaton: &PatternAutomaton) -> Result<ScanOutput, MatchError> {
    let path = path.as_ref();
    let mut reader = open_corpus(path, format)?;
    let mut out = scan(reader.by_ref(), automaton);
    out.skipped = reader.finish()?.skipped;
    out.table.corpus_id = path.display().to_string();
    Ok(out)
}
