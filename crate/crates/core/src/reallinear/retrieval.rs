use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LinearError;
use crate::embeddings::{average_normalized, cosine, EmbeddingMatrix};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::lexicon::{ConceptId, SynonymSet};
use crate::matcher::MatchHit;
use crate::scalar::{normalize_in_place, Scalar};

pub const DEFAULT_K: usize = 500;
pub const SWEEP_K: [usize; 2] = [100, 500];

/// Which text drives both the candidate pool and the ranking query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalQuery {
    /// Captions matching any synonym, ranked against the mean synonym embedding.
    #[default]
    Synonyms,
    /// Captions matching the original name, ranked against the name embedding.
    Name,
}

impl std::str::FromStr for RetrievalQuery {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synonyms" => Ok(Self::Synonyms),
            "name" => Ok(Self::Name),
            o => Err(format!("unknown retrieval query {o:?} (expected synonyms or name)")),
        }
    }
}

/// Distinct candidate caption ids per concept, ascending.
pub fn candidate_pools<'h>(
    hits: impl IntoIterator<Item = &'h MatchHit>,
    sets: &[SynonymSet],
    query: RetrievalQuery,
) -> BTreeMap<ConceptId, Vec<u64>> {
    let originals: BTreeMap<ConceptId, &str> = sets.iter().map(|s| (s.concept_id, s.original_name())).collect();
    let mut pools: BTreeMap<ConceptId, BTreeSet<u64>> = sets.iter().map(|s| (s.concept_id, BTreeSet::new())).collect();
    for h in hits {
        let keep = match query {
            RetrievalQuery::Synonyms => true,
            RetrievalQuery::Name => originals.get(&h.concept_id) == Some(&h.synonym.as_str()),
        };
        if keep {
            if let Some(p) = pools.get_mut(&h.concept_id) {
                p.insert(h.caption_id);
            }
        }
    }
    pools
        .into_iter()
        .map(|(c, p)| (c, p.into_iter().collect()))
        .collect()
}

/// Ranking query per concept. In synonym mode this is the normalized mean
/// of every synonym's text embedding (looked up in `synonym_embs`, falling
/// back to `name_embs` for the original name); in name mode it is the
/// normalized name embedding.
pub fn query_vectors<T: Scalar>(
    sets: &[SynonymSet],
    synonym_embs: &EmbeddingMatrix<T>,
    name_embs: &EmbeddingMatrix<T>,
    query: RetrievalQuery,
) -> Result<BTreeMap<ConceptId, Vec<T>>, LinearError> {
    let lookup = |s: &str| -> Result<Vec<T>, LinearError> {
        synonym_embs
            .get(s)
            .or_else(|| name_embs.get(s))
            .map(<[T]>::to_vec)
            .ok_or_else(|| LinearError::MissingEmbedding(s.to_string()))
    };
    let mut out = BTreeMap::new();
    for set in sets {
        let q = match query {
            RetrievalQuery::Synonyms => {
                let rows = set
                    .synonyms
                    .iter()
                    .map(|s| lookup(s))
                    .collect::<Result<Vec<_>, _>>()?;
                average_normalized(&rows)?
            }
            RetrievalQuery::Name => {
                let name = set.original_name();
                let mut v = name_embs
                    .get(name)
                    .or_else(|| synonym_embs.get(name))
                    .map(<[T]>::to_vec)
                    .ok_or_else(|| LinearError::MissingEmbedding(name.to_string()))?;
                normalize_in_place(&mut v);
                v
            }
        };
        out.insert(set.concept_id, q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub caption_id: u64,
    pub score: f64,
}

/// Class-balanced retrieval: up to `k` captions per concept, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalSet {
    pub k: usize,
    pub per_concept: BTreeMap<ConceptId, Vec<Retrieved>>,
    pub pool_sizes: BTreeMap<ConceptId, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub concept_id: ConceptId,
    pub requested: usize,
    pub retrieved: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RetrievalRow {
    concept_id: ConceptId,
    caption_id: u64,
    score: f64,
    rank: usize,
}

impl RetrievalSet {
    /// Concepts that got fewer than `k` captions, zero-candidate ones included.
    pub fn shortfall(&self) -> Vec<Shortfall> {
        self.per_concept
            .iter()
            .filter(|(_, v)| v.len() < self.k)
            .map(|(&concept_id, v)| Shortfall {
                concept_id,
                requested: self.k,
                retrieved: v.len(),
            })
            .collect()
    }

    pub fn sizes(&self) -> BTreeMap<ConceptId, usize> {
        self.per_concept.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    /// JSONL `{"concept_id", "caption_id", "score", "rank"}` with 0-based rank.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), LinearError> {
        let rows: Vec<RetrievalRow> = self
            .per_concept
            .iter()
            .flat_map(|(&concept_id, v)| {
                v.iter().enumerate().map(move |(rank, r)| RetrievalRow {
                    concept_id,
                    caption_id: r.caption_id,
                    score: r.score,
                    rank,
                })
            })
            .collect();
        write_jsonl(path, &rows)?;
        Ok(())
    }

    /// Reads rows back; `k` becomes the largest per-concept size.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, LinearError> {
        let mut rows: Vec<RetrievalRow> = read_jsonl(path)?;
        rows.sort_by_key(|r| (r.concept_id, r.rank));
        let mut per_concept: BTreeMap<ConceptId, Vec<Retrieved>> = BTreeMap::new();
        for r in rows {
            per_concept.entry(r.concept_id).or_default().push(Retrieved {
                caption_id: r.caption_id,
                score: r.score,
            });
        }
        let k = per_concept.values().map(Vec::len).max().unwrap_or(0);
        let pool_sizes = per_concept.iter().map(|(&c, v)| (c, v.len())).collect();
        Ok(RetrievalSet {
            k,
            per_concept,
            pool_sizes,
        })
    }
}

/// Scores every candidate by cosine similarity between its caption embedding
/// and the concept query, then keeps the top `k` (ties by ascending caption
/// id). Concepts are processed in parallel.
pub fn retrieve_balanced<T: Scalar>(
    pools: &BTreeMap<ConceptId, Vec<u64>>,
    caption_embs: &EmbeddingMatrix<T>,
    queries: &BTreeMap<ConceptId, Vec<T>>,
    k: usize,
) -> Result<RetrievalSet, LinearError> {
    let ranked: Vec<(ConceptId, usize, Vec<Retrieved>)> = pools
        .par_iter()
        .map(|(&concept, pool)| {
            let q = queries
                .get(&concept)
                .ok_or(LinearError::MissingQuery(concept))?;
            let mut scored = pool
                .iter()
                .map(|&id| {
                    let e = caption_embs
                        .get(&id.to_string())
                        .ok_or_else(|| LinearError::MissingEmbedding(id.to_string()))?;
                    Ok(Retrieved {
                        caption_id: id,
                        score: cosine(e, q)?.to_f64_lossy(),
                    })
                })
                .collect::<Result<Vec<_>, LinearError>>()?;
            scored.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.caption_id.cmp(&b.caption_id))
            });
            scored.truncate(k);
            Ok((concept, pool.len(), scored))
        })
        .collect::<Result<_, LinearError>>()?;
    let mut out = RetrievalSet {
        k,
        ..Default::default()
    };
    for (c, pool, v) in ranked {
        if v.len() < k {
            log::info!("concept {c}: retrieved {} of {k} requested captions", v.len());
        }
        out.pool_sizes.insert(c, pool);
        out.per_concept.insert(c, v);
    }
    Ok(out)
}
