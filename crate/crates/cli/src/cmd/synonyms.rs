use std::path::PathBuf;
use std::time::Duration;

use serde_json::{json, Value};
use tally_core::jsonl::write_jsonl;
use tally_core::lexicon::{
    expand_synonyms, filter_synonyms, load_synonym_sets, CachedSynonymProvider, ConceptSet, FileSynonymProvider,
    HttpSynonymProvider, SynonymProvider, SynonymSet, SynonymSource,
};

use crate::error::{CliError, CliResult};
use crate::opts::{cache_dir, check_same_concepts, find_embeddings, is_url, load_role, EmbeddingSpec, Role};

/// Expand concept names into synonym sets and optionally drop confusable
/// synonyms using name and synonym text embeddings.
#[derive(Debug, clap::Args)]
pub struct SynonymsArgs {
    /// Concepts JSONL: {"concept_id", "name", "definition"}.
    #[arg(long)]
    pub concepts: PathBuf,
    /// Synonym source: file:PATH (JSONL {"name", "synonyms"}) or an http(s) URL.
    #[arg(long, conflicts_with = "sets", required_unless_present = "sets")]
    pub provider: Option<String>,
    /// Filter an existing synonym-set file instead of expanding.
    #[arg(long)]
    pub sets: Option<PathBuf>,
    /// Hand-curated additions, same format as a provider file.
    #[arg(long)]
    pub manual: Option<PathBuf>,
    /// names=PATH and synonyms=PATH enable filtering.
    #[arg(long = "embeddings", value_name = "ROLE=PATH")]
    pub embeddings: Vec<EmbeddingSpec>,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn provider_for(spec: &str, timeout: Duration) -> CliResult<Box<dyn SynonymProvider>> {
    let inner: Box<dyn SynonymProvider> = if let Some(path) = spec.strip_prefix("file:") {
        Box::new(FileSynonymProvider::load(path)?)
    } else if is_url(spec) {
        Box::new(HttpSynonymProvider::new(spec, timeout).map_err(CliError::provider)?)
    } else {
        return Err(CliError::usage(format!("--provider must be file:PATH or a URL, got {spec:?}")));
    };
    Ok(match cache_dir() {
        Some(dir) => Box::new(CachedSynonymProvider::new(inner, dir)?),
        None => inner,
    })
}

pub fn run(a: SynonymsArgs) -> CliResult<Value> {
    let concepts = ConceptSet::load(&a.concepts)?;
    let mut sets: Vec<SynonymSet> = match (&a.provider, &a.sets) {
        (Some(spec), _) => {
            let provider = provider_for(spec, Duration::from_secs(a.timeout_secs))?;
            concepts
                .iter()
                .map(|c| expand_synonyms(c, provider.as_ref()))
                .collect::<Result<_, _>>()?
        }
        (None, Some(path)) => {
            let sets = load_synonym_sets(path)?;
            check_same_concepts(&concepts, &sets)?;
            sets
        }
        (None, None) => return Err(CliError::usage("one of --provider or --sets is required")),
    };
    if let Some(path) = &a.manual {
        let manual = FileSynonymProvider::load(path)?;
        for set in sets.iter_mut() {
            let Some(c) = concepts.get(set.concept_id) else { continue };
            for s in manual.synonyms(&c.name).map_err(CliError::input)? {
                set.add(&s, SynonymSource::Manual);
            }
        }
    }
    let before: usize = sets.iter().map(SynonymSet::len).sum();

    let filtering = find_embeddings(&a.embeddings, Role::Names)?.is_some() || find_embeddings(&a.embeddings, Role::Synonyms)?.is_some();
    if filtering {
        let names = load_role(&a.embeddings, Role::Names)?;
        let syns = load_role(&a.embeddings, Role::Synonyms)?;
        sets = filter_synonyms(&sets, &names, &syns)?;
    }
    let after: usize = sets.iter().map(SynonymSet::len).sum();
    write_jsonl(&a.out, &sets)?;
    Ok(json!({
        "command": "synonyms",
        "concepts": sets.len(),
        "synonyms": after,
        "removed_by_filter": before - after,
        "filtered": filtering,
        "out": a.out,
    }))
}
