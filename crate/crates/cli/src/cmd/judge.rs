use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};
use tally_core::corpus::{open_corpus, CorpusFormat};
use tally_core::jsonl::{read_jsonl, write_jsonl};
use tally_core::judge::{
    definition_precision, judge_hits, HttpJudge, JudgeError, JudgeProvider, Judging, RetryPolicy, RuleStubJudge,
    ValidationSet, VerdictCache,
};
use tally_core::lexicon::{ConceptId, ConceptSet};
use tally_core::matcher::MatchHit;

use crate::cmd::scan::parse_format;
use crate::error::{CliError, CliResult};
use crate::opts::{cache_dir, is_url, write_csv};

/// Ask a judge whether each matched (caption, concept) pair is a genuine
/// mention of the concept's definition.
#[derive(Debug, clap::Args)]
pub struct JudgeArgs {
    #[arg(long)]
    pub hits: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    pub format: CorpusFormat,
    #[arg(long)]
    pub concepts: PathBuf,
    /// stub:BLOCKLIST.jsonl or an http(s) URL.
    #[arg(long)]
    pub judge: String,
    /// Verdicts JSONL.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Validation pairs JSONL; reports each definition's retrieval precision.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, requires = "validation")]
    pub precision_out: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 4)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 250)]
    pub backoff_ms: u64,
}

fn judge_for(spec: &str, timeout: Duration) -> CliResult<Box<dyn JudgeProvider>> {
    if let Some(path) = spec.strip_prefix("stub:") {
        Ok(Box::new(RuleStubJudge::load(path)?))
    } else if is_url(spec) {
        Ok(Box::new(HttpJudge::new(spec, timeout).map_err(CliError::provider)?))
    } else {
        Err(CliError::usage(format!("--judge must be stub:PATH or a URL, got {spec:?}")))
    }
}

/// Raw text of every caption whose id is in `wanted`.
fn load_captions(path: &PathBuf, format: CorpusFormat, wanted: &HashSet<u64>) -> CliResult<HashMap<u64, String>> {
    let mut reader = open_corpus(path, format)?;
    let mut out = HashMap::with_capacity(wanted.len());
    for r in reader.by_ref() {
        if wanted.contains(&r.id) {
            out.insert(r.id, r.raw_text);
        }
    }
    reader.finish()?;
    Ok(out)
}

#[derive(Serialize)]
struct PrecisionRow {
    concept_id: ConceptId,
    pairs: usize,
    judged_relevant: usize,
    true_positives: usize,
    undecided: usize,
    precision: Option<f64>,
}

pub fn run(a: JudgeArgs) -> CliResult<Value> {
    if a.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let hits: Vec<MatchHit> = read_jsonl(&a.hits)?;
    let concepts = ConceptSet::load(&a.concepts)?;
    let validation = a.validation.as_ref().map(ValidationSet::load).transpose()?;

    let mut wanted: HashSet<u64> = hits.iter().map(|h| h.caption_id).collect();
    if let Some(v) = &validation {
        wanted.extend(v.pairs().iter().map(|p| p.caption_id));
    }
    let captions = load_captions(&a.corpus, a.format, &wanted)?;

    let provider = judge_for(&a.judge, Duration::from_secs(a.timeout_secs))?;
    let cache = cache_dir()
        .map(|d| VerdictCache::open(d, &provider.id()))
        .transpose()?;
    let mut judging = Judging::new(provider.as_ref()).with_retry(RetryPolicy {
        max_attempts: a.max_attempts.max(1),
        initial_backoff: Duration::from_millis(a.backoff_ms),
    });
    if let Some(c) = &cache {
        judging = judging.with_cache(c);
    }

    let verdicts = judge_hits(&hits, &concepts, &captions, &judging, a.threads)?;
    write_jsonl(&a.out, &verdicts)?;
    let relevant = verdicts.iter().filter(|v| v.relevant == Some(true)).count();
    let undecided = verdicts.iter().filter(|v| v.is_undecided()).count();
    if !verdicts.is_empty() && undecided == verdicts.len() {
        return Err(CliError::provider(format!(
            "judge {} answered none of {} pairs; verdicts written as undecided to {}",
            provider.id(),
            verdicts.len(),
            a.out.display()
        )));
    }

    let mut summary = json!({
        "command": "judge",
        "judge": provider.id(),
        "pairs": verdicts.len(),
        "relevant": relevant,
        "irrelevant": verdicts.len() - relevant - undecided,
        "undecided": undecided,
        "out": a.out,
    });

    if let Some(v) = &validation {
        let sizes = v.sizes();
        let mut rows = Vec::new();
        for (&concept_id, &pairs) in &sizes {
            let concept = concepts
                .get(concept_id)
                .ok_or_else(|| CliError::input(format!("validation pair for unknown concept {concept_id}")))?;
            let row = match definition_precision(concept, &concept.definition, v, &captions, &judging) {
                Ok(p) => PrecisionRow {
                    concept_id,
                    pairs,
                    judged_relevant: p.judged_relevant,
                    true_positives: p.true_positives,
                    undecided: p.undecided,
                    precision: Some(p.value),
                },
                Err(JudgeError::UndefinedPrecision(_)) => PrecisionRow {
                    concept_id,
                    pairs,
                    judged_relevant: 0,
                    true_positives: 0,
                    undecided: 0,
                    precision: None,
                },
                Err(e) => return Err(e.into()),
            };
            rows.push(row);
        }
        let defined: Vec<f64> = rows.iter().filter_map(|r| r.precision).collect();
        summary["validation_concepts"] = json!(rows.len());
        summary["min_precision"] = json!(defined.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x)))));
        summary["undefined_precision"] = json!(rows.len() - defined.len());
        summary["precision"] = json!(rows
            .iter()
            .map(|r| json!({"concept_id": r.concept_id, "precision": r.precision}))
            .collect::<Vec<_>>());
        if let Some(p) = &a.precision_out {
            write_csv(p, &rows)?;
        }
    }
    Ok(summary)
}
