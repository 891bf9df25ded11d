use std::collections::BTreeSet;
use std::path::PathBuf;

use serde_json::{json, Value};
use tally_core::analytics::FrequencyTable;
use tally_core::corpus::CorpusFormat;
use tally_core::jsonl::{read_jsonl, write_jsonl};
use tally_core::judge::{filtered_frequency, JudgeVerdict};
use tally_core::lexicon::{load_synonym_sets, ConceptId, ConceptSet, SynonymSet};
use tally_core::matcher::{compile, scan_file, MatchHit, MatchMode};

use crate::error::{CliError, CliResult};

/// Count per-caption concept mentions with one multi-pattern automaton.
#[derive(Debug, clap::Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    pub format: CorpusFormat,
    /// Synonym sets JSONL from `tally synonyms`.
    #[arg(long)]
    pub synonyms: PathBuf,
    /// whole_word or partial.
    #[arg(long, default_value = "whole_word", value_parser = parse_mode)]
    pub mode: MatchMode,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Hits JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Unfiltered frequency table CSV.
    #[arg(long)]
    pub freq_out: Option<PathBuf>,
    /// Unfiltered per-synonym counts CSV.
    #[arg(long)]
    pub synonym_out: Option<PathBuf>,
}

pub fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse().map_err(|e: tally_core::corpus::CorpusError| e.to_string())
}

fn parse_mode(s: &str) -> Result<MatchMode, String> {
    s.parse().map_err(|e: tally_core::matcher::MatchError| e.to_string())
}

pub fn run(a: ScanArgs) -> CliResult<Value> {
    if a.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let sets = load_synonym_sets(&a.synonyms)?;
    let automaton = compile(&sets, a.mode)?;
    let mut out = scan_file(&a.corpus, a.format, &automaton, a.threads)?;
    out.synonyms.seed(&sets);
    write_jsonl(&a.out, &out.hits)?;
    if let Some(p) = &a.freq_out {
        out.table.write_csv(p, None)?;
    }
    if let Some(p) = &a.synonym_out {
        out.synonyms.write_csv(p)?;
    }
    let matched: BTreeSet<u64> = out.hits.iter().map(|h| h.caption_id).collect();
    Ok(json!({
        "command": "scan",
        "records": out.records,
        "skipped": out.skipped.len(),
        "patterns": automaton.pattern_count(),
        "hits": out.hits.len(),
        "matched_captions": matched.len(),
        "out": a.out,
    }))
}

/// Build concept and per-synonym frequency tables from hits and verdicts.
#[derive(Debug, clap::Args)]
pub struct FreqArgs {
    #[arg(long)]
    pub hits: PathBuf,
    /// Verdicts JSONL; without it filtered counts equal raw counts.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Concepts file; fixes the concept list and fills the name column.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Synonym sets; lists zero-count synonyms in --synonym-out.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub synonym_out: Option<PathBuf>,
}

pub fn run_freq(a: FreqArgs) -> CliResult<Value> {
    let hits: Vec<MatchHit> = read_jsonl(&a.hits)?;
    let concepts = a.concepts.as_ref().map(ConceptSet::load).transpose()?;
    let sets: Option<Vec<SynonymSet>> = a.synonyms.as_ref().map(load_synonym_sets).transpose()?;

    let ids: Vec<ConceptId> = match (&concepts, &sets) {
        (Some(c), _) => c.ids(),
        (None, Some(s)) => s.iter().map(|s| s.concept_id).collect(),
        (None, None) => hits.iter().map(|h| h.concept_id).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let known: BTreeSet<ConceptId> = ids.iter().copied().collect();
    if let Some(h) = hits.iter().find(|h| !known.contains(&h.concept_id)) {
        return Err(CliError::input(format!(
            "hit for concept {} which is not in the concept list",
            h.concept_id
        )));
    }
    if let (Some(c), Some(s)) = (&concepts, &sets) {
        crate::opts::check_same_concepts(c, s)?;
    }

    let verdicts: Vec<JudgeVerdict> = match &a.verdicts {
        Some(p) => read_jsonl(p)?,
        None => hits
            .iter()
            .map(|h| JudgeVerdict {
                caption_id: h.caption_id,
                concept_id: h.concept_id,
                relevant: Some(true),
                judge_id: "none".into(),
            })
            .collect(),
    };
    let mut tallies = filtered_frequency(&hits, &verdicts, &ids)?;
    tallies.concepts.validate()?;
    if let Some(s) = &sets {
        tallies.synonyms.seed(s);
    }
    tallies.concepts.corpus_id = a.hits.display().to_string();
    tallies.concepts.write_csv(&a.out, concepts.as_ref())?;
    if let Some(p) = &a.synonym_out {
        tallies.synonyms.write_csv(p)?;
    }
    let FrequencyTable { counts, .. } = &tallies.concepts;
    Ok(json!({
        "command": "freq",
        "concepts": counts.len(),
        "raw_total": counts.values().map(|c| c.raw).sum::<u64>(),
        "filtered_total": counts.values().map(|c| c.filtered).sum::<u64>(),
        "undecided": tallies.undecided,
        "zero_filtered": counts.values().filter(|c| c.filtered == 0).count(),
        "out": a.out,
    }))
}
