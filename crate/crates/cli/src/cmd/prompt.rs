use std::path::PathBuf;

use serde_json::{json, Value};
use tally_core::jsonl::write_jsonl;
use tally_core::lexicon::load_synonym_sets;
use tally_core::matcher::SynonymFrequency;
use tally_core::realprompt::{
    build_prompts, build_zeroshot, most_frequent_synonym, write_choices_csv, ConceptPrompts, PromptTemplateSet,
    SynonymChoice, TemplateSource,
};

use crate::cmd::analysis::CountArg;
use crate::error::{CliError, CliResult};
use crate::opts::{find_embeddings, load_role, EmbeddingSpec, Role};

/// Build prompts from each concept's most frequent synonym and, given
/// prompt embeddings, the zero-shot classifier.
#[derive(Debug, clap::Args)]
pub struct PromptArgs {
    /// Synonym sets JSONL.
    #[arg(long)]
    pub synonyms: PathBuf,
    /// Per-synonym counts CSV from `tally freq --synonym-out`.
    #[arg(long, required_unless_present = "original_only")]
    pub synonym_freq: Option<PathBuf>,
    /// Keep every concept's original name (the baseline classifier).
    #[arg(long)]
    pub original_only: bool,
    /// Built-in template set (plain, photo_of, openai80) or a template file.
    #[arg(long, default_value = "openai80")]
    pub templates: String,
    /// Label for a template file: plain, photo_of, openai80, dclip or cupl.
    #[arg(long)]
    pub template_source: Option<String>,
    #[arg(long, value_enum, default_value_t = CountArg::Filtered)]
    pub count: CountArg,
    /// Prompts JSONL: {"concept_id", "prompts": [...]}.
    #[arg(long)]
    pub out: PathBuf,
    /// Chosen-synonym CSV.
    #[arg(long)]
    pub choices_out: Option<PathBuf>,
    /// prompts=PATH, keyed by prompt text.
    #[arg(long = "embeddings", value_name = "ROLE=PATH")]
    pub embeddings: Vec<EmbeddingSpec>,
    /// Where to write W_zs; needs --embeddings prompts=PATH.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

fn templates(spec: &str, source: Option<&str>) -> CliResult<PromptTemplateSet> {
    let builtin = match spec {
        "plain" => Some(TemplateSource::Plain),
        "photo_of" => Some(TemplateSource::PhotoOf),
        "openai80" => Some(TemplateSource::Openai80),
        _ => None,
    };
    if let Some(t) = builtin.and_then(PromptTemplateSet::builtin) {
        return Ok(t);
    }
    let source: TemplateSource = source.unwrap_or("plain").parse().map_err(CliError::usage)?;
    Ok(PromptTemplateSet::load(spec, source)?)
}

pub fn run(a: PromptArgs) -> CliResult<Value> {
    let sets = load_synonym_sets(&a.synonyms)?;
    let tpl = templates(&a.templates, a.template_source.as_deref())?;
    let choices: Vec<SynonymChoice> = if a.original_only {
        sets.iter()
            .map(|s| SynonymChoice {
                concept_id: s.concept_id,
                original: s.original_name().to_string(),
                chosen: s.original_name().to_string(),
                count: 0,
                fallback: false,
            })
            .collect()
    } else {
        let path = a.synonym_freq.as_ref().expect("clap requires it");
        let freq = SynonymFrequency::read_csv(path)?;
        sets.iter().map(|s| most_frequent_synonym(s, &freq, a.count.into())).collect()
    };
    let prompts: Vec<ConceptPrompts> = choices
        .iter()
        .map(|c| ConceptPrompts {
            concept_id: c.concept_id,
            prompts: build_prompts(&c.chosen, &tpl),
        })
        .collect();
    write_jsonl(&a.out, &prompts)?;
    if let Some(p) = &a.choices_out {
        write_choices_csv(p, &choices)?;
    }

    let mut summary = json!({
        "command": "prompt",
        "concepts": choices.len(),
        "templates": tpl.len(),
        "switched": choices.iter().filter(|c| c.chosen != c.original).count(),
        "fallback": choices.iter().filter(|c| c.fallback).count(),
        "out": a.out,
    });
    match (&a.weights_out, find_embeddings(&a.embeddings, Role::Prompts)?) {
        (Some(out), Some(_)) => {
            let embs = load_role(&a.embeddings, Role::Prompts)?;
            let w = build_zeroshot(&prompts, &embs)?
                .with_provenance("templates", json!({"source": tpl.source(), "count": tpl.len()}))
                .with_provenance("selection", if a.original_only { "original" } else { "most_frequent" })
                .with_provenance("synonyms", a.synonyms.display().to_string());
            w.save(out)?;
            summary["weights"] = json!(out);
        }
        (Some(_), None) => return Err(CliError::usage("--weights-out needs --embeddings prompts=PATH")),
        _ => {}
    }
    Ok(summary)
}
