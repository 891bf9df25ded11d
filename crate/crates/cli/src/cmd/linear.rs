use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};
use tally_core::embeddings::EmbeddingMatrix;
use tally_core::jsonl::read_jsonl;
use tally_core::judge::{relevant_hits, JudgeVerdict};
use tally_core::lexicon::{load_synonym_sets, ConceptId};
use tally_core::matcher::MatchHit;
use tally_core::reallinear::{
    candidate_pools, ensemble, evaluate, query_vectors, retrieve_balanced, train_crossmodal, ProbeMode, RetrievalQuery,
    RetrievalSet, TrainConfig, TrainingSet, DEFAULT_K,
};
use tally_core::realprompt::ClassifierWeights;

use crate::error::{CliError, CliResult};
use crate::opts::{load_optional_role, load_role, read_labels, with_k_suffix, write_csv, EmbeddingSpec, Role};

/// Class-balanced top-K retrieval of matched captions by text similarity.
#[derive(Debug, clap::Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub hits: PathBuf,
    /// Keep only hits judged relevant.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Synonym sets JSONL.
    #[arg(long)]
    pub synonyms: PathBuf,
    /// captions=PATH (keyed by caption id), synonyms=PATH, names=PATH.
    #[arg(long = "embeddings", value_name = "ROLE=PATH")]
    pub embeddings: Vec<EmbeddingSpec>,
    /// Captions per concept; a comma list writes one file per K.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_K])]
    pub k: Vec<usize>,
    #[arg(long, default_value = "synonyms", value_parser = |s: &str| s.parse::<RetrievalQuery>())]
    pub query: RetrievalQuery,
    /// Retrieval JSONL; with several K values `.k<K>` is inserted before the extension.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_retrieve(a: RetrieveArgs) -> CliResult<Value> {
    if a.k.iter().any(|&k| k == 0) {
        return Err(CliError::usage("--k values must be positive"));
    }
    let sets = load_synonym_sets(&a.synonyms)?;
    let hits: Vec<MatchHit> = read_jsonl(&a.hits)?;
    let kept: Vec<&MatchHit> = match &a.verdicts {
        Some(p) => {
            let verdicts: Vec<JudgeVerdict> = read_jsonl(p)?;
            relevant_hits(&hits, &verdicts)
        }
        None => hits.iter().collect(),
    };
    let captions = load_role(&a.embeddings, Role::Captions)?;
    let synonyms = load_optional_role(&a.embeddings, Role::Synonyms)?;
    let names = load_optional_role(&a.embeddings, Role::Names)?;
    if synonyms.is_none() && names.is_none() {
        return Err(CliError::usage("need --embeddings synonyms=PATH or names=PATH for the query text"));
    }
    let dim = captions.dim();
    let synonyms = synonyms.unwrap_or_else(|| EmbeddingMatrix::new(dim));
    let names = names.unwrap_or_else(|| EmbeddingMatrix::new(dim));

    let pools = candidate_pools(kept.iter().copied(), &sets, a.query);
    let queries = query_vectors(&sets, &synonyms, &names, a.query)?;
    let max_k = *a.k.iter().max().expect("at least one K");
    let full = retrieve_balanced(&pools, &captions, &queries, max_k)?;

    let mut per_k = Vec::new();
    for &k in &a.k {
        let set = RetrievalSet {
            k,
            per_concept: full
                .per_concept
                .iter()
                .map(|(&c, v)| (c, v.iter().take(k).copied().collect()))
                .collect(),
            pool_sizes: full.pool_sizes.clone(),
        };
        let path = if a.k.len() == 1 { a.out.clone() } else { with_k_suffix(&a.out, k) };
        set.write_jsonl(&path)?;
        per_k.push(json!({
            "k": k,
            "out": path,
            "retrieved": set.per_concept.values().map(Vec::len).sum::<usize>(),
            "shortfall": set.shortfall(),
        }));
    }
    Ok(json!({
        "command": "retrieve",
        "concepts": full.per_concept.len(),
        "query": a.query,
        "candidates": full.pool_sizes.values().sum::<usize>(),
        "runs": per_k,
    }))
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    CrossModal,
    ImageOnly,
}

/// Train the linear probe on retrieved image embeddings (plus text
/// embeddings in cross-modal mode) starting from W_zs.
#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Retrieval JSONL from `tally retrieve`.
    #[arg(long)]
    pub retrieval: PathBuf,
    /// images=PATH keyed by caption id; synonyms=PATH adds text examples,
    /// with names=PATH as the fallback for original names.
    #[arg(long = "embeddings", value_name = "ROLE=PATH")]
    pub embeddings: Vec<EmbeddingSpec>,
    /// Synonym sets, needed with --embeddings synonyms=PATH.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// Zero-shot weights; initialization and text examples.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::CrossModal)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100.0)]
    pub logit_scale: f64,
    /// Learned weights W.
    #[arg(long)]
    pub out: PathBuf,
    /// Sum ensemble W + W_zs.
    #[arg(long)]
    pub ensemble_out: Option<PathBuf>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub losses_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn run_train(a: TrainArgs) -> CliResult<Value> {
    let config = TrainConfig {
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        mode: match a.mode {
            ModeArg::CrossModal => ProbeMode::CrossModal,
            ModeArg::ImageOnly => ProbeMode::ImageOnly,
        },
        logit_scale: a.logit_scale,
    };
    config.validate()?;
    let init = ClassifierWeights::<f64>::load(&a.init)?;
    let retrieval = RetrievalSet::read_jsonl(&a.retrieval)?;
    let images = load_role(&a.embeddings, Role::Images)?;
    if images.dim() != init.dim() {
        return Err(CliError::input(format!(
            "image embeddings have dim {}, classifier has {}",
            images.dim(),
            init.dim()
        )));
    }
    let rows = init.row_index();
    if let Some(c) = retrieval.per_concept.keys().find(|c| !rows.contains_key(c)) {
        return Err(CliError::input(format!("retrieval lists concept {c}, absent from {}", a.init.display())));
    }

    let mut image_examples: Vec<(ConceptId, &[f64])> = Vec::new();
    let mut missing = 0usize;
    for (&c, list) in &retrieval.per_concept {
        for r in list {
            match images.get(&r.caption_id.to_string()) {
                Some(x) => image_examples.push((c, x)),
                None => missing += 1,
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} retrieved captions have no image embedding and were skipped");
    }

    let mut text_examples: Vec<(ConceptId, Vec<f64>)> = init
        .concepts()
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, init.row(i).to_vec()))
        .collect();
    if let Some(syn_embs) = load_optional_role(&a.embeddings, Role::Synonyms)? {
        let path = a
            .synonyms
            .as_ref()
            .ok_or_else(|| CliError::usage("--embeddings synonyms=PATH needs --synonyms"))?;
        // original names may live only in the names file
        let names = load_optional_role(&a.embeddings, Role::Names)?;
        for set in load_synonym_sets(path)? {
            if !rows.contains_key(&set.concept_id) {
                return Err(CliError::input(format!("synonym set for unknown concept {}", set.concept_id)));
            }
            for s in &set.synonyms {
                let e = syn_embs
                    .get(s)
                    .or_else(|| names.as_ref().and_then(|n| n.get(s)))
                    .ok_or_else(|| CliError::input(format!("missing embedding for key {s:?}")))?;
                text_examples.push((set.concept_id, e.to_vec()));
            }
        }
    }

    let set = TrainingSet::build(
        init.concepts(),
        init.dim(),
        image_examples.iter().copied(),
        text_examples.iter().map(|(c, v)| (*c, v.as_slice())),
        config.mode,
    )?;
    let outcome = train_crossmodal(&set, &init, &config)?;
    let w = outcome
        .weights
        .with_provenance("retrieval", a.retrieval.display().to_string());
    w.save(&a.out)?;
    if let Some(p) = &a.ensemble_out {
        ensemble(&w, &init)?.save(p)?;
    }
    if let Some(p) = &a.losses_out {
        write_csv(
            p,
            outcome
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(epoch, &loss)| LossRow { epoch, loss }),
        )?;
    }
    Ok(json!({
        "command": "train",
        "examples": set.len(),
        "image_examples": image_examples.len(),
        "text_examples": set.len() - image_examples.len(),
        "missing_images": missing,
        "steps": outcome.steps,
        "initial_loss": outcome.epoch_losses.first(),
        "final_loss": outcome.epoch_losses.last(),
        "out": a.out,
        "ensemble": a.ensemble_out,
    }))
}

/// Mean per-class accuracy of a classifier on labelled image embeddings.
#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// images=PATH holding the test embeddings.
    #[arg(long = "embeddings", value_name = "ROLE=PATH")]
    pub embeddings: Vec<EmbeddingSpec>,
    /// CSV `key,concept_id`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Per-class accuracy CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_eval(a: EvalArgs) -> CliResult<Value> {
    let weights = ClassifierWeights::<f64>::load(&a.weights)?;
    let test = load_role(&a.embeddings, Role::Images)?;
    let labels = read_labels(&a.labels)?;
    let (mean, mut table) = evaluate(&weights, &test, &labels)?;
    table.model_id = a.weights.display().to_string();
    if let Some(p) = &a.out {
        table.write_csv(p)?;
    }
    Ok(json!({
        "command": "eval",
        "weights": a.weights,
        "role": weights.role,
        "test_examples": labels.len(),
        "classes": table.accuracy.len(),
        "mean_per_class_accuracy": mean,
    }))
}
