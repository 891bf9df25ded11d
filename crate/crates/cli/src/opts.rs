//! Argument types and file helpers shared by the subcommands.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tally_core::embeddings::{load_embeddings, EmbeddingMatrix};
use tally_core::lexicon::{ConceptId, ConceptSet, SynonymSet};

use crate::error::{CliError, CliResult};

pub const CACHE_ENV: &str = "TALLY_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Images,
    Captions,
    Names,
    Synonyms,
    Prompts,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Images => "images",
            Role::Captions => "captions",
            Role::Names => "names",
            Role::Synonyms => "synonyms",
            Role::Prompts => "prompts",
        }
    }
}

/// `--embeddings ROLE=PATH`.
#[derive(Debug, Clone)]
pub struct EmbeddingSpec {
    pub role: Role,
    pub path: PathBuf,
}

impl FromStr for EmbeddingSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (role, path) = s
            .split_once('=')
            .ok_or_else(|| format!("expected ROLE=PATH, got {s:?}"))?;
        let role = match role {
            "images" => Role::Images,
            "captions" => Role::Captions,
            "names" => Role::Names,
            "synonyms" => Role::Synonyms,
            "prompts" => Role::Prompts,
            o => return Err(format!("unknown embedding role {o:?} (images|captions|names|synonyms|prompts)")),
        };
        if path.is_empty() {
            return Err("empty embedding path".into());
        }
        Ok(EmbeddingSpec {
            role,
            path: PathBuf::from(path),
        })
    }
}

pub fn find_embeddings(specs: &[EmbeddingSpec], role: Role) -> CliResult<Option<&Path>> {
    let mut found = specs.iter().filter(|s| s.role == role);
    let first = found.next();
    if found.next().is_some() {
        return Err(CliError::usage(format!("--embeddings {}= given more than once", role.as_str())));
    }
    Ok(first.map(|s| s.path.as_path()))
}

pub fn require_embeddings(specs: &[EmbeddingSpec], role: Role) -> CliResult<&Path> {
    find_embeddings(specs, role)?
        .ok_or_else(|| CliError::usage(format!("missing --embeddings {}=PATH", role.as_str())))
}

pub fn load_role(specs: &[EmbeddingSpec], role: Role) -> CliResult<EmbeddingMatrix<f64>> {
    Ok(load_embeddings(require_embeddings(specs, role)?)?)
}

pub fn load_optional_role(specs: &[EmbeddingSpec], role: Role) -> CliResult<Option<EmbeddingMatrix<f64>>> {
    find_embeddings(specs, role)?
        .map(|p| load_embeddings(p).map_err(CliError::from))
        .transpose()
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

pub fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

pub fn write_csv<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<D: DeserializeOwned>(path: &Path) -> CliResult<Vec<D>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<D>, _>>()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    key: String,
    concept_id: ConceptId,
}

/// Test labels: CSV `key,concept_id`, keys matching the image embedding file.
pub fn read_labels(path: &Path) -> CliResult<Vec<(String, ConceptId)>> {
    Ok(read_csv::<LabelRow>(path)?
        .into_iter()
        .map(|r| (r.key, r.concept_id))
        .collect())
}

/// Synonym sets must cover exactly the concept ids of the concept file.
pub fn check_same_concepts(concepts: &ConceptSet, sets: &[SynonymSet]) -> CliResult<()> {
    let mut a = concepts.ids();
    let mut b: Vec<ConceptId> = sets.iter().map(|s| s.concept_id).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(CliError::input(format!(
            "concept sets differ: concepts file has {} ids, synonym file has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `out.jsonl` with `k` = 100 becomes `out.k100.jsonl`.
pub fn with_k_suffix(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.k{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}.k{k}"),
    };
    path.with_file_name(name)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}
