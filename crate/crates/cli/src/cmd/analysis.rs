use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tally_core::analytics::{
    correlate, head_tail_split, log_bins, sort_by_frequency, AccuracyTable, CorrelationMethod, CountKind, FrequencyTable,
};
use tally_core::lexicon::ConceptId;

use crate::error::{CliError, CliResult};
use crate::opts::{ensure_dir, read_csv, write_csv};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum CountArg {
    Raw,
    Filtered,
}

impl From<CountArg> for CountKind {
    fn from(c: CountArg) -> Self {
        match c {
            CountArg::Raw => CountKind::Raw,
            CountArg::Filtered => CountKind::Filtered,
        }
    }
}

/// Long-tail analyses of a frequency table, optionally against per-class
/// accuracy: head/tail split, log-scale bins and correlations.
#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub freq: PathBuf,
    /// Per-class accuracy CSV `concept_id,accuracy`.
    #[arg(long)]
    pub acc: Option<PathBuf>,
    /// Fraction of least frequent concepts forming the tail.
    #[arg(long, default_value_t = 0.2)]
    pub tail: f64,
    #[arg(long, default_value_t = 10.0)]
    pub base: f64,
    #[arg(long, value_enum, default_value_t = CountArg::Filtered)]
    pub count: CountArg,
    /// Directory for split.csv, bins.csv and correlation.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    concept_id: ConceptId,
    group: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinRow {
    bin: String,
    mean_acc: f64,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrelationRow {
    method: String,
    value: f64,
    n: usize,
}

pub fn run_analyze(a: AnalyzeArgs) -> CliResult<Value> {
    let kind: CountKind = a.count.into();
    let freq = FrequencyTable::read_csv(&a.freq)?;
    ensure_dir(&a.out_dir)?;
    let split = head_tail_split(&freq, a.tail, kind)?;
    let mut rows: Vec<SplitRow> = split
        .head
        .iter()
        .map(|&c| SplitRow {
            concept_id: c,
            group: "head".into(),
        })
        .chain(split.tail.iter().map(|&c| SplitRow {
            concept_id: c,
            group: "tail".into(),
        }))
        .collect();
    rows.sort_by_key(|r| r.concept_id);
    write_csv(&a.out_dir.join("split.csv"), &rows)?;

    let mut summary = json!({
        "command": "analyze",
        "concepts": freq.len(),
        "head": split.head.len(),
        "tail": split.tail.len(),
        "out_dir": a.out_dir,
    });

    if let Some(acc_path) = &a.acc {
        let acc = AccuracyTable::read_csv(acc_path)?;
        let bins = log_bins(&freq, &acc, a.base, kind)?;
        write_csv(
            &a.out_dir.join("bins.csv"),
            bins.iter().map(|b| BinRow {
                bin: b.index.to_string(),
                mean_acc: b.mean_accuracy,
                count: b.members.len(),
            }),
        )?;
        let mut corr = Vec::new();
        for method in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
            let value = correlate(&freq, &acc, method, kind)?;
            summary[method.to_string()] = json!(value);
            corr.push(CorrelationRow {
                method: method.to_string(),
                value,
                n: freq.len(),
            });
        }
        write_csv(&a.out_dir.join("correlation.csv"), &corr)?;
        summary["bins"] = json!(bins.len());
        summary["head_accuracy"] = json!(acc.mean_over(&split.head));
        summary["tail_accuracy"] = json!(acc.mean_over(&split.tail));
    }
    Ok(summary)
}

/// Collect a run directory's analysis CSVs into report.md and report.csv.
#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Directory holding freq.csv, bins.csv, split.csv, correlation.csv and
    /// optional acc_<model>.csv files.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Model whose accuracy the others are compared against.
    #[arg(long, default_value = "zs")]
    pub baseline: String,
    #[arg(long, value_enum, default_value_t = CountArg::Filtered)]
    pub count: CountArg,
}

const REQUIRED: [&str; 4] = ["freq.csv", "bins.csv", "split.csv", "correlation.csv"];

#[derive(Debug, Serialize)]
struct ReportRow {
    model: String,
    mean: f64,
    head: f64,
    tail: f64,
    delta_mean: Option<f64>,
    delta_head: Option<f64>,
    delta_tail: Option<f64>,
}

fn accuracy_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(model) = name.strip_prefix("acc_").and_then(|n| n.strip_suffix(".csv")) {
            out.insert(model.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn f4(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "n/a".into()
    }
}

fn signed(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:+.4}"),
        _ => String::new(),
    }
}

pub fn run_report(a: ReportArgs) -> CliResult<Value> {
    let dir = &a.run_dir;
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|f| !dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Err(CliError::input(format!(
            "missing artifacts in {}: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let kind: CountKind = a.count.into();
    let freq = FrequencyTable::read_csv(dir.join("freq.csv"))?;
    let bins: Vec<BinRow> = read_csv(&dir.join("bins.csv"))?;
    let split: Vec<SplitRow> = read_csv(&dir.join("split.csv"))?;
    let corr: Vec<CorrelationRow> = read_csv(&dir.join("correlation.csv"))?;
    let names: BTreeMap<ConceptId, String> = read_csv::<NameRow>(&dir.join("freq.csv"))?
        .into_iter()
        .map(|r| (r.concept_id, r.name))
        .collect();

    let head: Vec<ConceptId> = split.iter().filter(|r| r.group == "head").map(|r| r.concept_id).collect();
    let tail: Vec<ConceptId> = split.iter().filter(|r| r.group == "tail").map(|r| r.concept_id).collect();
    if let Some(r) = split.iter().find(|r| r.group != "head" && r.group != "tail") {
        return Err(CliError::input(format!("split.csv: unknown group {:?}", r.group)));
    }

    let mut models = Vec::new();
    for (model, path) in accuracy_files(dir)? {
        let acc = AccuracyTable::read_csv(&path)?;
        models.push((model, acc.mean(), acc.mean_over(&head), acc.mean_over(&tail)));
    }
    let base = models.iter().find(|m| m.0 == a.baseline).cloned();
    let rows: Vec<ReportRow> = models
        .iter()
        .map(|(model, mean, h, t)| ReportRow {
            model: model.clone(),
            mean: *mean,
            head: *h,
            tail: *t,
            delta_mean: base.as_ref().map(|b| mean - b.1),
            delta_head: base.as_ref().map(|b| h - b.2),
            delta_tail: base.as_ref().map(|b| t - b.3),
        })
        .collect();

    let out_dir = a.out_dir.clone().unwrap_or_else(|| dir.clone());
    ensure_dir(&out_dir)?;
    write_csv(&out_dir.join("report.csv"), &rows)?;

    let order = sort_by_frequency(&freq, kind);
    let raw_total: u64 = freq.counts.values().map(|c| c.raw).sum();
    let filtered_total: u64 = freq.counts.values().map(|c| c.filtered).sum();
    let mut md = String::new();
    let _ = writeln!(md, "# Concept frequency report\n");
    let _ = writeln!(
        md,
        "{} concepts; {} raw and {} filtered caption matches; head {} / tail {}.\n",
        freq.len(),
        raw_total,
        filtered_total,
        head.len(),
        tail.len()
    );
    let _ = writeln!(md, "## Most and least frequent concepts\n");
    let _ = writeln!(md, "| rank | concept_id | name | raw | filtered |");
    let _ = writeln!(md, "|---:|---:|---|---:|---:|");
    let n = order.len();
    let shown: Vec<usize> = if n <= 20 { (0..n).collect() } else { (0..10).chain(n - 10..n).collect() };
    for i in shown {
        let id = order[i];
        let c = freq.get(id);
        let name = names.get(&id).map(String::as_str).unwrap_or("");
        let _ = writeln!(md, "| {} | {} | {} | {} | {} |", i + 1, id, name, c.raw, c.filtered);
    }
    let _ = writeln!(md, "\n## Frequency vs accuracy\n");
    let _ = writeln!(md, "| method | value | n |");
    let _ = writeln!(md, "|---|---:|---:|");
    for r in &corr {
        let _ = writeln!(md, "| {} | {} | {} |", r.method, f4(r.value), r.n);
    }
    let _ = writeln!(md, "\n## Accuracy by log-frequency bin\n");
    let _ = writeln!(md, "| bin | mean accuracy | concepts |");
    let _ = writeln!(md, "|---|---:|---:|");
    for b in &bins {
        let _ = writeln!(md, "| {} | {} | {} |", b.bin, f4(b.mean_acc), b.count);
    }
    if !rows.is_empty() {
        let _ = writeln!(md, "\n## Head and tail accuracy\n");
        match &base {
            Some(_) => {
                let _ = writeln!(md, "Deltas are relative to `{}`.\n", a.baseline);
            }
            None => {
                let _ = writeln!(md, "No `acc_{}.csv`; deltas omitted.\n", a.baseline);
            }
        }
        let _ = writeln!(md, "| model | mean | head | tail | Δ mean | Δ head | Δ tail |");
        let _ = writeln!(md, "|---|---:|---:|---:|---:|---:|---:|");
        for r in &rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.model,
                f4(r.mean),
                f4(r.head),
                f4(r.tail),
                signed(r.delta_mean),
                signed(r.delta_head),
                signed(r.delta_tail)
            );
        }
    }
    let md_path = out_dir.join("report.md");
    std::fs::write(&md_path, md).map_err(|e| CliError::input(format!("{}: {e}", md_path.display())))?;

    Ok(json!({
        "command": "report",
        "concepts": freq.len(),
        "models": rows.iter().map(|r| r.model.clone()).collect::<Vec<_>>(),
        "baseline_found": base.is_some(),
        "report": md_path,
    }))
}

#[derive(Debug, Deserialize)]
struct NameRow {
    concept_id: ConceptId,
    name: String,
}
