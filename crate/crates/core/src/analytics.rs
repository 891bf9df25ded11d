//! Long-tail statistics over concept frequencies and per-class accuracies:
//! frequency ordering, log-scale binning, head/tail splits, correlations
//! and mean per-class accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{ConceptId, ConceptSet};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("correlation is undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),
    #[error("correlation needs at least 3 concepts, got {0}")]
    TooFewConcepts(usize),
    #[error("frequency and accuracy tables cover different concepts (e.g. {0})")]
    CoverageMismatch(ConceptId),
    #[error("class {0} has no examples")]
    EmptyClass(ConceptId),
    #[error("no predictions")]
    NoPredictions,
    #[error("accuracy {value} for concept {concept_id} is outside [0, 1]")]
    AccuracyRange { concept_id: ConceptId, value: f64 },
    #[error("filtered count exceeds raw count for concept {0}")]
    FilteredExceedsRaw(ConceptId),
    #[error("tail fraction must lie strictly between 0 and 1, got {0}")]
    TailFraction(f64),
    #[error("log base must exceed 1, got {0}")]
    LogBase(f64),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

fn csv_err(path: &Path, e: impl ToString) -> AnalyticsError {
    AnalyticsError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptCount {
    pub raw: u64,
    pub filtered: u64,
}

impl std::ops::AddAssign for ConceptCount {
    fn add_assign(&mut self, rhs: Self) {
        self.raw += rhs.raw;
        self.filtered += rhs.filtered;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountKind {
    Raw,
    #[default]
    Filtered,
}

/// Per-concept caption counts. Every task concept has an entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    pub corpus_id: String,
    pub counts: BTreeMap<ConceptId, ConceptCount>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrequencyRow {
    concept_id: ConceptId,
    name: String,
    raw: u64,
    filtered: u64,
}

impl FrequencyTable {
    pub fn zeros(corpus_id: impl Into<String>, ids: impl IntoIterator<Item = ConceptId>) -> Self {
        FrequencyTable {
            corpus_id: corpus_id.into(),
            counts: ids.into_iter().map(|id| (id, ConceptCount::default())).collect(),
        }
    }

    pub fn entry(&mut self, id: ConceptId) -> &mut ConceptCount {
        self.counts.entry(id).or_default()
    }

    pub fn get(&self, id: ConceptId) -> ConceptCount {
        self.counts.get(&id).copied().unwrap_or_default()
    }

    pub fn count(&self, id: ConceptId, kind: CountKind) -> u64 {
        let c = self.get(id);
        match kind {
            CountKind::Raw => c.raw,
            CountKind::Filtered => c.filtered,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.counts.keys().copied()
    }

    /// Associative, commutative merge of partial tallies.
    pub fn merge(&mut self, other: &FrequencyTable) {
        for (&id, &c) in &other.counts {
            *self.entry(id) += c;
        }
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        match self.counts.iter().find(|(_, c)| c.filtered > c.raw) {
            Some((&id, _)) => Err(AnalyticsError::FilteredExceedsRaw(id)),
            None => Ok(()),
        }
    }

    /// CSV `concept_id,name,raw,filtered`; names come from `concepts` when given.
    pub fn write_csv(&self, path: impl AsRef<Path>, concepts: Option<&ConceptSet>) -> Result<(), AnalyticsError> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for (&id, c) in &self.counts {
            let name = concepts
                .and_then(|cs| cs.get(id))
                .map(|c| c.name.clone())
                .unwrap_or_default();
            w.serialize(FrequencyRow {
                concept_id: id,
                name,
                raw: c.raw,
                filtered: c.filtered,
            })
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| csv_err(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, AnalyticsError> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut t = FrequencyTable {
            corpus_id: path.display().to_string(),
            counts: BTreeMap::new(),
        };
        for row in r.deserialize::<FrequencyRow>() {
            let row = row.map_err(|e| csv_err(path, e))?;
            t.counts.insert(
                row.concept_id,
                ConceptCount {
                    raw: row.raw,
                    filtered: row.filtered,
                },
            );
        }
        t.validate()?;
        Ok(t)
    }
}

/// Per-concept accuracy in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTable {
    pub model_id: String,
    pub accuracy: BTreeMap<ConceptId, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AccuracyRow {
    concept_id: ConceptId,
    accuracy: f64,
}

impl AccuracyTable {
    pub fn new(model_id: impl Into<String>, accuracy: BTreeMap<ConceptId, f64>) -> Result<Self, AnalyticsError> {
        if let Some((&concept_id, &value)) = accuracy.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(AnalyticsError::AccuracyRange { concept_id, value });
        }
        Ok(AccuracyTable {
            model_id: model_id.into(),
            accuracy,
        })
    }

    /// Unweighted mean over classes.
    pub fn mean(&self) -> f64 {
        mean(self.accuracy.values().copied())
    }

    /// Unweighted mean over the listed classes that have an entry.
    pub fn mean_over(&self, ids: &[ConceptId]) -> f64 {
        mean(ids.iter().filter_map(|id| self.accuracy.get(id).copied()))
    }

    /// CSV `concept_id,accuracy`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), AnalyticsError> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for (&concept_id, &accuracy) in &self.accuracy {
            w.serialize(AccuracyRow { concept_id, accuracy })
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| csv_err(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, AnalyticsError> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut acc = BTreeMap::new();
        for row in r.deserialize::<AccuracyRow>() {
            let row = row.map_err(|e| csv_err(path, e))?;
            acc.insert(row.concept_id, row.accuracy);
        }
        Self::new(path.display().to_string(), acc)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Concepts by descending count, ties by ascending id.
pub fn sort_by_frequency(table: &FrequencyTable, kind: CountKind) -> Vec<ConceptId> {
    let mut ids: Vec<ConceptId> = table.ids().collect();
    ids.sort_by(|a, b| {
        table
            .count(*b, kind)
            .cmp(&table.count(*a, kind))
            .then(a.cmp(b))
    });
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BinIndex {
    /// Concepts never observed.
    Zero,
    /// Counts in `[base^k, base^(k+1))`.
    Level(u32),
}

impl std::fmt::Display for BinIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BinIndex::Zero => f.write_str("zero"),
            BinIndex::Level(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogBin {
    pub index: BinIndex,
    /// `0` for the zero bin, otherwise `base^k`.
    pub lower_bound: f64,
    pub mean_accuracy: f64,
    pub members: Vec<ConceptId>,
}

impl LogBin {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// `floor(log_base(n))` for `n >= 1`, exact at powers of the base.
pub fn log_level(n: u64, base: f64) -> u32 {
    debug_assert!(n >= 1 && base > 1.0);
    if base.fract() == 0.0 && base <= u64::MAX as f64 {
        // integral base: exact integer powers, no rounding near boundaries
        let b = base as u128;
        let (mut k, mut p) = (0u32, b);
        while p <= n as u128 {
            k += 1;
            p *= b;
        }
        return k;
    }
    let x = n as f64;
    let mut k = (x.ln() / base.ln()).floor().max(0.0) as i32;
    while k > 0 && base.powi(k) > x {
        k -= 1;
    }
    while base.powi(k + 1) <= x {
        k += 1;
    }
    k as u32
}

/// Groups concepts that have an accuracy entry into log-scale frequency bins
/// and averages accuracy per bin. Zero-count concepts get their own bin,
/// listed first.
pub fn log_bins(
    freq: &FrequencyTable,
    acc: &AccuracyTable,
    base: f64,
    kind: CountKind,
) -> Result<Vec<LogBin>, AnalyticsError> {
    if !(base > 1.0) || !base.is_finite() {
        return Err(AnalyticsError::LogBase(base));
    }
    let mut groups: BTreeMap<BinIndex, Vec<ConceptId>> = BTreeMap::new();
    for id in freq.ids() {
        if !acc.accuracy.contains_key(&id) {
            continue;
        }
        let n = freq.count(id, kind);
        let idx = if n == 0 {
            BinIndex::Zero
        } else {
            BinIndex::Level(log_level(n, base))
        };
        groups.entry(idx).or_default().push(id);
    }
    Ok(groups
        .into_iter()
        .map(|(index, members)| LogBin {
            index,
            lower_bound: match index {
                BinIndex::Zero => 0.0,
                BinIndex::Level(k) => base.powi(k as i32),
            },
            mean_accuracy: acc.mean_over(&members),
            members,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadTailSplit {
    pub head: Vec<ConceptId>,
    pub tail: Vec<ConceptId>,
}

/// The `ceil(tail_fraction * C)` least frequent concepts (ties by ascending
/// id) form the tail; everything else is the head. Both lists ascend by id.
pub fn head_tail_split(freq: &FrequencyTable, tail_fraction: f64, kind: CountKind) -> Result<HeadTailSplit, AnalyticsError> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(AnalyticsError::TailFraction(tail_fraction));
    }
    let c = freq.len();
    // guard against 0.2 * 1000 = 200.00000000000003
    let tail_len = ((tail_fraction * c as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut ascending: Vec<ConceptId> = freq.ids().collect();
    ascending.sort_by(|a, b| freq.count(*a, kind).cmp(&freq.count(*b, kind)).then(a.cmp(b)));
    let tail_set: BTreeSet<ConceptId> = ascending[..tail_len.min(c)].iter().copied().collect();
    let head = freq.ids().filter(|id| !tail_set.contains(id)).collect();
    Ok(HeadTailSplit {
        head,
        tail: tail_set.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl std::str::FromStr for CorrelationMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            o => Err(format!("unknown correlation method {o:?}")),
        }
    }
}

impl std::fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pearson => "pearson",
            Self::Spearman => "spearman",
        })
    }
}

/// Sample Pearson correlation, two-pass for stability.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, AnalyticsError> {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    let n = T::of(xs.len() as f64);
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() {
        return Err(AnalyticsError::UndefinedCorrelation("frequency"));
    }
    if syy == T::zero() {
        return Err(AnalyticsError::UndefinedCorrelation("accuracy"));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = T::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, AnalyticsError> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Correlation between concept frequency and accuracy. Pearson works on
/// `(ln(1 + count), accuracy)`, Spearman on ranks.
pub fn correlate(
    freq: &FrequencyTable,
    acc: &AccuracyTable,
    method: CorrelationMethod,
    kind: CountKind,
) -> Result<f64, AnalyticsError> {
    for id in freq.ids() {
        if !acc.accuracy.contains_key(&id) {
            return Err(AnalyticsError::CoverageMismatch(id));
        }
    }
    if let Some(&id) = acc.accuracy.keys().find(|id| !freq.counts.contains_key(id)) {
        return Err(AnalyticsError::CoverageMismatch(id));
    }
    if freq.len() < 3 {
        return Err(AnalyticsError::TooFewConcepts(freq.len()));
    }
    let xs: Vec<f64> = freq.ids().map(|id| (freq.count(id, kind) as f64).ln_1p()).collect();
    let ys: Vec<f64> = freq.ids().map(|id| acc.accuracy[&id]).collect();
    match method {
        CorrelationMethod::Pearson => pearson(&xs, &ys),
        CorrelationMethod::Spearman => spearman(&xs, &ys),
    }
}

/// Per-class accuracy from `(gold, predicted)` pairs; the mean is unweighted
/// over classes. `classes`, when given, lists every class that must have
/// examples.
pub fn mean_per_class_accuracy(
    predictions: &[(ConceptId, ConceptId)],
    classes: Option<&[ConceptId]>,
) -> Result<(f64, AccuracyTable), AnalyticsError> {
    if predictions.is_empty() && classes.map_or(true, |c| c.is_empty()) {
        return Err(AnalyticsError::NoPredictions);
    }
    let mut tally: BTreeMap<ConceptId, (u64, u64)> = BTreeMap::new();
    if let Some(cs) = classes {
        for &c in cs {
            tally.insert(c, (0, 0));
        }
    }
    for &(gold, pred) in predictions {
        let t = tally.entry(gold).or_default();
        t.1 += 1;
        if gold == pred {
            t.0 += 1;
        }
    }
    let mut acc = BTreeMap::new();
    for (&c, &(correct, total)) in &tally {
        if total == 0 {
            return Err(AnalyticsError::EmptyClass(c));
        }
        acc.insert(c, correct as f64 / total as f64);
    }
    let table = AccuracyTable::new("", acc)?;
    Ok((table.mean(), table))
}
