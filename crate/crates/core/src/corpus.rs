//! Streaming caption corpora: text normalization, JSONL/TSV record parsing
//! and record-aligned sharding.
//!
//! A corpus is a line-oriented file. Every non-blank line is one record:
//!
//! * `jsonl`: `{"id": <u64>, "text": <string>}`
//! * `tsv`: `<id>\t<caption>`; the caption is everything after the first tab,
//!   optionally wrapped in double quotes with `""` as the escaped quote.
//!
//! Lines that fail to parse are skipped and counted, never fatal.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus file {0} contains no parsable records")]
    Empty(PathBuf),
    #[error("shard count must be at least 1")]
    ZeroShards,
    #[error("unknown corpus format {0:?} (expected jsonl or tsv)")]
    UnknownFormat(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Why a single line was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    InvalidUtf8,
    Malformed(String),
}

/// A skipped line, identified by its byte offset in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub byte_offset: u64,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Tsv => "tsv",
        })
    }
}

/// One corpus entry. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub id: u64,
    pub raw_text: String,
    pub norm_text: String,
    pub byte_offset: u64,
}

impl CaptionRecord {
    pub fn new(id: u64, raw_text: impl Into<String>, byte_offset: u64) -> Self {
        let raw_text = raw_text.into();
        let norm_text = normalize_text(&raw_text);
        CaptionRecord {
            id,
            raw_text,
            norm_text,
            byte_offset,
        }
    }
}

fn normalize_once(raw: &str) -> String {
    let folded: String = raw.nfkc().flat_map(char::to_lowercase).nfkc().collect();
    let mut out = String::with_capacity(folded.len());
    let mut pending_space = false;
    for ch in folded.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Canonical caption form: NFKC, lowercase, every maximal run of
/// non-alphanumeric characters collapsed to one space, trimmed.
///
/// Removing separators can occasionally expose a new composable sequence,
/// so the rule is applied until it reaches its fixed point.
pub fn normalize_text(raw: &str) -> String {
    let mut cur = normalize_once(raw);
    // converges in one or two rounds for any real input
    for _ in 0..4 {
        let next = normalize_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

#[derive(Deserialize)]
struct JsonlLine {
    id: u64,
    text: String,
}

fn parse_line(line: &str, format: CorpusFormat) -> Result<(u64, String), String> {
    match format {
        CorpusFormat::Jsonl => serde_json::from_str::<JsonlLine>(line)
            .map(|r| (r.id, r.text))
            .map_err(|e| e.to_string()),
        CorpusFormat::Tsv => {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| "missing tab separator".to_string())?;
            let id = id
                .trim()
                .parse::<u64>()
                .map_err(|e| format!("bad id {id:?}: {e}"))?;
            Ok((id, unquote_tsv(text)?))
        }
    }
}

fn unquote_tsv(field: &str) -> Result<String, String> {
    let Some(inner) = field.strip_prefix('"') else {
        return Ok(field.to_string());
    };
    let inner = inner
        .strip_suffix('"')
        .ok_or_else(|| "unterminated quoted caption".to_string())?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '"' {
            if chars.peek() == Some(&'"') {
                chars.next();
            } else {
                return Err("stray quote inside quoted caption".to_string());
            }
        }
        out.push(c);
    }
    Ok(out)
}

fn strip_eol(buf: &mut Vec<u8>) {
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    }
}

fn is_blank(buf: &[u8]) -> bool {
    buf.iter().all(u8::is_ascii_whitespace)
}

/// Single-consumer record iterator over a byte range of a corpus file.
///
/// Malformed lines are skipped; inspect [`CorpusReader::skipped`] afterwards
/// and call [`CorpusReader::finish`] to turn a fully empty scan into an error.
pub struct CorpusReader {
    path: PathBuf,
    reader: BufReader<File>,
    format: CorpusFormat,
    pos: u64,
    end: u64,
    buf: Vec<u8>,
    yielded: u64,
    skipped: Vec<SkippedRecord>,
    io_error: Option<io::Error>,
}

impl CorpusReader {
    fn open_range(path: &Path, format: CorpusFormat, start: u64, end: Option<u64>) -> Result<Self, CorpusError> {
        let mut file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let len = file.metadata().map_err(|e| CorpusError::io(path, e))?.len();
        file.seek(SeekFrom::Start(start))
            .map_err(|e| CorpusError::io(path, e))?;
        Ok(CorpusReader {
            path: path.to_path_buf(),
            reader: BufReader::with_capacity(1 << 16, file),
            format,
            pos: start,
            end: end.unwrap_or(len).min(len),
            buf: Vec::new(),
            yielded: 0,
            skipped: Vec::new(),
            io_error: None,
        })
    }

    pub fn skipped(&self) -> &[SkippedRecord] {
        &self.skipped
    }

    pub fn records_read(&self) -> u64 {
        self.yielded
    }

    /// Ends the scan; an unreadable tail or a scan that produced no
    /// records at all is reported as an error.
    pub fn finish(self) -> Result<ScanStats, CorpusError> {
        if let Some(e) = self.io_error {
            return Err(CorpusError::io(&self.path, e));
        }
        if self.yielded == 0 {
            return Err(CorpusError::Empty(self.path));
        }
        Ok(ScanStats {
            records: self.yielded,
            skipped: self.skipped,
        })
    }

    /// Like [`finish`](Self::finish) but an empty range is not an error.
    /// Used for individual shards, where emptiness is judged over the union.
    pub fn finish_partial(self) -> Result<ScanStats, CorpusError> {
        if let Some(e) = self.io_error {
            return Err(CorpusError::io(&self.path, e));
        }
        Ok(ScanStats {
            records: self.yielded,
            skipped: self.skipped,
        })
    }
}

impl Iterator for CorpusReader {
    type Item = CaptionRecord;

    fn next(&mut self) -> Option<CaptionRecord> {
        loop {
            if self.pos >= self.end || self.io_error.is_some() {
                return None;
            }
            self.buf.clear();
            let n = match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(n) => n as u64,
                Err(e) => {
                    self.io_error = Some(e);
                    return None;
                }
            };
            let offset = self.pos;
            self.pos += n;
            strip_eol(&mut self.buf);
            if is_blank(&self.buf) {
                continue;
            }
            let line = match std::str::from_utf8(&self.buf) {
                Ok(s) => s,
                Err(_) => {
                    self.skipped.push(SkippedRecord {
                        byte_offset: offset,
                        reason: SkipReason::InvalidUtf8,
                    });
                    continue;
                }
            };
            match parse_line(line, self.format) {
                Ok((id, text)) => {
                    self.yielded += 1;
                    return Some(CaptionRecord::new(id, text, offset));
                }
                Err(msg) => self.skipped.push(SkippedRecord {
                    byte_offset: offset,
                    reason: SkipReason::Malformed(msg),
                }),
            }
        }
    }
}

/// Outcome of a finished scan.
#[derive(Debug, Clone, Default)]
pub struct ScanStats {
    pub records: u64,
    pub skipped: Vec<SkippedRecord>,
}

/// Opens a whole corpus file for streaming.
pub fn open_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusReader, CorpusError> {
    CorpusReader::open_range(path.as_ref(), format, 0, None)
}

/// Reads an entire corpus into memory. Fails on an empty corpus.
pub fn read_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<(Vec<CaptionRecord>, ScanStats), CorpusError> {
    let mut reader = open_corpus(path, format)?;
    let records: Vec<_> = reader.by_ref().collect();
    let stats = reader.finish()?;
    Ok((records, stats))
}

/// A byte range of a corpus file that starts and ends on line boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusShard {
    pub path: PathBuf,
    pub start_byte: u64,
    pub end_byte: u64,
    /// Non-blank lines in the range (candidate records, parsable or not).
    pub record_count: u64,
}

impl CorpusShard {
    pub fn open(&self, format: CorpusFormat) -> Result<CorpusReader, CorpusError> {
        CorpusReader::open_range(&self.path, format, self.start_byte, Some(self.end_byte))
    }
}

/// Visits the start offset of every non-blank line.
fn for_each_record_line(path: &Path, mut f: impl FnMut(u64)) -> Result<u64, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut chunk = vec![0u8; 1 << 16];
    let mut pos = 0u64;
    let mut line_start = 0u64;
    let mut line_has_content = false;
    loop {
        let n = reader.read(&mut chunk).map_err(|e| CorpusError::io(path, e))?;
        if n == 0 {
            break;
        }
        for &b in &chunk[..n] {
            if b == b'\n' {
                if line_has_content {
                    f(line_start);
                }
                line_start = pos + 1;
                line_has_content = false;
            } else if !b.is_ascii_whitespace() {
                line_has_content = true;
            }
            pos += 1;
        }
    }
    if line_has_content {
        f(line_start);
    }
    Ok(pos)
}

/// Splits a corpus file into at most `n_shards` contiguous, record-aligned
/// byte ranges with record counts as even as possible.
///
/// Asking for more shards than there are records yields one shard per record.
pub fn shard_corpus(path: impl AsRef<Path>, n_shards: usize) -> Result<Vec<CorpusShard>, CorpusError> {
    let path = path.as_ref();
    if n_shards == 0 {
        return Err(CorpusError::ZeroShards);
    }
    let mut total = 0u64;
    let file_len = for_each_record_line(path, |_| total += 1)?;
    if total == 0 {
        return Ok(vec![CorpusShard {
            path: path.to_path_buf(),
            start_byte: 0,
            end_byte: file_len,
            record_count: 0,
        }]);
    }
    let n = (n_shards as u64).min(total);
    // shard i begins at record floor(i * total / n)
    let firsts: Vec<u64> = (0..n).map(|i| i * total / n).collect();
    let mut starts = Vec::with_capacity(n as usize);
    let mut idx = 0u64;
    let mut next = 0usize;
    for_each_record_line(path, |off| {
        if next < firsts.len() && firsts[next] == idx {
            starts.push(off);
            next += 1;
        }
        idx += 1;
    })?;
    // the first shard also owns any leading blank lines
    starts[0] = 0;
    let shards = (0..n as usize)
        .map(|i| {
            let end = starts.get(i + 1).copied().unwrap_or(file_len);
            let last = if i + 1 < n as usize { firsts[i + 1] } else { total };
            CorpusShard {
                path: path.to_path_buf(),
                start_byte: starts[i],
                end_byte: end,
                record_count: last - firsts[i],
            }
        })
        .collect();
    Ok(shards)
}
