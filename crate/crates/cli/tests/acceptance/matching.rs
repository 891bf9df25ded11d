use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tally_core::corpus::{CaptionRecord, CorpusFormat};
use tally_core::lexicon::{ConceptId, SynonymSet, SynonymSource};
use tally_core::matcher::{compile, scan, scan_file, scan_file_serial, MatchHit, MatchMode};

use crate::util::{ensure, pick, Outcome};

// Short tokens over a two-letter alphabet collide constantly, so patterns
// overlap, nest and appear as substrings of longer words.
const SEPARATORS: &[&str] = &[" ", " ", " ", ", ", "-", "  ", "! ", "/", " (", ") "];

fn token(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..=3);
    (0..len).map(|_| if rng.gen_bool(0.5) { 'a' } else { 'b' }).collect()
}

fn phrase(rng: &mut ChaCha8Rng, max_tokens: usize) -> String {
    let n = rng.gen_range(1..=max_tokens);
    (0..n).map(|_| token(rng)).collect::<Vec<_>>().join(" ")
}

fn caption(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..=10);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(pick(rng, SEPARATORS));
        }
        let t = token(rng);
        if rng.gen_bool(0.2) {
            s.push_str(&t.to_uppercase());
        } else {
            s.push_str(&t);
        }
    }
    s
}

fn synonym_sets(rng: &mut ChaCha8Rng, max_patterns: usize) -> Vec<SynonymSet> {
    let mut sets = Vec::new();
    let mut patterns = 0;
    let mut id: ConceptId = rng.gen_range(0..50);
    while patterns < max_patterns {
        let mut set = SynonymSet::original(id, &phrase(rng, 2));
        for _ in 0..rng.gen_range(0..=4) {
            if patterns + set.len() == max_patterns {
                break;
            }
            set.add(&phrase(rng, 3), SynonymSource::Provider);
        }
        patterns += set.len();
        sets.push(set);
        id += rng.gen_range(1..4);
    }
    sets
}

/// Quadratic reference: every (caption, concept, synonym) searched with
/// plain `str::find`, whole words found by padding both sides with spaces.
fn brute_force(records: &[CaptionRecord], sets: &[SynonymSet], mode: MatchMode) -> Vec<MatchHit> {
    let padded_syns: Vec<Vec<String>> = sets
        .iter()
        .map(|s| s.synonyms.iter().map(|syn| format!(" {syn} ")).collect())
        .collect();
    let mut hits = Vec::new();
    for r in records {
        let padded = format!(" {} ", r.norm_text);
        for (set, padded_set) in sets.iter().zip(&padded_syns) {
            for (syn, padded_syn) in set.synonyms.iter().zip(padded_set) {
                let start = match mode {
                    MatchMode::WholeWord => padded.find(padded_syn.as_str()),
                    MatchMode::Partial => r.norm_text.find(syn.as_str()),
                };
                if let Some(start) = start {
                    hits.push(MatchHit {
                        caption_id: r.id,
                        concept_id: set.concept_id,
                        synonym: syn.clone(),
                        start,
                        end: start + syn.len(),
                    });
                }
            }
        }
    }
    hits
}

type Tallies = (BTreeMap<ConceptId, u64>, BTreeMap<(ConceptId, String), u64>);

fn tally_hits(hits: &[MatchHit], sets: &[SynonymSet]) -> Tallies {
    let mut concepts: BTreeMap<ConceptId, u64> = sets.iter().map(|s| (s.concept_id, 0)).collect();
    let mut synonyms = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for h in hits {
        if seen.insert((h.caption_id, h.concept_id)) {
            *concepts.get_mut(&h.concept_id).unwrap() += 1;
        }
        *synonyms.entry((h.concept_id, h.synonym.clone())).or_insert(0) += 1;
    }
    (concepts, synonyms)
}

pub fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a1c);
    let (mut total_hits, mut total_records, mut max_patterns) = (0usize, 0usize, 0usize);
    for trial in 0..200 {
        // the first two trials run at the size limits, the rest log-uniform
        let (n_records, n_patterns) = if trial < 2 {
            (10_000, 1_000)
        } else {
            (
                10f64.powf(rng.gen_range(0.0..4.0)).round() as usize,
                10f64.powf(rng.gen_range(0.0..3.0)).round() as usize,
            )
        };
        let mode = if trial % 2 == 0 { MatchMode::WholeWord } else { MatchMode::Partial };
        let sets = synonym_sets(&mut rng, n_patterns.max(1));
        let records: Vec<CaptionRecord> = (0..n_records)
            .map(|i| CaptionRecord::new(i as u64 * 3 + 1, caption(&mut rng), 0))
            .collect();

        let automaton = compile(&sets, mode).map_err(|e| e.to_string())?;
        let out = scan(&records, &automaton);
        let expected = brute_force(&records, &sets, mode);
        if out.hits != expected {
            let first = out.hits.iter().zip(&expected).position(|(a, b)| a != b);
            return Err(format!(
                "trial {trial} ({mode:?}): {} hits vs oracle {}, first difference at {first:?}",
                out.hits.len(),
                expected.len()
            ));
        }
        let (concepts, synonyms) = tally_hits(&expected, &sets);
        for (&c, &n) in &concepts {
            let got = out.table.get(c);
            ensure!(got.raw == n && got.filtered == n, "trial {trial}: concept {c} counted {got:?}, oracle {n}");
        }
        ensure!(out.table.len() == concepts.len(), "trial {trial}: table has {} concepts", out.table.len());
        let mut got_syn = BTreeMap::new();
        for (&c, per) in &out.synonyms.counts {
            for (s, n) in per {
                ensure!(n.raw == n.filtered, "trial {trial}: synonym counts differ before judging");
                if n.raw > 0 {
                    got_syn.insert((c, s.clone()), n.raw);
                }
            }
        }
        ensure!(got_syn == synonyms, "trial {trial}: synonym counts differ from oracle");
        total_hits += expected.len();
        total_records += n_records;
        max_patterns = max_patterns.max(automaton.pattern_count());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s, limit 60 s");
    Ok(format!(
        "200 trials, {total_records} records, up to {max_patterns} patterns, {total_hits} hits all equal"
    ))
}

fn corpus_file(rng: &mut ChaCha8Rng, format: CorpusFormat) -> (tempfile::NamedTempFile, usize) {
    let n = rng.gen_range(1..=3_000);
    let mut lines = Vec::with_capacity(n);
    let mut bad = 0;
    for i in 0..n {
        let text = caption(rng);
        let line = match rng.gen_range(0..40) {
            0 => String::new(),
            1 => {
                bad += 1;
                "{ not a record".to_string()
            }
            2 => {
                bad += 1;
                "no separator here".to_string()
            }
            _ => match format {
                CorpusFormat::Jsonl => serde_json::json!({"id": i, "text": text}).to_string(),
                CorpusFormat::Tsv if rng.gen_bool(0.1) => format!("{i}\t\"{}\"", text.replace('"', "\"\"")),
                CorpusFormat::Tsv => format!("{i}\t{text}"),
            },
        };
        lines.push(line);
    }
    let f = tempfile::NamedTempFile::new().expect("temp file");
    let mut body = lines.join("\n");
    if rng.gen_bool(0.5) {
        body.push('\n');
    }
    std::fs::write(f.path(), body).expect("write corpus");
    (f, bad)
}

pub fn shard_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a4d);
    let mut skipped_total = 0;
    for pair in 0..50 {
        let format = if pair % 2 == 0 { CorpusFormat::Jsonl } else { CorpusFormat::Tsv };
        let (file, _) = corpus_file(&mut rng, format);
        let threads = rng.gen_range(1..=16);
        let mode = if rng.gen_bool(0.5) { MatchMode::WholeWord } else { MatchMode::Partial };
        let n_patterns = rng.gen_range(1..=200);
        let sets = synonym_sets(&mut rng, n_patterns);
        let automaton = compile(&sets, mode).map_err(|e| e.to_string())?;

        let serial = scan_file_serial(file.path(), format, &automaton).map_err(|e| e.to_string())?;
        let parallel = scan_file(file.path(), format, &automaton, threads).map_err(|e| e.to_string())?;
        ensure!(parallel.hits == serial.hits, "pair {pair} ({threads} threads): hits differ");
        ensure!(parallel.table == serial.table, "pair {pair} ({threads} threads): concept table differs");
        ensure!(parallel.synonyms == serial.synonyms, "pair {pair} ({threads} threads): synonym table differs");
        ensure!(parallel.records == serial.records, "pair {pair}: {} vs {} records", parallel.records, serial.records);
        ensure!(parallel.skipped == serial.skipped, "pair {pair} ({threads} threads): skipped lines differ");
        skipped_total += serial.skipped.len();
    }
    Ok(format!("50 corpora, 1..=16 threads, {skipped_total} malformed lines skipped identically"))
}
