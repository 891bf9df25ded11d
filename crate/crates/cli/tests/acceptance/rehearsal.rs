//! Synthetic world for the end-to-end run.
//!
//! * 50 pseudo-word concepts; concept of frequency rank r appears in
//!   `TOP / r` of the 100 000 captions.
//! * Each concept has a name and two synonyms. For a third of the concepts a
//!   synonym dominates and the name is poorly embedded, so REAL-Prompt
//!   should switch.
//! * Three concepts get a confusable synonym that is literally another
//!   concept's name; only embedding-based filtering removes it.
//! * Eight concepts also occur as "<name> reef" captions that refer to
//!   something else; the stub judge blocklists them.
//! * Images of concept c are `normalize(t_c + gamma_c g_c + noise)` with a
//!   class-specific gap `g_c` that grows as planted frequency shrinks, so
//!   zero-shot separability increases with frequency.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tally_core::realprompt::OPENAI_IMAGENET_TEMPLATES;

use crate::util::{add, ensure, gaussian, jitter, normalized, p, save_embeddings, spearman_oracle, tally, unit, write_lines, Outcome};

const CONCEPTS: usize = 50;
const CAPTIONS: usize = 100_000;
const TOP: f64 = 5_500.0;
const DIM: usize = 64;
const TEST_PER_CLASS: usize = 30;
const DOMINANT_EVERY: usize = 3;
const CONFUSABLE: usize = 3;
const AMBIGUOUS: usize = 8;
const GAP_HEAD: f64 = 0.2;
const GAP_TAIL: f64 = 3.0;
const IMAGE_NOISE: f64 = 0.05;

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "zu", "re", "tov", "pe", "shi", "na", "vu", "gor", "dex", "ul", "fa"];
const FILLER: &[&str] = &[
    "a", "photo", "of", "the", "on", "with", "near", "in", "at", "my", "old", "new", "big", "small", "red", "blue",
    "outdoor", "indoor", "view", "day", "night", "picture", "close", "up",
];

struct Concept {
    name: String,
    synonyms: [String; 2],
    planted: u64,
    dominant: bool,
    confusable: Option<usize>,
    ambiguous: u64,
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(2..=3);
        let w: String = (0..k).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn world(rng: &mut ChaCha8Rng) -> Vec<Concept> {
    let vocab = words(rng, CONCEPTS * 3);
    let mut ranks: Vec<usize> = (1..=CONCEPTS).collect();
    ranks.shuffle(rng);
    let mut concepts: Vec<Concept> = (0..CONCEPTS)
        .map(|c| Concept {
            name: vocab[3 * c].clone(),
            synonyms: [vocab[3 * c + 1].clone(), vocab[3 * c + 2].clone()],
            planted: (TOP / ranks[c] as f64).round() as u64,
            dominant: c % DOMINANT_EVERY == 0,
            confusable: None,
            ambiguous: 0,
        })
        .collect();
    let mut ids: Vec<usize> = (0..CONCEPTS).collect();
    ids.shuffle(rng);
    for w in ids[..2 * CONFUSABLE].chunks(2) {
        concepts[w[0]].confusable = Some(w[1]);
    }
    for &c in &ids[2 * CONFUSABLE..2 * CONFUSABLE + AMBIGUOUS] {
        concepts[c].ambiguous = (concepts[c].planted as f64 * 0.3).ceil() as u64;
    }
    concepts
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| FILLER.choose(rng).unwrap().to_string()).collect()
}

/// A caption with `mention` inserted among filler words.
fn caption(rng: &mut ChaCha8Rng, mention: &str) -> String {
    let n = rng.gen_range(2..=7);
    let mut toks = filler(rng, n);
    let at = rng.gen_range(0..=toks.len());
    toks.insert(at, mention.to_string());
    let s = toks.join(" ");
    if rng.gen_bool(0.3) {
        let mut cs = s.chars();
        cs.next().map(|f| f.to_uppercase().collect::<String>() + cs.as_str()).unwrap_or_default() + "."
    } else {
        s
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Concept(usize),
    Ambiguous,
    Filler,
}

struct Embeddings {
    names: BTreeMap<String, Vec<f64>>,
    synonyms: BTreeMap<String, Vec<f64>>,
    t: Vec<Vec<f64>>,
    gap: Vec<Vec<f64>>,
    gamma: Vec<f64>,
}

fn embeddings(rng: &mut ChaCha8Rng, concepts: &[Concept]) -> Embeddings {
    let t: Vec<Vec<f64>> = concepts.iter().map(|_| unit(rng, DIM)).collect();
    let gap: Vec<Vec<f64>> = concepts.iter().map(|_| unit(rng, DIM)).collect();
    let (lo, hi) = concepts
        .iter()
        .map(|c| (c.planted as f64).ln())
        .fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
    let gamma = concepts
        .iter()
        .map(|c| {
            let z = ((c.planted as f64).ln() - lo) / (hi - lo);
            GAP_TAIL + (GAP_HEAD - GAP_TAIL) * z
        })
        .collect();
    let mut names = BTreeMap::new();
    let mut synonyms = BTreeMap::new();
    for (c, k) in concepts.iter().enumerate() {
        // a name the model rarely saw embeds poorly
        let name_noise = if k.dominant { 0.15 } else { 0.04 };
        names.insert(k.name.clone(), jitter(rng, &t[c], name_noise));
        for s in &k.synonyms {
            synonyms.insert(s.clone(), jitter(rng, &t[c], 0.04));
        }
    }
    for k in concepts {
        if let Some(f) = k.confusable {
            let foreign = concepts[f].name.clone();
            synonyms.insert(foreign.clone(), names[&foreign].clone());
        }
    }
    Embeddings { names, synonyms, t, gap, gamma }
}

fn image(rng: &mut ChaCha8Rng, e: &Embeddings, c: usize) -> Vec<f64> {
    let shifted: Vec<f64> = e.t[c].iter().zip(&e.gap[c]).map(|(a, g)| a + e.gamma[c] * g).collect();
    normalized(add(&shifted, &gaussian(rng, DIM, IMAGE_NOISE)))
}

fn read_acc(path: &Path) -> Result<BTreeMap<u32, f64>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize::<(u32, f64)>()
        .map(|row| row.map_err(|e| e.to_string()))
        .collect()
}

fn mean_over(acc: &BTreeMap<u32, f64>, ids: &[u32]) -> f64 {
    ids.iter().map(|c| acc[c]).sum::<f64>() / ids.len() as f64
}

pub fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let run = d.join("run");
    let mut rng = ChaCha8Rng::seed_from_u64(0x10e2e);
    let concepts = world(&mut rng);
    let emb = embeddings(&mut rng, &concepts);

    // corpus
    let mut kinds: Vec<(Kind, String)> = Vec::with_capacity(CAPTIONS);
    for (c, k) in concepts.iter().enumerate() {
        for _ in 0..k.planted {
            let u: f64 = rng.gen();
            let (first, second) = if k.dominant { (0.2, 0.9) } else { (0.7, 0.9) };
            let form = if u < first {
                &k.name
            } else if u < second {
                &k.synonyms[0]
            } else {
                &k.synonyms[1]
            };
            kinds.push((Kind::Concept(c), caption(&mut rng, form)));
        }
        for _ in 0..k.ambiguous {
            kinds.push((Kind::Ambiguous, caption(&mut rng, &format!("{} reef", k.name))));
        }
    }
    ensure!(kinds.len() < CAPTIONS, "planted {} captions, more than the corpus", kinds.len());
    while kinds.len() < CAPTIONS {
        let n = rng.gen_range(3..=9);
        kinds.push((Kind::Filler, filler(&mut rng, n).join(" ")));
    }
    kinds.shuffle(&mut rng);
    write_lines(
        &d.join("corpus.jsonl"),
        kinds.iter().enumerate().map(|(id, (_, t))| json!({"id": id, "text": t}).to_string()),
    );

    // lexicon inputs
    write_lines(
        &d.join("concepts.jsonl"),
        concepts.iter().enumerate().map(|(c, k)| {
            json!({"concept_id": c, "name": k.name, "definition": format!("the object known as {}", k.name)}).to_string()
        }),
    );
    write_lines(
        &d.join("provider.jsonl"),
        concepts.iter().map(|k| {
            let mut syn: Vec<&str> = k.synonyms.iter().map(String::as_str).collect();
            if let Some(f) = k.confusable {
                syn.push(&concepts[f].name);
            }
            json!({"name": k.name, "synonyms": syn}).to_string()
        }),
    );
    write_lines(
        &d.join("blocklist.jsonl"),
        concepts
            .iter()
            .filter(|k| k.ambiguous > 0)
            .map(|k| json!({"name": k.name, "reject_phrases": [format!("{} reef", k.name)]}).to_string()),
    );
    save_embeddings(&d.join("names.cemb"), DIM, emb.names.clone());
    save_embeddings(&d.join("synonyms.cemb"), DIM, emb.synonyms.clone());

    // prompt embeddings for every template and every surface form
    let template_dirs: Vec<Vec<f64>> = OPENAI_IMAGENET_TEMPLATES.iter().map(|_| unit(&mut rng, DIM)).collect();
    let mut prompt_rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (form, e) in emb.names.iter().chain(emb.synonyms.iter()) {
        if !seen.insert(form.clone()) {
            continue;
        }
        for (tpl, dir_t) in OPENAI_IMAGENET_TEMPLATES.iter().zip(&template_dirs) {
            let v: Vec<f64> = e.iter().zip(dir_t).map(|(a, b)| a + 0.3 * b).collect();
            prompt_rows.push((tpl.replacen("{}", form, 1), normalized(add(&v, &gaussian(&mut rng, DIM, 0.01)))));
        }
    }
    save_embeddings(&d.join("prompts.cemb"), DIM, prompt_rows);

    // caption and image embeddings for every caption that mentions something
    let mut caption_rows = Vec::new();
    let mut image_rows = Vec::new();
    for (id, (kind, _)) in kinds.iter().enumerate() {
        match *kind {
            Kind::Concept(c) => {
                caption_rows.push((id.to_string(), jitter(&mut rng, &emb.t[c], 0.1)));
                image_rows.push((id.to_string(), image(&mut rng, &emb, c)));
            }
            Kind::Ambiguous => {
                caption_rows.push((id.to_string(), unit(&mut rng, DIM)));
                image_rows.push((id.to_string(), unit(&mut rng, DIM)));
            }
            Kind::Filler => {}
        }
    }
    save_embeddings(&d.join("captions.cemb"), DIM, caption_rows);
    save_embeddings(&d.join("images.cemb"), DIM, image_rows);

    let mut test_rows = Vec::new();
    let mut labels = vec!["key,concept_id".to_string()];
    for c in 0..CONCEPTS {
        for i in 0..TEST_PER_CLASS {
            let key = format!("test{c}_{i}");
            test_rows.push((key.clone(), image(&mut rng, &emb, c)));
            labels.push(format!("{key},{c}"));
        }
    }
    save_embeddings(&d.join("test.cemb"), DIM, test_rows);
    write_lines(&d.join("test-labels.csv"), labels);
    let setup = start.elapsed().as_secs_f64();

    // the pipeline
    let emb_arg = |role: &str, file: &str| format!("{role}={}", p(&d.join(file)));
    let syn = tally(&[
        "synonyms",
        "--concepts",
        p(&d.join("concepts.jsonl")),
        "--provider",
        &format!("file:{}", p(&d.join("provider.jsonl"))),
        "--embeddings",
        &emb_arg("names", "names.cemb"),
        "--embeddings",
        &emb_arg("synonyms", "synonyms.cemb"),
        "--out",
        p(&d.join("sets.jsonl")),
    ])?;
    ensure!(syn["removed_by_filter"] == CONFUSABLE, "filter removed {} synonyms, expected {CONFUSABLE}", syn["removed_by_filter"]);
    tally(&[
        "scan",
        "--corpus",
        p(&d.join("corpus.jsonl")),
        "--synonyms",
        p(&d.join("sets.jsonl")),
        "--threads",
        "4",
        "--out",
        p(&d.join("hits.jsonl")),
    ])?;
    tally(&[
        "judge",
        "--hits",
        p(&d.join("hits.jsonl")),
        "--corpus",
        p(&d.join("corpus.jsonl")),
        "--concepts",
        p(&d.join("concepts.jsonl")),
        "--judge",
        &format!("stub:{}", p(&d.join("blocklist.jsonl"))),
        "--threads",
        "4",
        "--out",
        p(&d.join("verdicts.jsonl")),
    ])?;
    std::fs::create_dir_all(&run).map_err(|e| e.to_string())?;
    tally(&[
        "freq",
        "--hits",
        p(&d.join("hits.jsonl")),
        "--verdicts",
        p(&d.join("verdicts.jsonl")),
        "--concepts",
        p(&d.join("concepts.jsonl")),
        "--synonyms",
        p(&d.join("sets.jsonl")),
        "--out",
        p(&run.join("freq.csv")),
        "--synonym-out",
        p(&d.join("synonym-freq.csv")),
    ])?;
    let prompt = tally(&[
        "prompt",
        "--synonyms",
        p(&d.join("sets.jsonl")),
        "--synonym-freq",
        p(&d.join("synonym-freq.csv")),
        "--out",
        p(&d.join("prompts-real.jsonl")),
        "--choices-out",
        p(&d.join("choices.csv")),
        "--embeddings",
        &emb_arg("prompts", "prompts.cemb"),
        "--weights-out",
        p(&d.join("wzs-real.cemb")),
    ])?;
    tally(&[
        "prompt",
        "--synonyms",
        p(&d.join("sets.jsonl")),
        "--original-only",
        "--out",
        p(&d.join("prompts-original.jsonl")),
        "--embeddings",
        &emb_arg("prompts", "prompts.cemb"),
        "--weights-out",
        p(&d.join("wzs-original.cemb")),
    ])?;
    tally(&[
        "retrieve",
        "--hits",
        p(&d.join("hits.jsonl")),
        "--verdicts",
        p(&d.join("verdicts.jsonl")),
        "--synonyms",
        p(&d.join("sets.jsonl")),
        "--embeddings",
        &emb_arg("captions", "captions.cemb"),
        "--embeddings",
        &emb_arg("synonyms", "synonyms.cemb"),
        "--embeddings",
        &emb_arg("names", "names.cemb"),
        "--k",
        "100",
        "--out",
        p(&d.join("retrieval.jsonl")),
    ])?;
    let trained = tally(&[
        "train",
        "--retrieval",
        p(&d.join("retrieval.jsonl")),
        "--embeddings",
        &emb_arg("images", "images.cemb"),
        "--embeddings",
        &emb_arg("synonyms", "synonyms.cemb"),
        "--embeddings",
        &emb_arg("names", "names.cemb"),
        "--synonyms",
        p(&d.join("sets.jsonl")),
        "--init",
        p(&d.join("wzs-real.cemb")),
        "--out",
        p(&d.join("w.cemb")),
        "--ensemble-out",
        p(&d.join("w-ensemble.cemb")),
        "--losses-out",
        p(&d.join("losses.csv")),
    ])?;
    ensure!(trained["missing_images"] == 0, "retrieved captions without images: {trained}");
    for (model, weights) in [("zs", "wzs-original.cemb"), ("real_prompt", "wzs-real.cemb"), ("real_linear", "w-ensemble.cemb")] {
        tally(&[
            "eval",
            "--weights",
            p(&d.join(weights)),
            "--embeddings",
            &emb_arg("images", "test.cemb"),
            "--labels",
            p(&d.join("test-labels.csv")),
            "--out",
            p(&run.join(format!("acc_{model}.csv"))),
        ])?;
    }
    tally(&[
        "analyze",
        "--freq",
        p(&run.join("freq.csv")),
        "--acc",
        p(&run.join("acc_zs.csv")),
        "--out-dir",
        p(&run),
    ])?;
    tally(&["report", "--run-dir", p(&run)])?;
    let elapsed = start.elapsed().as_secs_f64();

    // (a) measured filtered frequency against planted frequency
    let mut r = csv::Reader::from_path(run.join("freq.csv")).map_err(|e| e.to_string())?;
    let measured: HashMap<u32, u64> = r
        .deserialize::<(u32, String, u64, u64)>()
        .map(|row| row.map(|(c, _, _, f)| (c, f)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let xs: Vec<f64> = (0..CONCEPTS).map(|c| measured[&(c as u32)] as f64).collect();
    let ys: Vec<f64> = concepts.iter().map(|k| k.planted as f64).collect();
    let rho = spearman_oracle(&xs, &ys);
    ensure!(rho >= 0.95, "spearman(measured, planted) = {rho:.4}");

    // (b) accuracy gains, split by the measured head/tail partition
    let mut r = csv::Reader::from_path(run.join("split.csv")).map_err(|e| e.to_string())?;
    let split: Vec<(u32, String)> = r.deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let head: Vec<u32> = split.iter().filter(|s| s.1 == "head").map(|s| s.0).collect();
    let tail: Vec<u32> = split.iter().filter(|s| s.1 == "tail").map(|s| s.0).collect();
    let zs = read_acc(&run.join("acc_zs.csv"))?;
    let init = read_acc(&run.join("acc_real_prompt.csv"))?;
    let linear = read_acc(&run.join("acc_real_linear.csv"))?;
    let all: Vec<u32> = (0..CONCEPTS as u32).collect();
    let gain = |ids: &[u32]| mean_over(&linear, ids) - mean_over(&init, ids);
    let (d_mean, d_head, d_tail) = (gain(&all), gain(&head), gain(&tail));
    ensure!(
        mean_over(&linear, &all) > mean_over(&zs, &all) && d_mean > 0.0,
        "REAL-Linear mean {:.4} vs W_zs {:.4} (original names) and {:.4} (its init)",
        mean_over(&linear, &all),
        mean_over(&zs, &all),
        mean_over(&init, &all)
    );
    ensure!(d_head >= 0.0 && d_tail >= 0.0, "gains head {d_head:.4}, tail {d_tail:.4}; both must be non-negative");
    ensure!(d_tail >= d_head, "tail gain {d_tail:.4} below head gain {d_head:.4}");
    ensure!(elapsed < 600.0, "pipeline took {elapsed:.0} s, limit 600 s");

    Ok(format!(
        "spearman {rho:.3}; {} REAL-Prompt switches; mean acc zs {:.3}, W_zs init {:.3}, REAL-Linear {:.3}; gain head {d_head:+.3}, tail {d_tail:+.3}; setup {setup:.0} s, pipeline {:.0} s",
        prompt["switched"],
        mean_over(&zs, &all),
        mean_over(&init, &all),
        mean_over(&linear, &all),
        elapsed - setup
    ))
}
