use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tally_core::lexicon::{load_synonym_sets, SynonymSet, SynonymSource};
use tally_core::realprompt::{ClassifierWeights, ConceptPrompts, WeightRole};

use crate::util::{ensure, jitter, p, save_embeddings, tally, unit, write_lines, Outcome};

fn concept_lines(names: &[String]) -> Vec<String> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| json!({"concept_id": i, "name": n, "definition": format!("the thing called {n}")}).to_string())
        .collect()
}

fn set_lines(sets: &[SynonymSet]) -> Vec<String> {
    sets.iter().map(|s| serde_json::to_string(s).unwrap()).collect()
}

fn reduction(d: &Path) -> Result<String, String> {
    const DIM: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e);
    let names: Vec<String> = (0..30).map(|i| format!("concept {i}")).collect();
    let name_vecs: Vec<Vec<f64>> = names.iter().map(|_| unit(&mut rng, DIM)).collect();
    save_embeddings(&d.join("names.cemb"), DIM, names.iter().cloned().zip(name_vecs.iter().cloned()));
    write_lines(
        &d.join("names-sets.jsonl"),
        set_lines(
            &names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let mut s = SynonymSet::original(i as u32, n);
                    s.add(&format!("other {i}"), SynonymSource::Provider);
                    s
                })
                .collect::<Vec<_>>(),
        ),
    );
    write_lines(&d.join("bare.txt"), ["{}".to_string()]);
    tally(&[
        "prompt",
        "--synonyms",
        p(&d.join("names-sets.jsonl")),
        "--original-only",
        "--templates",
        p(&d.join("bare.txt")),
        "--out",
        p(&d.join("bare-prompts.jsonl")),
        "--embeddings",
        &format!("prompts={}", p(&d.join("names.cemb"))),
        "--weights-out",
        p(&d.join("wzs-bare.cemb")),
    ])?;
    let w = ClassifierWeights::<f64>::load(d.join("wzs-bare.cemb")).map_err(|e| e.to_string())?;
    ensure!(w.role == WeightRole::ZeroShot, "weights role {:?}", w.role);
    ensure!(w.n_classes() == names.len(), "{} rows for {} concepts", w.n_classes(), names.len());
    let mut worst = 0.0f64;
    for (i, &c) in w.concepts().iter().enumerate() {
        for (a, b) in w.row(i).iter().zip(&name_vecs[c as usize]) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-6, "W_zs differs from bare name embeddings by {worst:e}");
    Ok(format!("W_zs = names within {worst:.1e}"))
}

fn atm_switch(d: &Path) -> Result<String, String> {
    // "cash machine" is written ten times as often as "atm"
    let mut captions = Vec::new();
    for i in 0..10 {
        captions.push(format!("an ATM outside the bank {i}"));
    }
    for i in 0..100 {
        captions.push(format!("people queue at the cash machine, photo {i}"));
    }
    for i in 0..4 {
        captions.push(format!("a red cashpoint {i}"));
    }
    for i in 0..20 {
        captions.push(format!("a bank building downtown {i}"));
    }
    write_lines(
        &d.join("atm-corpus.jsonl"),
        captions.iter().enumerate().map(|(id, t)| json!({"id": id, "text": t}).to_string()),
    );
    let names = ["ATM".to_string(), "bank".to_string()];
    write_lines(&d.join("atm-concepts.jsonl"), concept_lines(&names));
    write_lines(
        &d.join("atm-provider.jsonl"),
        [
            json!({"name": "ATM", "synonyms": ["cash machine", "cashpoint"]}).to_string(),
            json!({"name": "bank", "synonyms": ["bank building"]}).to_string(),
        ],
    );
    tally(&[
        "synonyms",
        "--concepts",
        p(&d.join("atm-concepts.jsonl")),
        "--provider",
        &format!("file:{}", p(&d.join("atm-provider.jsonl"))),
        "--out",
        p(&d.join("atm-sets.jsonl")),
    ])?;
    tally(&[
        "scan",
        "--corpus",
        p(&d.join("atm-corpus.jsonl")),
        "--synonyms",
        p(&d.join("atm-sets.jsonl")),
        "--out",
        p(&d.join("atm-hits.jsonl")),
    ])?;
    tally(&[
        "freq",
        "--hits",
        p(&d.join("atm-hits.jsonl")),
        "--synonyms",
        p(&d.join("atm-sets.jsonl")),
        "--out",
        p(&d.join("atm-freq.csv")),
        "--synonym-out",
        p(&d.join("atm-synfreq.csv")),
    ])?;
    let summary = tally(&[
        "prompt",
        "--synonyms",
        p(&d.join("atm-sets.jsonl")),
        "--synonym-freq",
        p(&d.join("atm-synfreq.csv")),
        "--out",
        p(&d.join("atm-prompts.jsonl")),
        "--choices-out",
        p(&d.join("atm-choices.csv")),
    ])?;
    ensure!(summary["switched"] == 1, "expected exactly one switch: {summary}");

    let mut r = csv::Reader::from_path(d.join("atm-choices.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<(u32, String, String, u64)> = r.deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let atm = rows.iter().find(|r| r.0 == 0).ok_or("no choice row for ATM")?;
    ensure!(
        atm.1 == "atm" && atm.2 == "cash machine" && atm.3 == 100,
        "ATM choice recorded as {atm:?}"
    );
    let bank = rows.iter().find(|r| r.0 == 1).ok_or("no choice row for bank")?;
    ensure!(bank.1 == "bank" && bank.2 == "bank", "bank choice recorded as {bank:?}");

    let prompts = tally_core::jsonl::read_jsonl::<ConceptPrompts>(d.join("atm-prompts.jsonl")).map_err(|e| e.to_string())?;
    let atm_prompts = &prompts.iter().find(|c| c.concept_id == 0).ok_or("no ATM prompts")?.prompts;
    ensure!(
        atm_prompts.iter().all(|s| s.contains("cash machine") && !s.contains("atm")),
        "ATM prompts do not use the chosen synonym"
    );
    Ok(format!("atm -> cash machine (100 vs 10), {} prompts", atm_prompts.len()))
}

pub fn reduction_and_selection() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = reduction(dir.path())?;
    let b = atm_switch(dir.path())?;
    Ok(format!("{a}; {b}"))
}

const CLASSES: usize = 10;
const DIM: usize = 32;
const TEST_PER_CLASS: usize = 40;

pub fn filtering_necessity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1);
    let names: Vec<String> = (0..CLASSES).map(|i| format!("kind{i}")).collect();
    let t: Vec<Vec<f64>> = (0..CLASSES).map(|_| unit(&mut rng, DIM)).collect();

    // two genuine synonyms per class near their own name; class 0 also
    // gets a confusable one that sits next to class 1's name
    let confusable = "lookalike".to_string();
    let mut sets = Vec::new();
    let mut text_embs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut freq_rows = vec!["concept_id,synonym,raw,filtered".to_string()];
    for c in 0..CLASSES {
        let mut s = SynonymSet::original(c as u32, &names[c]);
        text_embs.insert(names[c].clone(), t[c].clone());
        freq_rows.push(format!("{c},{},10,10", names[c]));
        for j in 0..2 {
            let syn = format!("kind{c} variant{j}");
            s.add(&syn, SynonymSource::Provider);
            text_embs.insert(syn.clone(), jitter(&mut rng, &t[c], 0.1));
            freq_rows.push(format!("{c},{syn},5,5"));
        }
        if c == 0 {
            s.add(&confusable, SynonymSource::Provider);
            text_embs.insert(confusable.clone(), jitter(&mut rng, &t[1], 0.05));
            freq_rows.push(format!("0,{confusable},1000,1000"));
        }
        sets.push(s);
    }
    write_lines(&d.join("concepts.jsonl"), concept_lines(&names));
    write_lines(&d.join("sets.jsonl"), set_lines(&sets));
    write_lines(&d.join("synfreq.csv"), freq_rows);
    save_embeddings(&d.join("names.cemb"), DIM, names.iter().map(|n| (n.clone(), text_embs[n].clone())));
    save_embeddings(&d.join("text.cemb"), DIM, text_embs.clone());

    let summary = tally(&[
        "synonyms",
        "--concepts",
        p(&d.join("concepts.jsonl")),
        "--sets",
        p(&d.join("sets.jsonl")),
        "--embeddings",
        &format!("names={}", p(&d.join("names.cemb"))),
        "--embeddings",
        &format!("synonyms={}", p(&d.join("text.cemb"))),
        "--out",
        p(&d.join("sets-filtered.jsonl")),
    ])?;
    let filtered = load_synonym_sets(d.join("sets-filtered.jsonl")).map_err(|e| e.to_string())?;
    let mut dropped = Vec::new();
    for (before, after) in sets.iter().zip(&filtered) {
        ensure!(before.concept_id == after.concept_id, "filtered sets reordered");
        dropped.extend(before.synonyms.iter().filter(|s| !after.synonyms.contains(s)).cloned());
    }
    ensure!(dropped == vec![confusable.clone()], "filter dropped {dropped:?}, expected only {confusable:?}");
    ensure!(summary["removed_by_filter"] == 1, "summary disagrees: {summary}");

    // matched test set: images near their class name
    let mut test = Vec::new();
    let mut labels = vec!["key,concept_id".to_string()];
    for (c, tc) in t.iter().enumerate() {
        for i in 0..TEST_PER_CLASS {
            let key = format!("img{c}_{i}");
            test.push((key.clone(), jitter(&mut rng, tc, 0.25)));
            labels.push(format!("{key},{c}"));
        }
    }
    save_embeddings(&d.join("test.cemb"), DIM, test);
    write_lines(&d.join("labels.csv"), labels);

    let accuracy = |sets_file: &str, tag: &str| -> Result<f64, String> {
        let w = d.join(format!("wzs-{tag}.cemb"));
        tally(&[
            "prompt",
            "--synonyms",
            p(&d.join(sets_file)),
            "--synonym-freq",
            p(&d.join("synfreq.csv")),
            "--templates",
            "plain",
            "--out",
            p(&d.join(format!("prompts-{tag}.jsonl"))),
            "--embeddings",
            &format!("prompts={}", p(&d.join("text.cemb"))),
            "--weights-out",
            p(&w),
        ])?;
        let s = tally(&[
            "eval",
            "--weights",
            p(&w),
            "--embeddings",
            &format!("images={}", p(&d.join("test.cemb"))),
            "--labels",
            p(&d.join("labels.csv")),
        ])?;
        s["mean_per_class_accuracy"].as_f64().ok_or_else(|| format!("no accuracy in {s}"))
    };
    let without = accuracy("sets.jsonl", "unfiltered")?;
    let with = accuracy("sets-filtered.jsonl", "filtered")?;
    ensure!(with > without, "zero-shot accuracy {with} with filtering, {without} without");
    Ok(format!("dropped only {confusable:?}; accuracy {with:.3} filtered vs {without:.3} unfiltered"))
}
