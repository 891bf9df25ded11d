use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::util::{ensure, p, pearson_oracle, tally, write_lines, Outcome};

const CONCEPTS: usize = 1000;
const ZIPF_S: f64 = 1.2;
const TOP_COUNT: f64 = 1e6;
const SLOPE: f64 = 0.5;
const OFFSET: f64 = -5.0;
const NOISE: f64 = 0.02;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())
}

pub fn zipf_table() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(0x21bf);
    let noise = Normal::new(0.0, NOISE).unwrap();

    // rank r gets N / r^s captions; ranks are dealt to ids at random so
    // frequency order is unrelated to id order
    let mut ranks: Vec<usize> = (1..=CONCEPTS).collect();
    ranks.shuffle(&mut rng);
    let mut counts = Vec::with_capacity(CONCEPTS);
    let mut accs = Vec::with_capacity(CONCEPTS);
    for &r in &ranks {
        let n = (TOP_COUNT / (r as f64).powf(ZIPF_S)).round() as u64;
        let a = (sigmoid(SLOPE * (n as f64).ln_1p() + OFFSET) + noise.sample(&mut rng)).clamp(0.0, 1.0);
        counts.push(n);
        accs.push(a);
    }
    write_lines(
        &d.join("freq.csv"),
        std::iter::once("concept_id,name,raw,filtered".to_string())
            .chain(counts.iter().enumerate().map(|(id, n)| format!("{id},c{id},{n},{n}"))),
    );
    write_lines(
        &d.join("acc.csv"),
        std::iter::once("concept_id,accuracy".to_string())
            .chain(accs.iter().enumerate().map(|(id, a)| format!("{id},{a:?}"))),
    );
    let out = d.join("analysis");
    tally(&["analyze", "--freq", p(&d.join("freq.csv")), "--acc", p(&d.join("acc.csv")), "--out-dir", p(&out)])?;

    // (a) split sizes
    let split: Vec<(u32, String)> = read_rows(&out.join("split.csv"))?;
    let tail: Vec<u32> = split.iter().filter(|(_, g)| g == "tail").map(|(c, _)| *c).collect();
    let head = split.iter().filter(|(_, g)| g == "head").count();
    ensure!(head == 800 && tail.len() == 200, "split {head}/{}, expected 800/200", tail.len());
    let max_tail = tail.iter().map(|&c| counts[c as usize]).max().unwrap();
    let min_head = split
        .iter()
        .filter(|(_, g)| g == "head")
        .map(|(c, _)| counts[*c as usize])
        .min()
        .unwrap();
    ensure!(max_tail <= min_head, "tail holds count {max_tail} above head minimum {min_head}");

    // (b) bins
    let bins: Vec<(String, f64, usize)> = read_rows(&out.join("bins.csv"))?;
    ensure!(bins.iter().map(|b| b.2).sum::<usize>() == CONCEPTS, "bins do not cover every concept");
    for w in bins.windows(2) {
        ensure!(w[1].1 >= w[0].1, "bin {} mean {} falls below bin {} mean {}", w[1].0, w[1].1, w[0].0, w[0].1);
    }

    // (c) pearson against the textbook formula
    let corr: Vec<(String, f64, usize)> = read_rows(&out.join("correlation.csv"))?;
    let got = corr.iter().find(|r| r.0 == "pearson").ok_or("no pearson row")?.1;
    let xs: Vec<f64> = counts.iter().map(|&n| (n as f64).ln_1p()).collect();
    let want = pearson_oracle(&xs, &accs);
    ensure!((got - want).abs() <= 1e-12, "pearson {got} vs direct formula {want}");
    ensure!(got > 0.9, "pearson {got} does not exceed 0.9");

    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s, limit 5 s");
    Ok(format!(
        "split 800/200, {} monotone bins, pearson {got:.6} (|diff| {:.1e})",
        bins.len(),
        (got - want).abs()
    ))
}
