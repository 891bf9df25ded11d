use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;
use tally_core::embeddings::EmbeddingMatrix;

pub type Outcome = Result<String, String>;

/// Fails the criterion with a formatted message.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;

pub fn tally(args: &[&str]) -> Result<Value, String> {
    tally_env(args, &[])
}

/// Runs the CLI binary; returns the parsed stdout summary on exit 0.
pub fn tally_env(args: &[&str], env: &[(&str, &str)]) -> Result<Value, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tally"));
    cmd.args(args).env_remove("TALLY_CACHE_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "tally {} exited {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.trim()).map_err(|e| format!("summary is not JSON ({e}): {stdout}"))
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

pub fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(n > 0.0);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    normalized(gaussian(rng, dim, 1.0))
}

/// `normalize(base + sigma * noise)`.
pub fn jitter(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f64> {
    let n = gaussian(rng, base.len(), sigma);
    normalized(base.iter().zip(n).map(|(a, b)| a + b).collect())
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn save_embeddings(path: &Path, dim: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> PathBuf {
    EmbeddingMatrix::from_rows(dim, rows, true)
        .expect("valid rows")
        .save(path)
        .expect("write embeddings");
    path.to_path_buf()
}

pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let mut s = String::new();
    for l in lines {
        s.push_str(&l);
        s.push('\n');
    }
    std::fs::write(path, s).expect("write fixture");
}

pub fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.gen_range(0..xs.len())]
}

/// Spearman correlation by the textbook route: average ranks, then
/// Pearson's formula on the ranks.
pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; v.len()];
        for i in 0..v.len() {
            let less = v.iter().filter(|&&x| x < v[i]).count() as f64;
            let equal = v.iter().filter(|&&x| x == v[i]).count() as f64;
            r[i] = less + (equal + 1.0) / 2.0;
        }
        r
    }
    pearson_oracle(&ranks(xs), &ranks(ys))
}

pub fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
