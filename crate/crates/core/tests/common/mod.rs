#![allow(dead_code)]

use twinlab_core::rng::{domain, StreamRng, Streams};

pub const SEED: u64 = 20240601;

pub fn rng(label: &str) -> StreamRng {
    Streams::new(SEED, domain(label)).frame(0)
}

/// Sample mean with its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Unbiased sample variance with the large-sample standard error
/// √((m₄ − v²)/n).
pub fn var_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v) / n).sqrt())
}

pub fn assert_within(label: &str, value: f64, se: f64, target: f64, k: f64) {
    assert!(
        (value - target).abs() <= k * se,
        "{label}: {value} vs {target}, z = {:.2}",
        (value - target) / se
    );
}

pub fn to_f64(x: &[u64]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
