//! Deterministic inputs shared by the benchmarks.

use litho_core::config::LithoConfig;
use litho_core::geometry::{gen_contact_array, Clip};
use litho_core::rng::SplitMix64;
use litho_core::select::FeatureMatrix;

/// A 5x5 array at twice the minimum pitch on the N10-like rule.
pub fn array_clip(cfg: &LithoConfig) -> Clip {
    let step = 2 * cfg.rule.min_pitch();
    gen_contact_array(&cfg.rule, 5, 5, step, step).expect("5x5 array fits the clip")
}

/// `len` values uniform in `[-1, 1)`.
pub fn uniform(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = SplitMix64::new(seed);
    (0..len).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
}

/// `n` points in `dim` dimensions scattered around a few centers.
pub fn clustered_points(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = SplitMix64::new(seed);
    let centers: Vec<Vec<f64>> = (0..8).map(|_| (0..dim).map(|_| rng.uniform(-4.0, 4.0)).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| centers[i % centers.len()].iter().map(|c| c + 0.5 * rng.normal()).collect())
        .collect();
    FeatureMatrix::new(&rows).expect("rows share one dimension")
}
