//! Workloads shared by the criterion benches.

use aeric_core::eval::ScoredRow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` rows, roughly half positive, positives shifted up by one.
pub fn scored_rows(n: usize, seed: u64) -> Vec<ScoredRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = rng.gen_bool(0.5);
            let score = rng.gen_range(-2.0..2.0) + if label { 1.0 } else { 0.0 };
            ScoredRow::new(format!("r{i}"), score, label)
        })
        .collect()
}

/// Safe-side maxima and harm-window maxima for threshold selection.
pub fn calibration_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let safe = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let harm = (0..n).map(|_| rng.gen_range(-1.0..3.0)).collect();
    (safe, harm)
}
