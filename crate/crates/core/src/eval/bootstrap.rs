use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auprc_sorted, auroc_sorted, Metric, ScoredRow};
use super::EvalError;
use crate::linalg::percentile_sorted;

pub const DEFAULT_N_BOOT: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// Redraws allowed for a replicate that lost a class before it is skipped.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_boot: usize,
    pub used: usize,
    pub skipped: usize,
}

/// Metric values of every admissible replicate, in replicate order.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicates {
    pub values: Vec<f64>,
    pub skipped: usize,
}

/// Replicate `i` draws from its own ChaCha stream `i` under `seed`, so the
/// result does not depend on evaluation order.
pub fn bootstrap_replicates(
    rows: &[ScoredRow],
    metric: Metric,
    n_boot: usize,
    seed: u64,
) -> Result<Replicates, EvalError> {
    metric.compute(rows)?;
    let n = rows.len();
    let mut values = Vec::with_capacity(n_boot);
    let mut skipped = 0;
    let mut sample: Vec<(f64, bool)> = Vec::with_capacity(n);
    for replicate in 0..n_boot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate as u64);
        let mut accepted = false;
        for _ in 0..=MAX_REDRAWS {
            sample.clear();
            sample.extend((0..n).map(|_| {
                let r = &rows[rng.gen_range(0..n)];
                (r.score, r.label)
            }));
            let pos = sample.iter().filter(|s| s.1).count();
            if metric.admissible(pos, n) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            skipped += 1;
            continue;
        }
        sample.sort_by(|a, b| a.0.total_cmp(&b.0));
        values.push(match metric {
            Metric::Auroc => auroc_sorted(&sample)?,
            Metric::Auprc => auprc_sorted(&sample)?,
        });
    }
    if values.is_empty() {
        return Err(EvalError::AllReplicatesDegenerate);
    }
    Ok(Replicates { values, skipped })
}

/// Percentile bootstrap interval with linear interpolation between order statistics.
pub fn bootstrap_ci(
    rows: &[ScoredRow],
    metric: Metric,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi, EvalError> {
    let reps = bootstrap_replicates(rows, metric, n_boot, seed)?;
    let mut sorted = reps.values;
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        lo: percentile_sorted(&sorted, tail),
        hi: percentile_sorted(&sorted, 1.0 - tail),
        level,
        n_boot,
        used: sorted.len(),
        skipped: reps.skipped,
    })
}
