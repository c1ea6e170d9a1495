//! Pairwise hinge ranking head over prompt-relative residuals.
//!
//! Minimizes `mean_i max(0, 1 - w.(d_u - d_s)) + |w|^2 / (2C)` with seeded
//! mini-batch subgradient steps of size `C / t`. The bias cancels in every
//! pair, so it is set afterwards: the median score over safe-side training
//! deltas is zero.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HeadRole, LinearHead, ResidualPair, TrainConfig, TrainError};
use crate::linalg::{dot, median};

#[derive(Debug, Clone)]
pub struct ResidualFit {
    pub head: LinearHead,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Full objective of the averaged iterate after each epoch.
    pub epoch_objectives: Vec<f64>,
    pub best_epoch: usize,
    pub objective: f64,
}

/// Objective and one subgradient at `w`. At a hinge kink the zero branch is taken.
pub fn residual_objective(pairs: &[ResidualPair], c: f64, w: &[f64]) -> (f64, Vec<f64>) {
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad: Vec<f64> = w.iter().map(|v| v / c).collect();
    for pair in pairs {
        let diff = pair.difference();
        let slack = 1.0 - dot(w, &diff);
        if slack > 0.0 {
            loss += slack;
            for (g, d) in grad.iter_mut().zip(&diff) {
                *g -= d / n;
            }
        }
    }
    (loss / n + dot(w, w) / (2.0 * c), grad)
}

fn objective_of(diffs: &[Vec<f64>], c: f64, w: &[f64]) -> f64 {
    let hinge: f64 = diffs
        .iter()
        .map(|d| (1.0 - dot(w, d)).max(0.0))
        .sum::<f64>()
        / diffs.len() as f64;
    hinge + dot(w, w) / (2.0 * c)
}

pub fn train_residual_head(
    pairs: &[ResidualPair],
    cfg: &TrainConfig,
) -> Result<ResidualFit, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let k = pairs[0].safe_delta.len();
    let diffs: Vec<Vec<f64>> = pairs.iter().map(ResidualPair::difference).collect();
    let reg = 1.0 / cfg.c;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();

    let mut w = vec![0.0; k];
    let mut avg = vec![0.0; k];
    let mut steps = 0usize;
    let mut best = (objective_of(&diffs, cfg.c, &w), w.clone());
    let mut epoch_objectives = Vec::with_capacity(cfg.residual_epochs);
    let mut best_epoch = 0;
    let mut grad = vec![0.0; k];
    for epoch in 0..cfg.residual_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            steps += 1;
            let eta = 1.0 / (reg * steps as f64);
            for (g, v) in grad.iter_mut().zip(&w) {
                *g = reg * v;
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let d = &diffs[i];
                if dot(&w, d) < 1.0 {
                    for (g, v) in grad.iter_mut().zip(d) {
                        *g -= scale * v;
                    }
                }
            }
            for (v, g) in w.iter_mut().zip(&grad) {
                *v -= eta * g;
            }
            let a = 1.0 / steps as f64;
            for (m, v) in avg.iter_mut().zip(&w) {
                *m += a * (v - *m);
            }
        }
        let obj = objective_of(&diffs, cfg.c, &avg);
        epoch_objectives.push(obj);
        if obj < best.0 {
            best = (obj, avg.clone());
            best_epoch = epoch + 1;
        }
        let last = objective_of(&diffs, cfg.c, &w);
        if last < best.0 {
            best = (last, w.clone());
            best_epoch = epoch + 1;
        }
    }
    let (objective, weights) = best;
    let safe_scores: Vec<f64> = pairs.iter().map(|p| dot(&weights, &p.safe_delta)).collect();
    let bias = -median(&safe_scores);
    Ok(ResidualFit {
        head: LinearHead::from_f64(HeadRole::Residual, &weights, bias),
        weights,
        bias,
        epoch_objectives,
        best_epoch,
        objective,
    })
}
