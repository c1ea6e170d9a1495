//! Brute-force reference computations used to check the optimized paths.
//!
//! Everything here is written straight-line from the definitions: no shared
//! helpers with the monitor, metric or calibration code, quadratic where the
//! fast path is `n log n`, and `f64` throughout.

use crate::monitor::MonitorArtifact;
use crate::trace_store::TraceRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScan {
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub m: Vec<f64>,
}

impl OracleScan {
    /// First 1-based step with `m_t >= tau`.
    pub fn first_cross(&self, tau: f64) -> Option<usize> {
        for (i, &m) in self.m.iter().enumerate() {
            if m >= tau {
                return Some(i + 1);
            }
        }
        None
    }
}

fn standardized(art: &MonitorArtifact, x: &[f64], resid: bool) -> Vec<f64> {
    let fm = &art.feature_map;
    let mut out = vec![0.0; fm.k];
    for i in 0..fm.k {
        let mut z = 0.0;
        for j in 0..fm.d {
            z += fm.projection[i * fm.d + j] as f64 * x[j];
        }
        let (mu, sd) = if resid {
            (fm.resid_mean[i] as f64, fm.resid_std[i] as f64)
        } else {
            (fm.state_mean[i] as f64, fm.state_std[i] as f64)
        };
        out[i] = (z - mu) / sd.max(1e-6);
    }
    out
}

fn affine(w: &[f32], b: f32, x: &[f64]) -> f64 {
    let mut s = b as f64;
    for i in 0..w.len() {
        s += w[i] as f64 * x[i];
    }
    s
}

/// Per-step head outputs and EMA for `record` under `art`.
pub fn oracle_scan(art: &MonitorArtifact, record: &TraceRecord) -> OracleScan {
    let d = record.hidden_dim;
    let p: Vec<f64> = record.prompt_summary.iter().map(|&x| x as f64).collect();
    let mut out = OracleScan {
        f: vec![],
        c: vec![],
        r: vec![],
        g: vec![],
        m: vec![],
    };
    let mut m = 0.0;
    for t in 0..record.token_count {
        let h: Vec<f64> = record.frames[t * d..(t + 1) * d]
            .iter()
            .map(|&x| x as f64)
            .collect();
        let delta: Vec<f64> = (0..d).map(|j| h[j] - p[j]).collect();
        let hs = standardized(art, &h, false);
        let ds = standardized(art, &delta, true);
        let f = affine(&art.hazard.weights, art.hazard.bias, &hs);
        let c = affine(&art.support.weights, art.support.bias, &hs);
        let r = affine(&art.residual.weights, art.residual.bias, &ds);
        let g = f - art.alpha * c + art.beta * r;
        m = art.lambda * g + (1.0 - art.lambda) * m;
        out.f.push(f);
        out.c.push(c);
        out.r.push(r);
        out.g.push(g);
        out.m.push(m);
    }
    out
}

/// Probability that a random positive outscores a random negative (ties count half).
pub fn auroc_all_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over every distinct score
/// threshold, each threshold admitting all rows with score `>=` it.
pub fn auprc_enumeration(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &th in &thresholds {
        let mut tp = 0.0;
        let mut admitted = 0.0;
        for i in 0..scores.len() {
            if scores[i] >= th {
                admitted += 1.0;
                if labels[i] {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / admitted);
        prev_recall = recall;
    }
    ap
}

/// Threshold choice by sweeping every candidate in a dense list: each
/// observed score plus `+inf`. Returns `(tau, safe_rate, harm_rate)`.
pub fn threshold_dense_sweep(
    safe_max: &[f64],
    harm_window: &[f64],
    budget: f64,
) -> (f64, f64, f64) {
    let mut candidates: Vec<f64> = safe_max.iter().chain(harm_window).copied().collect();
    candidates.push(f64::INFINITY);
    let mut best: Option<(f64, f64, f64)> = None;
    for &tau in &candidates {
        let safe = safe_max.iter().filter(|&&s| s >= tau).count() as f64 / safe_max.len() as f64;
        if safe > budget {
            continue;
        }
        let harm =
            harm_window.iter().filter(|&&s| s >= tau).count() as f64 / harm_window.len() as f64;
        let better = match best {
            None => true,
            Some((bt, _, bh)) => harm > bh || (harm == bh && tau > bt),
        };
        if better {
            best = Some((tau, safe, harm));
        }
    }
    best.expect("+inf is always feasible")
}

/// Hazard label of step `t` (1-based) by direct definition; `None` past onset.
pub fn hazard_label_direct(t: usize, onset: usize, horizon: usize) -> Option<bool> {
    if t > onset {
        return None;
    }
    let gap = onset as i64 - t as i64;
    Some(gap >= 0 && gap <= horizon as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pairs_counts_ties_half() {
        assert_eq!(auroc_all_pairs(&[1.0, 1.0], &[true, false]), 0.5);
        assert_eq!(
            auroc_all_pairs(&[2.0, 1.0, 0.0], &[true, false, false]),
            1.0
        );
    }

    #[test]
    fn enumeration_ap_hand_value() {
        // ranking: + - + ; AP = (1/2)(1) + (1/2)(2/3)
        let ap = auprc_enumeration(&[3.0, 2.0, 1.0], &[true, false, true]);
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn dense_sweep_worked_example() {
        let (tau, safe, harm) =
            threshold_dense_sweep(&[0.2, 0.5, 0.9, 1.3], &[0.4, 1.2, 1.5, 0.3], 0.25);
        assert_eq!(tau, 1.2);
        assert_eq!((safe, harm), (0.25, 0.5));
    }
}
