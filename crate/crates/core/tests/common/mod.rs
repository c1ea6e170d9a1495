//! Oracle checks shared by the `oracles` tests and the acceptance runner.
//! Each returns a one-line summary on success and the first mismatch otherwise.
#![allow(dead_code)]

use aeric_core::calibrate::{select_threshold, CalibrationInput};
use aeric_core::eval::{auprc, auroc, ScoredRow};
use aeric_core::linalg::Matrix;
use aeric_core::monitor::{ema_step, MonitorState};
use aeric_core::probes::{
    build_hazard_labels, logistic_objective, residual_objective, ResidualPair,
};
use aeric_core::synth::oracle::{
    auprc_enumeration, auroc_all_pairs, hazard_label_direct, threshold_dense_sweep,
};
use aeric_core::trace_store::{Label, Split, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn record(label: Label, t: usize) -> TraceRecord {
    TraceRecord {
        trace_id: "x".into(),
        hidden_dim: 1,
        token_count: t,
        prompt_summary: vec![0.0],
        frames: vec![0.0; t],
        label,
        split: Split::Train,
        role_tags: vec![],
        meta: Default::default(),
    }
}

/// Every `(T, onset, H)` with `T <= 64`, `H <= 32`, plus safe traces.
pub fn hazard_labels_exhaustive() -> Check {
    let mut cases = 0;
    for t_len in 1..=64 {
        for onset in 1..=t_len {
            for h in 0..=32 {
                let rec = record(Label::Unsafe { onset: Some(onset) }, t_len);
                let got = build_hazard_labels(&rec, h).map_err(|e| e.to_string())?;
                let want: Vec<(usize, bool)> = (1..=t_len)
                    .filter_map(|t| hazard_label_direct(t, onset, h).map(|z| (t, z)))
                    .collect();
                if got != want {
                    return Err(format!("mismatch at T={t_len} o={onset} H={h}"));
                }
                cases += 1;
            }
        }
        let safe =
            build_hazard_labels(&record(Label::Safe, t_len), 4).map_err(|e| e.to_string())?;
        if safe.len() != t_len || safe.iter().any(|&(_, z)| z) {
            return Err(format!("safe trace of length {t_len} mislabelled"));
        }
    }
    Ok(format!("{cases} (T, o, H) cases identical"))
}

pub fn ema_closed_form() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let lambda = [0.1, 0.3, 0.7][i % 3];
        let t_len = rng.gen_range(1..=64);
        let g: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut state = MonitorState::default();
        for &x in &g {
            state = ema_step(state, x, lambda).map_err(|e| e.to_string())?;
        }
        let closed: f64 = g
            .iter()
            .enumerate()
            .map(|(k, &x)| lambda * (1.0 - lambda).powi((t_len - 1 - k) as i32) * x)
            .sum();
        let err = (state.m - closed).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("sequence {i}: {} vs {closed}", state.m));
        }
    }
    Ok(format!("1000 sequences, max |error| {worst:.2e}"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn logistic_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, k, c, eps) = (40, 6, 0.1, 1e-5);
    let mut worst = 0.0f64;
    for point in 0..10 {
        let data: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Matrix::from_rows(k, data);
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let (_, gw, gb) = logistic_objective(&x, &y, c, &w, b);
        let obj = |w: &[f64], b: f64| logistic_objective(&x, &y, c, w, b).0;
        for j in 0..=k {
            let (fd, an) = if j < k {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += eps;
                wm[j] -= eps;
                ((obj(&wp, b) - obj(&wm, b)) / (2.0 * eps), gw[j])
            } else {
                ((obj(&w, b + eps) - obj(&w, b - eps)) / (2.0 * eps), gb)
            };
            let e = rel_err(fd, an);
            worst = worst.max(e);
            if e > 1e-4 {
                return Err(format!("point {point} coord {j}: fd {fd} vs {an}"));
            }
        }
    }
    Ok(format!("10 points, max rel error {worst:.2e}"))
}

pub fn hinge_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, k, c, eps) = (30, 5, 0.1, 1e-5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10 {
        let pairs: Vec<ResidualPair> = (0..n)
            .map(|i| ResidualPair {
                pair_id: format!("p{i}"),
                safe_delta: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                unsafe_delta: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // a point is non-kink when no margin can reach 1 within one step
        let reach = |p: &ResidualPair| {
            eps * p
                .safe_delta
                .iter()
                .zip(&p.unsafe_delta)
                .map(|(s, u)| (u - s).abs())
                .sum::<f64>()
        };
        let margin = |p: &ResidualPair| {
            p.safe_delta
                .iter()
                .zip(&p.unsafe_delta)
                .zip(&w)
                .map(|((s, u), wi)| wi * (u - s))
                .sum::<f64>()
        };
        if pairs
            .iter()
            .any(|p| (1.0 - margin(p)).abs() <= 10.0 * reach(p))
        {
            continue;
        }
        let (_, grad) = residual_objective(&pairs, c, &w);
        for j in 0..k {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += eps;
            wm[j] -= eps;
            let fd = (residual_objective(&pairs, c, &wp).0 - residual_objective(&pairs, c, &wm).0)
                / (2.0 * eps);
            let e = rel_err(fd, grad[j]);
            worst = worst.max(e);
            if e > 1e-4 {
                return Err(format!("point {checked} coord {j}: fd {fd} vs {}", grad[j]));
            }
        }
        checked += 1;
    }
    Ok(format!("10 points, max rel error {worst:.2e}"))
}

fn random_rows(rng: &mut ChaCha8Rng) -> Vec<ScoredRow> {
    let n = rng.gen_range(2..=500);
    // coarse grid so ties are common
    let levels = rng.gen_range(2..=60);
    let mut rows: Vec<ScoredRow> = (0..n)
        .map(|i| {
            let label = rng.gen_bool(0.4);
            let score = rng.gen_range(0..levels) as f64 * 0.1 + if label { 0.3 } else { 0.0 };
            ScoredRow::new(format!("r{i}"), score, label)
        })
        .collect();
    rows[0].label = true;
    rows[1].label = false;
    rows
}

pub fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let rows = random_rows(&mut rng);
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
        let (a, oracle_a) = (
            auroc(&rows).map_err(|e| e.to_string())?,
            auroc_all_pairs(&scores, &labels),
        );
        if a != oracle_a {
            return Err(format!(
                "instance {inst}: AUROC {a} vs all-pairs {oracle_a}"
            ));
        }
        let (p, oracle_p) = (
            auprc(&rows).map_err(|e| e.to_string())?,
            auprc_enumeration(&scores, &labels),
        );
        worst = worst.max((p - oracle_p).abs());
        if (p - oracle_p).abs() > 1e-12 {
            return Err(format!(
                "instance {inst}: AUPRC {p} vs enumeration {oracle_p}"
            ));
        }
    }
    Ok(format!(
        "100 instances, AUROC exact, max AUPRC error {worst:.1e}"
    ))
}

pub fn calibration_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for inst in 0..100 {
        let n_safe = rng.gen_range(1..=1000);
        let n_harm = rng.gen_range(1..=1000);
        let quant = rng.gen_range(5..200) as f64;
        let mut draw = |shift: f64| (rng.gen_range(-3.0..3.0_f64) * quant + shift).round() / quant;
        let safe: Vec<f64> = (0..n_safe).map(|_| draw(0.0)).collect();
        let harm: Vec<f64> = (0..n_harm).map(|_| draw(1.0)).collect();
        let budget = [0.0, 0.01, 0.05, 0.1, 0.3, 1.0][rng.gen_range(0..6)];
        let got = select_threshold(&CalibrationInput {
            safe_max_scores: safe.clone(),
            harm_window_scores: harm.clone(),
            budget,
            window: 16,
        })
        .map_err(|e| e.to_string())?;
        let want = threshold_dense_sweep(&safe, &harm, budget);
        let have = (got.threshold, got.safe_trigger_rate, got.harm_trigger_at_k);
        if have != want {
            return Err(format!("instance {inst}: {have:?} vs sweep {want:?}"));
        }
        if got.safe_trigger_rate > budget {
            return Err(format!(
                "instance {inst}: safe rate {} > B {budget}",
                got.safe_trigger_rate
            ));
        }
    }
    Ok("100 instances identical to dense sweep, all within budget".into())
}
