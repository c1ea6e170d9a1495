//! Optimized paths against brute-force references.

mod common;

use aeric_core::eval::{trigger_curve, TriggerRow};
use aeric_core::featurize::{fit_feature_map, ProjectionMethod};
use aeric_core::linalg::Matrix;
use aeric_core::monitor::{CompiledMonitor, MonitorArtifact};
use aeric_core::pipeline::{run_pipeline, PipelineConfig};
use aeric_core::synth::oracle::oracle_scan;
use aeric_core::synth::{generate_dataset, SplitCounts, SynthConfig};
use aeric_core::trace_store::Split;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ok(check: common::Check) {
    if let Err(msg) = check {
        panic!("{msg}");
    }
}

#[test]
fn hazard_labels_match_definition_exhaustively() {
    ok(common::hazard_labels_exhaustive());
}

#[test]
fn ema_matches_closed_form() {
    ok(common::ema_closed_form());
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    ok(common::logistic_gradients());
}

#[test]
fn hinge_gradient_matches_finite_differences() {
    ok(common::hinge_gradients());
}

#[test]
fn metrics_match_enumeration_oracles() {
    ok(common::metric_oracles());
}

#[test]
fn calibration_matches_dense_sweep() {
    ok(common::calibration_oracle());
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major).
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let vectors = (0..n)
        .map(|j| (0..n).map(|i| v[i * n + j]).collect())
        .collect();
    (values, vectors)
}

#[test]
fn pca_matches_jacobi_eigenvectors() {
    let (d, k, n) = (32, 8, 600);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // random rotation of well-separated axis scales
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / nrm).collect());
    }
    let mut states = Matrix::with_cols(d);
    for _ in 0..n {
        let mut row = vec![0.0; d];
        for (i, b) in basis.iter().enumerate() {
            let z: f64 = rng.gen_range(-1.0..1.0) * (d - i) as f64;
            row.iter_mut().zip(b).for_each(|(r, x)| *r += z * x);
        }
        states.push_row(&row);
    }
    let fm = fit_feature_map(&states, &Matrix::with_cols(d), k, ProjectionMethod::Pca).unwrap();

    let mut mean = vec![0.0; d];
    for r in states.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n as f64);
    }
    let mut cov = vec![0.0; d * d];
    for r in states.iter_rows() {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n as f64;
            }
        }
    }
    let (values, vectors) = jacobi_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    for (row, &idx) in order.iter().take(k).enumerate() {
        let mut v = vectors[idx].clone();
        let big = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, x)| {
                if x.abs() > acc.1.abs() {
                    (i, x)
                } else {
                    acc
                }
            });
        if big.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for j in 0..d {
            let got = fm.projection[row * d + j] as f64;
            assert!(
                (got - v[j]).abs() < 1e-5,
                "component {row}, coord {j}: {got} vs {}",
                v[j]
            );
        }
    }
}

#[test]
fn trigger_accounting_hand_cases() {
    let rows = vec![
        TriggerRow {
            trace_id: "a".into(),
            t_nostop: 10,
            trigger_step: Some(2),
        },
        TriggerRow {
            trace_id: "b".into(),
            t_nostop: 64,
            trigger_step: None,
        },
    ];
    let curve = trigger_curve(&rows, &[1, 2, 8]).unwrap();
    assert_eq!(curve.at(1), Some(0.0));
    assert_eq!(curve.at(2), Some(0.5));
    assert_eq!(curve.at(8), Some(0.5));
    assert_eq!(curve.mean_withheld, 4.0);
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        d: 24,
        per_class: SplitCounts {
            train: 30,
            cal: 15,
            dev: 15,
            test: 15,
        },
        n_pairs: 20,
        n_prompt_only: 2,
        ..SynthConfig::reference()
    }
}

#[test]
fn compiled_monitor_matches_straight_line_scan() {
    let (ds, _) = generate_dataset(&small_synth()).unwrap();
    let cfg = PipelineConfig {
        k: 8,
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&ds, &cfg).unwrap();
    let art: &MonitorArtifact = &out.artifact;
    let mon = CompiledMonitor::new(art).unwrap();
    let tau = art.threshold.unwrap();
    for rec in ds.split(Split::Test).filter(|r| r.token_count > 0) {
        let fast = mon.score_trace(rec).unwrap();
        let slow = oracle_scan(art, rec);
        for (a, b) in fast.m.iter().zip(&slow.m) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
        // trigger steps agree unless some m_t sits within rounding of tau
        let near = slow
            .m
            .iter()
            .any(|m| (m - tau).abs() <= 1e-5 * tau.abs().max(1.0));
        if !near {
            assert_eq!(fast.trigger_step, slow.first_cross(tau));
        }
    }
}
