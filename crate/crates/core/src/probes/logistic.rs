//! L2-regularized logistic head solved by damped Newton iterations.
//!
//! Objective: `J(w, b) = 0.5 * |w|^2 + C * sum_i log(1 + exp(-s_i (w.x_i + b)))`
//! with `s_i = +1` for positives and `-1` otherwise. The bias is unpenalized.

use nalgebra::{DMatrix, DVector};

use super::{HeadRole, LinearHead, SampleSet, TrainConfig, TrainError};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub head: LinearHead,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the gradient tolerance was met.
    pub converged: bool,
}

/// `log(1 + exp(-y))` without overflow.
fn softplus_neg(y: f64) -> f64 {
    if y > 0.0 {
        (-y).exp().ln_1p()
    } else {
        -y + y.exp().ln_1p()
    }
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Objective value and gradient `(J, dJ/dw, dJ/db)`.
pub fn logistic_objective(
    features: &Matrix,
    labels: &[bool],
    c: f64,
    w: &[f64],
    b: f64,
) -> (f64, Vec<f64>, f64) {
    let mut loss = 0.0;
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (x, &z) in features.iter_rows().zip(labels) {
        let s = if z { 1.0 } else { -1.0 };
        let y = s * (dot(w, x) + b);
        loss += softplus_neg(y);
        // d/du log(1 + exp(-s u)) = -s * sigmoid(-y)
        let coef = -c * s * sigmoid(-y);
        for (g, v) in gw.iter_mut().zip(x) {
            *g += coef * v;
        }
        gb += coef;
    }
    let j = 0.5 * dot(w, w) + c * loss;
    (j, gw, gb)
}

fn objective_only(features: &Matrix, labels: &[bool], c: f64, w: &[f64], b: f64) -> f64 {
    let loss: f64 = features
        .iter_rows()
        .zip(labels)
        .map(|(x, &z)| {
            let s = if z { 1.0 } else { -1.0 };
            softplus_neg(s * (dot(w, x) + b))
        })
        .sum();
    0.5 * dot(w, w) + c * loss
}

fn hessian(features: &Matrix, labels: &[bool], c: f64, w: &[f64], b: f64) -> DMatrix<f64> {
    let k = features.cols();
    let n = k + 1;
    let mut upper = vec![0.0; n * n];
    let mut ext = vec![0.0; n];
    for (x, &z) in features.iter_rows().zip(labels) {
        let s = if z { 1.0 } else { -1.0 };
        let y = s * (dot(w, x) + b);
        let curv = c * sigmoid(y) * sigmoid(-y);
        if curv == 0.0 {
            continue;
        }
        ext[..k].copy_from_slice(x);
        ext[k] = 1.0;
        for i in 0..n {
            let a = curv * ext[i];
            let row = &mut upper[i * n..(i + 1) * n];
            for j in i..n {
                row[j] += a * ext[j];
            }
        }
    }
    DMatrix::from_fn(n, n, |i, j| {
        let v = if i <= j {
            upper[i * n + j]
        } else {
            upper[j * n + i]
        };
        if i == j && i < k {
            v + 1.0
        } else {
            v
        }
    })
}

pub fn train_logistic_head(
    samples: &SampleSet,
    role: HeadRole,
    cfg: &TrainConfig,
) -> Result<LogisticFit, TrainError> {
    cfg.validate()?;
    let pos = samples.positives();
    if pos == 0 || pos == samples.len() {
        return Err(TrainError::SingleClass);
    }
    let features = &samples.features;
    let labels = &samples.labels;
    let c = cfg.c;
    let k = features.cols();

    let mut w = vec![0.0; k];
    // Start the bias at the class log-odds so the first Newton step is well scaled.
    let mut b = (pos as f64 / (samples.len() - pos) as f64).ln();
    let (mut j, mut gw, mut gb) = logistic_objective(features, labels, c, &w, b);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let grad_norm = (dot(&gw, &gw) + gb * gb).sqrt();
        if grad_norm <= cfg.grad_tol * j.abs().max(1.0) {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;

        let h = hessian(features, labels, c, &w, b);
        let mut g = DVector::from_iterator(k + 1, gw.iter().copied().chain([gb]));
        g.neg_mut();
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                let ridge = DMatrix::identity(k + 1, k + 1) * 1e-10;
                match (h + ridge).cholesky() {
                    Some(ch) => ch.solve(&g),
                    None => g.clone(),
                }
            }
        };
        // directional derivative grad . step (negative for a descent direction)
        let slope = -g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let nw: Vec<f64> = w.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let nb = b + t * step[k];
            let nj = objective_only(features, labels, c, &nw, nb);
            if nj <= j + 1e-4 * t * slope {
                w = nw;
                b = nb;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (j, gw, gb) = logistic_objective(features, labels, c, &w, b);
    }
    let grad_norm = (dot(&gw, &gw) + gb * gb).sqrt();
    if !converged && grad_norm <= cfg.grad_tol * j.abs().max(1.0) {
        converged = true;
    }
    Ok(LogisticFit {
        head: LinearHead::from_f64(role, &w, b),
        weights: w,
        bias: b,
        objective: j,
        grad_norm,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[(f64, bool)]) -> SampleSet {
        let mut s = SampleSet::new(1);
        for &(x, z) in rows {
            s.push(&[x], z);
        }
        s
    }

    #[test]
    fn separable_1d_gets_positive_weight() {
        let s = set(&[(-1.0, false), (1.0, true)]);
        let fit = train_logistic_head(&s, HeadRole::Hazard, &TrainConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.weights[0] > 0.0);
    }

    #[test]
    fn symmetric_data_gives_zero_weight() {
        let s = set(&[(-1.0, false), (-1.0, true), (2.0, false), (2.0, true)]);
        let fit = train_logistic_head(&s, HeadRole::Hazard, &TrainConfig::default()).unwrap();
        assert!(fit.weights[0].abs() <= 1e-6);
    }

    #[test]
    fn single_class_is_an_error() {
        let s = set(&[(-1.0, true), (1.0, true)]);
        assert!(matches!(
            train_logistic_head(&s, HeadRole::Hazard, &TrainConfig::default()),
            Err(TrainError::SingleClass)
        ));
    }

    #[test]
    fn returned_point_is_stationary_and_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = SampleSet::new(5);
        for _ in 0..300 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z = x[0] - 0.5 * x[2] + rng.gen_range(-1.0..1.0) > 0.0;
            s.push(&x, z);
        }
        let cfg = TrainConfig {
            c: 1.0,
            ..TrainConfig::default()
        };
        let fit = train_logistic_head(&s, HeadRole::Support, &cfg).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm <= 1e-6 * fit.objective.abs().max(1.0));
        for _ in 0..100 {
            let dir: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w: Vec<f64> = fit
                .weights
                .iter()
                .zip(&dir)
                .map(|(a, d)| a + 0.1 * d / n)
                .collect();
            let b = fit.bias + 0.1 * dir[5] / n;
            assert!(objective_only(&s.features, &s.labels, 1.0, &w, b) >= fit.objective);
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = SampleSet::new(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.push(&x, x[1] > 0.0);
        }
        let cfg = TrainConfig {
            c: 100.0,
            max_iters: 1,
            ..TrainConfig::default()
        };
        let fit = train_logistic_head(&s, HeadRole::Hazard, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }
}
