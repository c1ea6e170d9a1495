//! Fixed projection to `k` dimensions plus per-dimension standardization.
//!
//! The map is the frozen, non-trainable part of a monitor. Hidden states are
//! projected first and standardized afterwards; states and prompt-relative
//! residuals carry separate statistics because their scales differ.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const DEFAULT_PROJECTION_DIM: usize = 128;
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("PCA needs at least k = {k} training states, got {n}")]
    TooFewStates { n: usize, k: usize },
    #[error("projection dim k = {k} exceeds input dim d = {d}")]
    KExceedsD { k: usize, d: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite training input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMethod {
    Pca,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub k: usize,
    pub d: usize,
    /// Row-major `k x d`.
    pub projection: Vec<f32>,
    pub state_mean: Vec<f32>,
    pub state_std: Vec<f32>,
    pub resid_mean: Vec<f32>,
    pub resid_std: Vec<f32>,
    pub method: ProjectionMethod,
}

impl FeatureMap {
    /// Identity-like map with unit statistics, mostly useful in tests.
    pub fn from_parts(
        k: usize,
        d: usize,
        projection: Vec<f32>,
        method: ProjectionMethod,
    ) -> Result<Self, FeatureError> {
        if projection.len() != k * d {
            return Err(FeatureError::DimensionMismatch {
                expected: k * d,
                found: projection.len(),
            });
        }
        Ok(Self {
            k,
            d,
            projection,
            state_mean: vec![0.0; k],
            state_std: vec![1.0; k],
            resid_mean: vec![0.0; k],
            resid_std: vec![1.0; k],
            method,
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut w = vec![0.0f32; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self::from_parts(d, d, w, ProjectionMethod::Pca).expect("square identity")
    }

    pub fn projection_row(&self, i: usize) -> &[f32] {
        &self.projection[i * self.d..(i + 1) * self.d]
    }

    fn check_dim(&self, v: &[f32]) -> Result<(), FeatureError> {
        if v.len() != self.d {
            return Err(FeatureError::DimensionMismatch {
                expected: self.d,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `W h` without standardization.
    pub fn project_raw(&self, h: &[f32]) -> Result<Vec<f64>, FeatureError> {
        self.check_dim(h)?;
        Ok(self.raw_unchecked(h.iter().map(|&v| v as f64)))
    }

    fn raw_unchecked(&self, h: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
        (0..self.k)
            .map(|i| {
                self.projection_row(i)
                    .iter()
                    .zip(h.clone())
                    .map(|(&w, x)| w as f64 * x)
                    .sum()
            })
            .collect()
    }

    /// `(W h - state_mean) / state_std`.
    pub fn project_state(&self, h: &[f32]) -> Result<Vec<f64>, FeatureError> {
        let mut z = self.project_raw(h)?;
        standardize(&mut z, &self.state_mean, &self.state_std);
        Ok(z)
    }

    /// `(W (h - p) - resid_mean) / resid_std`.
    pub fn project_residual(&self, h: &[f32], p: &[f32]) -> Result<Vec<f64>, FeatureError> {
        self.check_dim(h)?;
        self.check_dim(p)?;
        let mut z = self.raw_unchecked(h.iter().zip(p).map(|(&a, &b)| a as f64 - b as f64));
        standardize(&mut z, &self.resid_mean, &self.resid_std);
        Ok(z)
    }

    pub fn standardize_state(&self, raw: &mut [f64]) {
        standardize(raw, &self.state_mean, &self.state_std);
    }

    pub fn standardize_residual(&self, raw: &mut [f64]) {
        standardize(raw, &self.resid_mean, &self.resid_std);
    }

    /// Scalars held by the map: `k*d + 4k`.
    pub fn stored_scalars(&self) -> usize {
        self.k * self.d + 4 * self.k
    }
}

fn standardize(z: &mut [f64], mean: &[f32], std: &[f32]) {
    for ((v, &m), &s) in z.iter_mut().zip(mean).zip(std) {
        *v = (*v - m as f64) / s as f64;
    }
}

/// Fits the projection on `train_states` (rows of length `d`) and the two sets
/// of standardization statistics. An empty `train_residuals` yields unit
/// residual statistics.
pub fn fit_feature_map(
    train_states: &Matrix,
    train_residuals: &Matrix,
    k: usize,
    method: ProjectionMethod,
) -> Result<FeatureMap, FeatureError> {
    let d = train_states.cols();
    if k == 0 {
        return Err(FeatureError::ZeroK);
    }
    if k > d {
        return Err(FeatureError::KExceedsD { k, d });
    }
    if train_residuals.rows() > 0 && train_residuals.cols() != d {
        return Err(FeatureError::DimensionMismatch {
            expected: d,
            found: train_residuals.cols(),
        });
    }
    if !train_states.as_slice().iter().all(|v| v.is_finite())
        || !train_residuals.as_slice().iter().all(|v| v.is_finite())
    {
        return Err(FeatureError::NonFinite);
    }
    let projection = match method {
        ProjectionMethod::Pca => {
            if train_states.rows() < k {
                return Err(FeatureError::TooFewStates {
                    n: train_states.rows(),
                    k,
                });
            }
            pca_rows(train_states, k)
        }
        ProjectionMethod::Random { seed } => random_orthonormal_rows(k, d, seed),
    };
    let projection: Vec<f32> = projection.iter().map(|&v| v as f32).collect();
    let mut fm = FeatureMap::from_parts(k, d, projection, method)?;
    let (m, s) = projected_moments(&fm, train_states);
    fm.state_mean = m;
    fm.state_std = s;
    if train_residuals.rows() > 0 {
        let (m, s) = projected_moments(&fm, train_residuals);
        fm.resid_mean = m;
        fm.resid_std = s;
    }
    Ok(fm)
}

fn projected_moments(fm: &FeatureMap, rows: &Matrix) -> (Vec<f32>, Vec<f32>) {
    let k = fm.k;
    let n = rows.rows().max(1) as f64;
    let projected: Vec<Vec<f64>> = rows
        .iter_rows()
        .map(|r| fm.raw_unchecked(r.iter().copied()))
        .collect();
    let mut mean = vec![0.0; k];
    for z in &projected {
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for z in &projected {
        for ((s, v), m) in var.iter_mut().zip(z).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .map(|s| ((s / n).sqrt().max(STD_FLOOR)) as f32)
        .map(|s| s.max(STD_FLOOR as f32))
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), std)
}

/// Top-`k` principal directions of the centered rows, largest first. Each
/// direction is signed so its largest-magnitude entry is non-negative.
fn pca_rows(states: &Matrix, k: usize) -> Vec<f64> {
    let d = states.cols();
    let n = states.rows() as f64;
    let mut mean = vec![0.0; d];
    for row in states.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in states.iter_rows() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let out = &mut cov[i * d..(i + 1) * d];
            for j in i..d {
                out[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    let cov = DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        cov[a * d + b] / denom
    });
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut out = Vec::with_capacity(k * d);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let mut v: Vec<f64> = col.iter().copied().collect();
        orient(&mut v);
        out.extend_from_slice(&v);
    }
    out
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is non-negative.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Seeded Gaussian `k x d` matrix with rows orthonormalized by modified Gram-Schmidt.
fn random_orthonormal_rows(k: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for r in &rows {
            let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    rows.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f64>>();
        Matrix::from_rows(d, data)
    }

    fn max_gram_error(fm: &FeatureMap) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..fm.k {
            for j in 0..fm.k {
                let g: f64 = fm
                    .projection_row(i)
                    .iter()
                    .zip(fm.projection_row(j))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    #[test]
    fn axis_aligned_data_gives_identity() {
        // Variances 9 > 4 > 1 along the axes, zero mean.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = Vec::new();
        for _ in 0..4000 {
            for s in [3.0, 2.0, 1.0] {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(s * z);
            }
        }
        // Decorrelate exactly by symmetrizing signs of each axis.
        let mut mirrored = data.clone();
        for (i, v) in mirrored.iter_mut().enumerate() {
            if i % 3 == 0 {
                *v = -*v;
            }
        }
        data.extend(mirrored);
        let x = Matrix::from_rows(3, data);
        let fm = fit_feature_map(&x, &Matrix::with_cols(3), 3, ProjectionMethod::Pca).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let w = fm.projection_row(i)[j] as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((w - target).abs() < 0.05, "W[{i}][{j}] = {w}");
            }
        }
        assert!(max_gram_error(&fm) <= 1e-5);
    }

    #[test]
    fn constant_column_is_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..200).flat_map(|_| [rng.gen::<f64>(), 4.0]).collect();
        let x = Matrix::from_rows(2, data);
        let fm = fit_feature_map(&x, &Matrix::with_cols(2), 2, ProjectionMethod::Pca).unwrap();
        assert_eq!(fm.state_std[1] as f64, STD_FLOOR as f32 as f64);
        let z = fm.project_state(&[0.5, 4.0]).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pca_needs_enough_rows() {
        let x = gaussian(3, 8, 1);
        assert_eq!(
            fit_feature_map(&x, &Matrix::with_cols(8), 4, ProjectionMethod::Pca),
            Err(FeatureError::TooFewStates { n: 3, k: 4 })
        );
        assert_eq!(
            fit_feature_map(&x, &Matrix::with_cols(8), 9, ProjectionMethod::Pca),
            Err(FeatureError::KExceedsD { k: 9, d: 8 })
        );
        // Random projection has no row requirement.
        assert!(fit_feature_map(
            &x,
            &Matrix::with_cols(8),
            4,
            ProjectionMethod::Random { seed: 1 }
        )
        .is_ok());
    }

    #[test]
    fn identity_projection_passes_through() {
        let fm = FeatureMap::identity(3);
        let h = [1.0f32, -2.0, 0.5];
        assert_eq!(fm.project_state(&h).unwrap(), vec![1.0, -2.0, 0.5]);
        let p = [0.5f32, 0.5, 0.5];
        assert_eq!(fm.project_residual(&h, &p).unwrap(), vec![0.5, -2.5, 0.0]);

        let mut fm = fm;
        fm.state_mean = vec![1.0, 1.0, 1.0];
        assert_eq!(fm.project_state(&h).unwrap(), vec![0.0, -3.0, -0.5]);
        fm.resid_mean = vec![0.25, 0.5, 1.0];
        fm.resid_std = vec![0.5, 2.0, 1.0];
        assert_eq!(
            fm.project_residual(&h, &h).unwrap(),
            vec![-0.5, -0.25, -1.0]
        );
        assert!(matches!(
            fm.project_state(&[1.0]),
            Err(FeatureError::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn random_rows_are_orthonormal_and_deterministic() {
        let x = gaussian(10, 64, 3);
        let a = fit_feature_map(&x, &x, 16, ProjectionMethod::Random { seed: 9 }).unwrap();
        let b = fit_feature_map(&x, &x, 16, ProjectionMethod::Random { seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert!(max_gram_error(&a) <= 1e-5);
    }
}
