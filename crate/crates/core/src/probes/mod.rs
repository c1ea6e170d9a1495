//! Training sets and trainers for the three linear heads.
//!
//! * hazard: onset-aware labels, positive when onset is at most `H` tokens ahead;
//! * support: safe or supportive frames versus imminent / post-onset unsafe frames;
//! * residual: prompt-relative deltas from matched safe/unsafe continuations,
//!   ranked with a pairwise hinge loss.

mod grid;
mod logistic;
mod residual;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{FeatureError, FeatureMap};
use crate::linalg::{dot, Matrix};
use crate::trace_store::{Label, PairSide, TraceRecord};

pub use grid::{grid_select, GridCell, GridReport, GridSelection};
pub use logistic::{logistic_objective, train_logistic_head, LogisticFit};
pub use residual::{residual_objective, train_residual_head, ResidualFit};

pub const DEFAULT_ALPHA_GRID: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_BETA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];
pub const DEFAULT_RHO_GRID: [f64; 2] = [0.5, 1.0];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("trace {0}: unusable for hazard supervision")]
    UnusableForHazard(String),
    #[error("training set has a single class")]
    SingleClass,
    #[error("empty {0} pool")]
    EmptyPool(&'static str),
    #[error("no residual pairs")]
    NoPairs,
    #[error("pair {0}: side has no frames")]
    EmptyPairSide(String),
    #[error("pair {0}: missing safe or unsafe side")]
    IncompletePair(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("development set needs both safe and unsafe traces")]
    DegenerateDev,
    #[error("empty grid")]
    EmptyGrid,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadRole {
    Hazard,
    Support,
    Residual,
}

impl HeadRole {
    pub fn code(self) -> u8 {
        match self {
            HeadRole::Hazard => 0,
            HeadRole::Support => 1,
            HeadRole::Residual => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadRole::Hazard),
            1 => Some(HeadRole::Support),
            2 => Some(HeadRole::Residual),
            _ => None,
        }
    }
}

/// `w^T x + b` over a `k`-dimensional projected feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub role: HeadRole,
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl LinearHead {
    pub fn zeros(role: HeadRole, k: usize) -> Self {
        Self {
            role,
            weights: vec![0.0; k],
            bias: 0.0,
        }
    }

    pub fn from_f64(role: HeadRole, weights: &[f64], bias: f64) -> Self {
        Self {
            role,
            weights: weights.iter().map(|&w| w as f32).collect(),
            bias: bias as f32,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights
            .iter()
            .zip(x)
            .map(|(&w, v)| w as f64 * v)
            .sum::<f64>()
            + self.bias as f64
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Inverse regularization strength.
    pub c: f64,
    /// Hazard horizon in tokens.
    pub horizon: usize,
    pub tail_fraction: f64,
    /// Newton iterations for the logistic heads.
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Passes over the residual pairs.
    pub residual_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            horizon: 16,
            tail_fraction: 1.0,
            max_iters: 100,
            grad_tol: 1e-6,
            residual_epochs: 40,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(TrainError::Config("C must be positive".into()));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(TrainError::Config(
                "tail fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.grad_tol > 0.0) {
            return Err(TrainError::Config("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 || self.residual_epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "iteration counts and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Hazard labels `(t, z)` for every usable 1-based prefix `t`.
///
/// Safe traces label every prefix 0. Unsafe traces label `t` in
/// `[max(1, o - H), o]` as 1 and earlier prefixes 0; post-onset prefixes are
/// left out entirely.
pub fn build_hazard_labels(
    record: &TraceRecord,
    horizon: usize,
) -> Result<Vec<(usize, bool)>, TrainError> {
    match record.label {
        Label::Safe => Ok((1..=record.token_count).map(|t| (t, false)).collect()),
        Label::Unsafe { onset: Some(o) } => Ok((1..=o.min(record.token_count))
            .map(|t| (t, o - t <= horizon))
            .collect()),
        _ => Err(TrainError::UnusableForHazard(record.trace_id.clone())),
    }
}

/// Projected features and labels ready for a logistic trainer.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub features: Matrix,
    pub labels: Vec<bool>,
}

impl SampleSet {
    pub fn new(k: usize) -> Self {
        Self {
            features: Matrix::with_cols(k),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], label: bool) {
        self.features.push_row(x);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&z| z).count()
    }
}

/// Hazard training set over `records`. Unsafe traces without a known onset
/// and prompt-only traces are skipped; the skip count is returned.
pub fn build_hazard_samples<'a>(
    records: impl IntoIterator<Item = &'a TraceRecord>,
    fm: &FeatureMap,
    horizon: usize,
) -> Result<(SampleSet, usize), TrainError> {
    let mut set = SampleSet::new(fm.k);
    let mut skipped = 0;
    for record in records {
        let labels = match build_hazard_labels(record, horizon) {
            Ok(l) => l,
            Err(TrainError::UnusableForHazard(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for (t, z) in labels {
            set.push(&fm.project_state(record.frame(t))?, z);
        }
    }
    Ok((set, skipped))
}

#[derive(Debug, Clone)]
pub struct SupportPools {
    pub positives: Matrix,
    pub negatives: Matrix,
}

impl SupportPools {
    pub fn into_samples(self) -> SampleSet {
        let k = self.positives.cols();
        let mut set = SampleSet::new(k);
        for row in self.positives.iter_rows() {
            set.push(row, true);
        }
        for row in self.negatives.iter_rows() {
            set.push(row, false);
        }
        set
    }
}

/// Support pools: every frame of safe or `SUPPORT_POSITIVE` traces is positive;
/// frames of unsafe traces with `t >= o - H` (and every frame of
/// `SUPPORT_NEGATIVE` traces) are negative.
pub fn build_support_pools<'a>(
    records: impl IntoIterator<Item = &'a TraceRecord>,
    fm: &FeatureMap,
    horizon: usize,
) -> Result<SupportPools, TrainError> {
    let mut positives = Matrix::with_cols(fm.k);
    let mut negatives = Matrix::with_cols(fm.k);
    for record in records {
        if record.is_support_positive() || record.label == Label::Safe {
            for t in 1..=record.token_count {
                positives.push_row(&fm.project_state(record.frame(t))?);
            }
        } else if record.is_support_negative() {
            for t in 1..=record.token_count {
                negatives.push_row(&fm.project_state(record.frame(t))?);
            }
        } else if let Label::Unsafe { onset: Some(o) } = record.label {
            let start = o.saturating_sub(horizon).max(1);
            for t in start..=record.token_count {
                negatives.push_row(&fm.project_state(record.frame(t))?);
            }
        }
    }
    if positives.rows() == 0 {
        return Err(TrainError::EmptyPool("support-positive"));
    }
    if negatives.rows() == 0 {
        return Err(TrainError::EmptyPool("support-negative"));
    }
    Ok(SupportPools {
        positives,
        negatives,
    })
}

/// Matched prompt-relative deltas for one tail position of one prompt pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPair {
    pub pair_id: String,
    pub safe_delta: Vec<f64>,
    pub unsafe_delta: Vec<f64>,
}

impl ResidualPair {
    /// `unsafe_delta - safe_delta`; the only quantity the ranking loss sees.
    pub fn difference(&self) -> Vec<f64> {
        self.unsafe_delta
            .iter()
            .zip(&self.safe_delta)
            .map(|(u, s)| u - s)
            .collect()
    }

    pub fn margin(&self, w: &[f64]) -> f64 {
        dot(w, &self.unsafe_delta) - dot(w, &self.safe_delta)
    }
}

/// Number of tail frames kept from a side of length `t`.
pub fn tail_len(t: usize, tail_fraction: f64) -> usize {
    let raw = (tail_fraction * t as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(t)
}

/// Residual training pairs from `PAIR`-tagged traces, ordered by `pair_id`.
///
/// Each side keeps its last `ceil(rho * T)` frames; the two tails are aligned
/// from the end and truncated to the shorter one.
pub fn build_residual_pairs<'a>(
    records: impl IntoIterator<Item = &'a TraceRecord>,
    fm: &FeatureMap,
    tail_fraction: f64,
) -> Result<Vec<ResidualPair>, TrainError> {
    let mut sides: BTreeMap<&str, (Option<&TraceRecord>, Option<&TraceRecord>)> = BTreeMap::new();
    for record in records {
        if let Some((pair_id, side)) = record.pair() {
            let entry = sides.entry(pair_id).or_default();
            match side {
                PairSide::SafeSide => entry.0 = Some(record),
                PairSide::UnsafeSide => entry.1 = Some(record),
            }
        }
    }
    let mut out = Vec::new();
    for (pair_id, sides) in sides {
        let (Some(safe), Some(unsafe_)) = sides else {
            return Err(TrainError::IncompletePair(pair_id.to_string()));
        };
        if safe.token_count == 0 || unsafe_.token_count == 0 {
            return Err(TrainError::EmptyPairSide(pair_id.to_string()));
        }
        let n = tail_len(safe.token_count, tail_fraction)
            .min(tail_len(unsafe_.token_count, tail_fraction));
        for back in (0..n).rev() {
            let ts = safe.token_count - back;
            let tu = unsafe_.token_count - back;
            out.push(ResidualPair {
                pair_id: pair_id.to_string(),
                safe_delta: fm.project_residual(safe.frame(ts), &safe.prompt_summary)?,
                unsafe_delta: fm.project_residual(unsafe_.frame(tu), &unsafe_.prompt_summary)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_store::{RoleTag, Split};

    fn trace(id: &str, t: usize, label: Label) -> TraceRecord {
        TraceRecord {
            trace_id: id.into(),
            hidden_dim: 2,
            token_count: t,
            prompt_summary: vec![0.0, 1.0],
            frames: (0..t * 2).map(|i| i as f32).collect(),
            label,
            split: Split::Train,
            role_tags: vec![],
            meta: Default::default(),
        }
    }

    #[test]
    fn hazard_labels_match_worked_example() {
        let r = trace("u", 8, Label::Unsafe { onset: Some(5) });
        let labels = build_hazard_labels(&r, 2).unwrap();
        assert_eq!(
            labels,
            vec![(1, false), (2, false), (3, true), (4, true), (5, true)]
        );
    }

    #[test]
    fn hazard_labels_safe_and_boundary() {
        let r = trace("s", 3, Label::Safe);
        assert_eq!(
            build_hazard_labels(&r, 16).unwrap(),
            vec![(1, false), (2, false), (3, false)]
        );
        let r = trace("u", 4, Label::Unsafe { onset: Some(1) });
        assert_eq!(build_hazard_labels(&r, 16).unwrap(), vec![(1, true)]);
    }

    #[test]
    fn unknown_onset_is_unusable() {
        let r = trace("u", 4, Label::Unsafe { onset: None });
        let err = build_hazard_labels(&r, 16).unwrap_err();
        assert!(err.to_string().contains("unusable for hazard supervision"));
        let fm = FeatureMap::identity(2);
        let (set, skipped) = build_hazard_samples([&r], &fm, 16).unwrap();
        assert!(set.is_empty());
        assert_eq!(skipped, 1);
    }

    #[test]
    fn support_pool_worked_example() {
        let fm = FeatureMap::identity(2);
        let safe = trace("s", 3, Label::Safe);
        let unsafe_ = trace("u", 3, Label::Unsafe { onset: Some(2) });
        let pools = build_support_pools([&safe, &unsafe_], &fm, 1).unwrap();
        assert_eq!(pools.positives.rows(), 3);
        assert_eq!(pools.negatives.rows(), 3);

        let err = build_support_pools([&unsafe_], &fm, 1).unwrap_err();
        assert!(matches!(err, TrainError::EmptyPool("support-positive")));
    }

    #[test]
    fn support_tags_route_frames() {
        let fm = FeatureMap::identity(2);
        let mut pos = trace("p", 2, Label::Unsafe { onset: Some(1) });
        pos.role_tags.push(RoleTag::SupportPositive);
        let mut neg = trace("n", 4, Label::Safe);
        neg.label = Label::Unsafe { onset: None };
        neg.role_tags.push(RoleTag::SupportNegative);
        let pools = build_support_pools([&pos, &neg], &fm, 0).unwrap();
        assert_eq!(pools.positives.rows(), 2);
        assert_eq!(pools.negatives.rows(), 4);
    }

    fn pair(id: &str, ts: usize, tu: usize) -> [TraceRecord; 2] {
        let mut s = trace(&format!("{id}-s"), ts, Label::Safe);
        s.role_tags.push(RoleTag::Pair {
            pair_id: id.into(),
            side: PairSide::SafeSide,
        });
        let mut u = trace(&format!("{id}-u"), tu, Label::Unsafe { onset: Some(1) });
        u.role_tags.push(RoleTag::Pair {
            pair_id: id.into(),
            side: PairSide::UnsafeSide,
        });
        [s, u]
    }

    #[test]
    fn residual_pairs_tail_counts() {
        let fm = FeatureMap::identity(2);
        let p = pair("a", 4, 4);
        assert_eq!(build_residual_pairs(&p, &fm, 0.5).unwrap().len(), 2);

        let p = pair("b", 3, 5);
        let pairs = build_residual_pairs(&p, &fm, 1.0).unwrap();
        assert_eq!(pairs.len(), 3);
        // aligned from the end: last pair uses last frames of both sides
        let last = pairs.last().unwrap();
        assert_eq!(last.safe_delta, vec![4.0, 4.0]);
        assert_eq!(last.unsafe_delta, vec![8.0, 8.0]);
        let first = &pairs[0];
        assert_eq!(first.safe_delta, vec![0.0, 0.0]);
        assert_eq!(first.unsafe_delta, vec![4.0, 4.0]);
    }

    #[test]
    fn residual_pairs_reject_empty_side() {
        let fm = FeatureMap::identity(2);
        let p = pair("c", 0, 3);
        assert!(matches!(
            build_residual_pairs(&p, &fm, 1.0),
            Err(TrainError::EmptyPairSide(_))
        ));
        assert!(matches!(
            build_residual_pairs(&p[1..], &fm, 1.0),
            Err(TrainError::IncompletePair(_))
        ));
    }

    #[test]
    fn tail_len_rounds_up() {
        assert_eq!(tail_len(4, 0.5), 2);
        assert_eq!(tail_len(3, 0.5), 2);
        assert_eq!(tail_len(5, 1.0), 5);
        assert_eq!(tail_len(1, 0.1), 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            c: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            tail_fraction: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
