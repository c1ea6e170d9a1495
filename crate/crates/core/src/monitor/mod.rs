//! The deployable same-pass monitor.
//!
//! Per token the monitor reads the current hidden state `h_t` and the cached
//! prompt summary `p`, forms `g_t = f_t - alpha * c_t + beta * r_t` from the
//! three heads, smooths it with `m_t = lambda * g_t + (1 - lambda) * m_{t-1}`
//! and fires the first time `m_t >= tau`.
//!
//! [`raw_score`] and [`step`] evaluate the definition literally.
//! [`CompiledMonitor`] folds projection, standardization and head weights
//! into `d`-dimensional vectors so a streaming step costs one dot product.

mod artifact;
mod compiled;
pub mod framing;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::FeatureError;

pub use artifact::{
    decode_artifact, encode_artifact, load_artifact, save_artifact, MonitorArtifact,
    ARTIFACT_MAGIC, ARTIFACT_VERSION,
};
pub use compiled::{CompiledMonitor, HeadSequences, MonitorStream, StepDetail, TraceScore};

pub const DEFAULT_LAMBDA: f64 = 0.3;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    VersionMismatch(u32),
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated artifact")]
    Truncated,
    #[error("inconsistent artifact: {0}")]
    Inconsistent(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("threshold is unset")]
    ThresholdUnset,
    #[error("non-finite raw score")]
    NonFinite,
    #[error("EMA coefficient must lie in (0, 1], got {0}")]
    BadLambda(f64),
    #[error("no frames to score")]
    NoFrames,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Head outputs and their composition for one token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScore {
    pub g: f64,
    pub f: f64,
    pub c: f64,
    pub r: f64,
}

/// Reference evaluation of the composite score through the explicit projection.
pub fn raw_score(art: &MonitorArtifact, h: &[f32], p: &[f32]) -> Result<RawScore, MonitorError> {
    let fm = &art.feature_map;
    let state = fm.project_state(h)?;
    let resid = fm.project_residual(h, p)?;
    let f = art.hazard.score(&state);
    let c = art.support.score(&state);
    let r = art.residual.score(&resid);
    let g = f - art.alpha * c + art.beta * r;
    if !g.is_finite() {
        return Err(MonitorError::NonFinite);
    }
    Ok(RawScore { g, f, c, r })
}

/// Per-generation EMA and trigger state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub m: f64,
    /// Tokens consumed so far.
    pub t: usize,
    pub triggered: bool,
    /// 1-based token index of the first crossing.
    pub trigger_step: Option<usize>,
    pub last_g: f64,
}

impl Default for MonitorState {
    fn default() -> Self {
        Self::with_initial(0.0)
    }
}

impl MonitorState {
    pub fn with_initial(m0: f64) -> Self {
        Self {
            m: m0,
            t: 0,
            triggered: false,
            trigger_step: None,
            last_g: 0.0,
        }
    }

    /// Applies the trigger rule to the current `m`; returns true on the first crossing.
    pub(crate) fn check_trigger(&mut self, threshold: f64) -> bool {
        if !self.triggered && self.m >= threshold {
            self.triggered = true;
            self.trigger_step = Some(self.t);
            true
        } else {
            false
        }
    }
}

pub fn check_lambda(lambda: f64) -> Result<(), MonitorError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(MonitorError::BadLambda(lambda))
    }
}

/// `m_new = lambda * g + (1 - lambda) * m_old`; advances `t`.
pub fn ema_step(state: MonitorState, g: f64, lambda: f64) -> Result<MonitorState, MonitorError> {
    check_lambda(lambda)?;
    if !g.is_finite() {
        return Err(MonitorError::NonFinite);
    }
    Ok(MonitorState {
        m: lambda * g + (1.0 - lambda) * state.m,
        t: state.t + 1,
        last_g: g,
        ..state
    })
}

/// One reference monitor step: score, smooth, and apply the latching trigger.
/// Returns the new state, `m_t`, and whether this step was the first crossing.
pub fn step(
    art: &MonitorArtifact,
    state: MonitorState,
    h: &[f32],
    p: &[f32],
) -> Result<(MonitorState, f64, bool), MonitorError> {
    let threshold = art.threshold.ok_or(MonitorError::ThresholdUnset)?;
    let score = raw_score(art, h, p)?;
    let mut next = ema_step(state, score.g, art.lambda)?;
    let fired = next.check_trigger(threshold);
    Ok((next, next.m, fired))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_arithmetic() {
        let s = ema_step(MonitorState::default(), 1.0, 0.3).unwrap();
        assert!((s.m - 0.3).abs() < 1e-15);
        let s = ema_step(s, 1.0, 0.3).unwrap();
        assert!((s.m - 0.51).abs() < 1e-15);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn ema_lambda_one_tracks_input() {
        let mut s = MonitorState::default();
        for g in [0.5, -2.0, 7.25] {
            s = ema_step(s, g, 1.0).unwrap();
            assert_eq!(s.m, g);
        }
    }

    #[test]
    fn ema_rejects_bad_inputs() {
        assert!(matches!(
            ema_step(MonitorState::default(), f64::NAN, 0.3),
            Err(MonitorError::NonFinite)
        ));
        assert!(matches!(
            ema_step(MonitorState::default(), 1.0, 0.0),
            Err(MonitorError::BadLambda(_))
        ));
        assert!(ema_step(MonitorState::default(), 1.0, 1.5).is_err());
    }

    #[test]
    fn ema_matches_closed_form() {
        let lambda = 0.3;
        let gs: Vec<f64> = (0..64)
            .map(|i| ((i * 7919) % 101) as f64 / 13.0 - 3.0)
            .collect();
        let mut s = MonitorState::default();
        for &g in &gs {
            s = ema_step(s, g, lambda).unwrap();
        }
        let n = gs.len() as i32;
        let closed: f64 = gs
            .iter()
            .enumerate()
            .map(|(i, g)| lambda * (1.0 - lambda).powi(n - 1 - i as i32) * g)
            .sum();
        assert!((s.m - closed).abs() < 1e-9);
    }

    #[test]
    fn trigger_latches_at_first_crossing() {
        let mut s = MonitorState::default();
        let mut fired_at = Vec::new();
        for _ in 0..5 {
            s = ema_step(s, 1.0, 0.3).unwrap();
            if s.check_trigger(0.5) {
                fired_at.push(s.t);
            }
        }
        assert_eq!(fired_at, vec![2]);
        assert_eq!(s.trigger_step, Some(2));
        assert!(s.triggered);
    }
}
