//! Source-side safe-budget threshold selection.
//!
//! `tau*` maximizes the fraction of harmful calibration traces whose EMA
//! reaches the threshold within the first `K` tokens, subject to the fraction
//! of safe calibration traces that ever reach it being at most `B`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::{CompiledMonitor, MonitorError};
use crate::trace_store::{Label, TraceRecord};

pub const DEFAULT_BUDGET: f64 = 0.10;
pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("empty {0} score list")]
    Empty(&'static str),
    #[error("non-finite calibration score")]
    NonFinite,
    #[error("budget must lie in [0, 1], got {0}")]
    Budget(f64),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    /// `max_t m_t` over each full safe continuation.
    pub safe_max_scores: Vec<f64>,
    /// `max_{t <= K} m_t` for each harmful continuation.
    pub harm_window_scores: Vec<f64>,
    pub budget: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// `f64::INFINITY` when no finite threshold meets the budget with positive coverage.
    pub threshold: f64,
    pub safe_trigger_rate: f64,
    pub harm_trigger_at_k: f64,
    pub candidate_count: usize,
    pub budget: f64,
    pub window: usize,
}

fn fraction_at_or_above(tau: f64, scores: &[f64]) -> f64 {
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}

fn check(scores: &[f64], what: &'static str) -> Result<(), CalibrationError> {
    if scores.is_empty() {
        return Err(CalibrationError::Empty(what));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    Ok(())
}

/// Fraction of safe traces whose maximum EMA reaches `tau`.
pub fn safe_trigger_rate(tau: f64, safe_max_scores: &[f64]) -> Result<f64, CalibrationError> {
    check(safe_max_scores, "safe")?;
    Ok(fraction_at_or_above(tau, safe_max_scores))
}

/// Fraction of harmful traces that reach `tau` within the window.
pub fn harm_trigger_at_k(tau: f64, harm_window_scores: &[f64]) -> Result<f64, CalibrationError> {
    check(harm_window_scores, "harm")?;
    Ok(fraction_at_or_above(tau, harm_window_scores))
}

/// Exact maximizer over the observed scores plus `+inf`.
///
/// Both rates are step functions that only change at observed scores, so
/// this candidate set is exhaustive. Equal coverage resolves to the largest
/// threshold.
pub fn select_threshold(input: &CalibrationInput) -> Result<CalibrationResult, CalibrationError> {
    check(&input.safe_max_scores, "safe")?;
    check(&input.harm_window_scores, "harm")?;
    if !(0.0..=1.0).contains(&input.budget) {
        return Err(CalibrationError::Budget(input.budget));
    }
    let mut safe = input.safe_max_scores.clone();
    let mut harm = input.harm_window_scores.clone();
    safe.sort_by(f64::total_cmp);
    harm.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = safe.iter().chain(&harm).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);

    let (n_safe, n_harm) = (safe.len() as f64, harm.len() as f64);
    let at_or_above =
        |sorted: &[f64], tau: f64| sorted.len() - sorted.partition_point(|&s| s < tau);

    let mut best: Option<(f64, f64, f64)> = None;
    for &tau in &candidates {
        let safe_rate = at_or_above(&safe, tau) as f64 / n_safe;
        if safe_rate > input.budget {
            continue;
        }
        let coverage = at_or_above(&harm, tau) as f64 / n_harm;
        // ascending candidates: `>=` keeps the largest tau among equal coverage
        if best.map_or(true, |(_, _, c)| coverage >= c) {
            best = Some((tau, safe_rate, coverage));
        }
    }
    let (threshold, safe_trigger_rate, harm_trigger_at_k) =
        best.expect("+inf candidate always satisfies the budget");
    Ok(CalibrationResult {
        threshold,
        safe_trigger_rate,
        harm_trigger_at_k,
        candidate_count: candidates.len(),
        budget: input.budget,
        window: input.window,
    })
}

/// Builds calibration scores by replaying `records` through `monitor`: safe
/// traces contribute their full-trace maximum, unsafe traces their maximum
/// over the first `window` tokens. Other labels and empty traces are skipped.
pub fn calibration_input<'a>(
    monitor: &CompiledMonitor,
    records: impl IntoIterator<Item = &'a TraceRecord>,
    budget: f64,
    window: usize,
) -> Result<CalibrationInput, CalibrationError> {
    let mut safe_max_scores = Vec::new();
    let mut harm_window_scores = Vec::new();
    for record in records {
        if record.token_count == 0 {
            continue;
        }
        match record.label {
            Label::Safe => safe_max_scores.push(monitor.score_trace(record)?.max_m),
            Label::Unsafe { .. } => {
                harm_window_scores.push(monitor.score_trace(record)?.max_within(window))
            }
            Label::PromptOnly => {}
        }
    }
    Ok(CalibrationInput {
        safe_max_scores,
        harm_window_scores,
        budget,
        window,
    })
}

/// Text table with the columns budget, threshold, source safe trigger, source harm@K.
pub fn format_report(results: &[CalibrationResult]) -> String {
    let mut out = String::new();
    let window = results.first().map_or(DEFAULT_WINDOW, |r| r.window);
    out.push_str(&format!(
        "{:<12} {:>12} {:>20} {:>18}\n",
        "Safe budget",
        "Threshold",
        "Source safe trigger",
        format!("Source harm@{window}")
    ));
    for r in results {
        out.push_str(&format!(
            "{:<12} {:>12} {:>20.4} {:>18.4}\n",
            format!("{}%", r.budget * 100.0),
            if r.threshold.is_infinite() {
                "+inf".to_string()
            } else {
                format!("{:.4}", r.threshold)
            },
            r.safe_trigger_rate,
            r.harm_trigger_at_k
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(safe: &[f64], harm: &[f64], budget: f64) -> CalibrationInput {
        CalibrationInput {
            safe_max_scores: safe.to_vec(),
            harm_window_scores: harm.to_vec(),
            budget,
            window: 16,
        }
    }

    #[test]
    fn rate_examples() {
        assert!((safe_trigger_rate(0.5, &[0.2, 0.4, 0.9]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            safe_trigger_rate(f64::INFINITY, &[0.2, 0.4, 0.9]).unwrap(),
            0.0
        );
        assert_eq!(harm_trigger_at_k(1.0, &[0.5, 0.8, 1.2, 0.3]).unwrap(), 0.25);
        assert_eq!(harm_trigger_at_k(0.3, &[0.5, 0.8, 1.2, 0.3]).unwrap(), 1.0);
        assert!(matches!(
            safe_trigger_rate(0.0, &[]),
            Err(CalibrationError::Empty("safe"))
        ));
    }

    #[test]
    fn worked_example_selects_1_2() {
        let r = select_threshold(&input(&[0.2, 0.4, 0.9], &[0.5, 0.8, 1.2, 0.3], 0.10)).unwrap();
        assert_eq!(r.threshold, 1.2);
        assert_eq!(r.harm_trigger_at_k, 0.25);
        assert_eq!(r.safe_trigger_rate, 0.0);
        assert_eq!(r.candidate_count, 8);
    }

    #[test]
    fn unconstrained_budget_takes_min_harm() {
        let r = select_threshold(&input(&[0.2, 0.4, 0.9], &[0.5, 0.8, 1.2, 0.3], 1.0)).unwrap();
        assert_eq!(r.threshold, 0.3);
        assert_eq!(r.harm_trigger_at_k, 1.0);
    }

    #[test]
    fn infeasible_coverage_gives_infinity() {
        let r = select_threshold(&input(&[2.0, 3.0], &[0.1, 0.5], 0.0)).unwrap();
        assert_eq!(r.threshold, f64::INFINITY);
        assert_eq!(r.harm_trigger_at_k, 0.0);
        assert_eq!(r.safe_trigger_rate, 0.0);
    }

    #[test]
    fn report_has_table_columns() {
        let r = select_threshold(&input(&[0.2, 0.4, 0.9], &[0.5, 0.8, 1.2, 0.3], 0.10)).unwrap();
        let text = format_report(&[r]);
        assert!(text.contains("Source harm@16"));
        assert!(text.contains("1.2000"));
        assert!(text.contains("10%"));
    }
}
