use serde::{Deserialize, Serialize};

use super::EvalError;

/// One trace's ranking score and binary label (true = unsafe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub trace_id: String,
    pub score: f64,
    pub label: bool,
}

impl ScoredRow {
    pub fn new(trace_id: impl Into<String>, score: f64, label: bool) -> Self {
        Self {
            trace_id: trace_id.into(),
            score,
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Auroc,
    Auprc,
}

impl Metric {
    pub fn compute(self, rows: &[ScoredRow]) -> Result<f64, EvalError> {
        match self {
            Metric::Auroc => auroc(rows),
            Metric::Auprc => auprc(rows),
        }
    }

    /// Whether a resample with these class counts can be scored.
    pub(crate) fn admissible(self, positives: usize, n: usize) -> bool {
        match self {
            Metric::Auroc => positives > 0 && positives < n,
            Metric::Auprc => positives > 0,
        }
    }
}

fn sorted_by_score<'a>(rows: impl Iterator<Item = &'a ScoredRow>) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = rows.map(|r| (r.score, r.label)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

fn check_finite(rows: &[ScoredRow]) -> Result<(), EvalError> {
    if rows.iter().all(|r| r.score.is_finite()) {
        Ok(())
    } else {
        Err(EvalError::NonFinite)
    }
}

/// Mann-Whitney AUROC: probability a random positive outscores a random
/// negative, ties counted one half.
pub fn auroc(rows: &[ScoredRow]) -> Result<f64, EvalError> {
    check_finite(rows)?;
    auroc_sorted(&sorted_by_score(rows.iter()))
}

pub(crate) fn auroc_sorted(sorted: &[(f64, bool)]) -> Result<f64, EvalError> {
    let n_pos = sorted.iter().filter(|r| r.1).count();
    let n_neg = sorted.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    // Sum of positive ranks with tied groups given their average rank, doubled
    // to stay in exact integer arithmetic.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let pos_in_group = sorted[i..j].iter().filter(|r| r.1).count() as u128;
        // ranks i+1..=j, average (i + 1 + j) / 2
        twice_rank_sum += pos_in_group * (i + 1 + j) as u128;
        i = j;
    }
    let p = n_pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// Average precision: positives in descending score order, each contributing
/// the precision at its threshold group; equal scores form one group.
pub fn auprc(rows: &[ScoredRow]) -> Result<f64, EvalError> {
    check_finite(rows)?;
    auprc_sorted(&sorted_by_score(rows.iter()))
}

pub(crate) fn auprc_sorted(sorted: &[(f64, bool)]) -> Result<f64, EvalError> {
    let n_pos = sorted.iter().filter(|r| r.1).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut ap = 0.0;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut j = sorted.len();
    while j > 0 {
        let mut i = j;
        while i > 0 && sorted[i - 1].0 == sorted[j - 1].0 {
            i -= 1;
        }
        let group_pos = sorted[i..j].iter().filter(|r| r.1).count();
        tp += group_pos;
        seen += j - i;
        if group_pos > 0 {
            ap += group_pos as f64 / n_pos as f64 * (tp as f64 / seen as f64);
        }
        j = i;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(pos: &[f64], neg: &[f64]) -> Vec<ScoredRow> {
        pos.iter()
            .map(|&s| ScoredRow::new("p", s, true))
            .chain(neg.iter().map(|&s| ScoredRow::new("n", s, false)))
            .collect()
    }

    #[test]
    fn auroc_worked_example() {
        assert_eq!(auroc(&rows(&[0.35, 0.8], &[0.1, 0.4])).unwrap(), 0.75);
        assert_eq!(auroc(&rows(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(auroc(&rows(&[1.0, 1.0], &[1.0, 1.0, 1.0])).unwrap(), 0.5);
        assert!(matches!(
            auroc(&rows(&[1.0], &[])),
            Err(EvalError::SingleClass)
        ));
    }

    #[test]
    fn auprc_worked_examples() {
        assert_eq!(auprc(&rows(&[0.1, 0.7], &[])).unwrap(), 1.0);
        assert_eq!(auprc(&rows(&[0.9], &[0.1, 0.2])).unwrap(), 1.0);
        let ap = auprc(&rows(&[0.8, 0.35], &[0.4, 0.1])).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert!(matches!(
            auprc(&rows(&[], &[0.3])),
            Err(EvalError::NoPositives)
        ));
    }

    #[test]
    fn tied_group_counts_once() {
        // one positive and one negative share the top score
        let ap = auprc(&rows(&[0.9], &[0.9, 0.1])).unwrap();
        assert_eq!(ap, 0.5);
    }
}
