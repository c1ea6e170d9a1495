//! Ranking metrics with bootstrap intervals, trigger accounting, score-family
//! ablations, EMA sensitivity sweeps and the monitor overhead benchmark.

mod bench;
mod bootstrap;
mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::{CompiledMonitor, MonitorArtifact, MonitorError};
use crate::trace_store::{Label, TraceRecord};

pub use bench::{bench_overhead, format_bench, BenchConfig, BenchFixture, BenchReport};
pub use bootstrap::{
    bootstrap_ci, bootstrap_replicates, BootstrapCi, Replicates, DEFAULT_LEVEL, DEFAULT_N_BOOT,
    MAX_REDRAWS,
};
pub use metrics::{auprc, auroc, Metric, ScoredRow};

pub const DEFAULT_TRIGGER_KS: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_LAMBDA_SET: [f64; 5] = [0.1, 0.2, 0.3, 0.5, 0.7];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric needs both classes")]
    SingleClass,
    #[error("metric needs at least one positive")]
    NoPositives,
    #[error("non-finite score")]
    NonFinite,
    #[error("every bootstrap replicate was degenerate")]
    AllReplicatesDegenerate,
    #[error("no rows")]
    Empty,
    #[error("trace {0}: trigger step exceeds its length")]
    BadTriggerRow(String),
    #[error("no frames")]
    NoFrames,
    #[error("timer resolution insufficient: {0}")]
    TimerResolution(String),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

/// One prompt's trigger outcome against its no-stop generation length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRow {
    pub trace_id: String,
    pub t_nostop: usize,
    pub trigger_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerCurve {
    /// `(K, fraction of rows with trigger_step <= K)`.
    pub at_k: Vec<(usize, f64)>,
    /// Mean over all rows of `T_nostop - trigger_step`, zero when not triggered.
    pub mean_withheld: f64,
    pub n_rows: usize,
}

impl TriggerCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.at_k.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

pub fn trigger_curve(rows: &[TriggerRow], ks: &[usize]) -> Result<TriggerCurve, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    for row in rows {
        if matches!(row.trigger_step, Some(s) if s > row.t_nostop || s == 0) {
            return Err(EvalError::BadTriggerRow(row.trace_id.clone()));
        }
    }
    let n = rows.len() as f64;
    let at_k = ks
        .iter()
        .map(|&k| {
            let hits = rows
                .iter()
                .filter(|r| matches!(r.trigger_step, Some(s) if s <= k))
                .count();
            (k, hits as f64 / n)
        })
        .collect();
    let withheld: usize = rows
        .iter()
        .map(|r| r.trigger_step.map_or(0, |s| r.t_nostop - s))
        .sum();
    Ok(TriggerCurve {
        at_k,
        mean_withheld: withheld as f64 / n,
        n_rows: rows.len(),
    })
}

/// Which score terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationMode {
    /// Hazard head alone (`alpha = beta = 0`).
    FutureOnly,
    /// Hazard minus support (`beta = 0`).
    FutureSupport,
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::FutureOnly,
        AblationMode::FutureSupport,
        AblationMode::Full,
    ];

    pub fn coefficients(self, art: &MonitorArtifact) -> (f64, f64) {
        match self {
            AblationMode::FutureOnly => (0.0, 0.0),
            AblationMode::FutureSupport => (art.alpha, 0.0),
            AblationMode::Full => (art.alpha, art.beta),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::FutureOnly => "future only",
            AblationMode::FutureSupport => "future + support",
            AblationMode::Full => "full",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "future-only" => Ok(AblationMode::FutureOnly),
            "future-support" => Ok(AblationMode::FutureSupport),
            "full" => Ok(AblationMode::Full),
            other => Err(format!("unknown ablation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
    pub trigger_ks: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_N_BOOT,
            level: DEFAULT_LEVEL,
            seed: 0,
            trigger_ks: DEFAULT_TRIGGER_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricWithCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub skipped_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: AblationMode,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub auroc: MetricWithCi,
    pub auprc: MetricWithCi,
    /// Present when the artifact carries a threshold; computed over unsafe traces.
    pub threshold: Option<f64>,
    pub triggers: Option<TriggerCurve>,
    pub n_rows: usize,
    pub n_positive: usize,
    pub seed: u64,
    pub n_boot: usize,
}

/// Terminal-EMA rows for every scorable safe/unsafe trace.
pub fn scored_rows<'a>(
    monitor: &CompiledMonitor,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<Vec<ScoredRow>, EvalError> {
    let mut rows = Vec::new();
    for record in records {
        let label = match record.label {
            Label::Safe => false,
            Label::Unsafe { .. } => true,
            Label::PromptOnly => continue,
        };
        if record.token_count == 0 {
            continue;
        }
        let score = monitor.score_trace(record)?;
        rows.push(ScoredRow::new(
            record.trace_id.clone(),
            score.terminal_m,
            label,
        ));
    }
    Ok(rows)
}

/// Trigger rows for the unsafe traces under the monitor's threshold.
pub fn trigger_rows<'a>(
    monitor: &CompiledMonitor,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<Vec<TriggerRow>, EvalError> {
    let mut rows = Vec::new();
    for record in records {
        if !record.label.is_unsafe() || record.token_count == 0 {
            continue;
        }
        let score = monitor.score_trace(record)?;
        rows.push(TriggerRow {
            trace_id: record.trace_id.clone(),
            t_nostop: record.token_count,
            trigger_step: score.trigger_step,
        });
    }
    Ok(rows)
}

pub fn evaluate(
    monitor: &CompiledMonitor,
    records: &[&TraceRecord],
    mode: AblationMode,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let rows = scored_rows(monitor, records.iter().copied())?;
    let with_ci = |metric: Metric| -> Result<MetricWithCi, EvalError> {
        let point = metric.compute(&rows)?;
        let ci = bootstrap_ci(&rows, metric, opts.n_boot, opts.level, opts.seed)?;
        Ok(MetricWithCi {
            point,
            lo: ci.lo,
            hi: ci.hi,
            skipped_replicates: ci.skipped,
        })
    };
    let auroc = with_ci(Metric::Auroc)?;
    let auprc = with_ci(Metric::Auprc)?;
    let triggers = match monitor.threshold() {
        Some(_) => {
            let trows = trigger_rows(monitor, records.iter().copied())?;
            if trows.is_empty() {
                None
            } else {
                Some(trigger_curve(&trows, &opts.trigger_ks)?)
            }
        }
        None => None,
    };
    Ok(EvalReport {
        mode,
        alpha: monitor.alpha(),
        beta: monitor.beta(),
        lambda: monitor.lambda(),
        auroc,
        auprc,
        threshold: monitor.threshold(),
        triggers,
        n_rows: rows.len(),
        n_positive: rows.iter().filter(|r| r.label).count(),
        seed: opts.seed,
        n_boot: opts.n_boot,
    })
}

/// Scores `records` under the coefficients of `mode`, heads and threshold unchanged.
pub fn ablation_eval(
    art: &MonitorArtifact,
    records: &[&TraceRecord],
    mode: AblationMode,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let (alpha, beta) = mode.coefficients(art);
    let monitor = CompiledMonitor::with_coefficients(art, alpha, beta, art.lambda)?;
    evaluate(&monitor, records, mode, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub rows: Vec<(f64, f64)>,
}

impl LambdaSweep {
    /// `max - min` AUROC across the sweep.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, a)| {
                (lo.min(a), hi.max(a))
            });
        hi - lo
    }
}

/// Terminal-EMA AUROC for each `lambda`, heads and score coefficients fixed.
pub fn lambda_sweep(
    art: &MonitorArtifact,
    records: &[&TraceRecord],
    lambdas: &[f64],
) -> Result<LambdaSweep, EvalError> {
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let monitor = CompiledMonitor::with_coefficients(art, art.alpha, art.beta, lambda)?;
        let scored = scored_rows(&monitor, records.iter().copied())?;
        rows.push((lambda, auroc(&scored)?));
    }
    Ok(LambdaSweep { rows })
}

/// Ranking table: one line per (report, metric) with point estimate and interval.
pub fn format_ranking_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<6} {:>8} {:>20}",
        "mode", "metric", "point", "95% CI"
    );
    for r in reports {
        for (name, m) in [("AUROC", &r.auroc), ("AUPRC", &r.auprc)] {
            let _ = writeln!(
                out,
                "{:<18} {:<6} {:>8.4} {:>20}",
                r.mode.label(),
                name,
                m.point,
                format!("[{:.4}, {:.4}]", m.lo, m.hi)
            );
        }
    }
    out
}

/// Trigger table: trigger@K columns and mean withheld tokens per report.
pub fn format_trigger_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let ks: Vec<usize> = reports
        .iter()
        .find_map(|r| r.triggers.as_ref())
        .map(|t| t.at_k.iter().map(|(k, _)| *k).collect())
        .unwrap_or_default();
    let _ = write!(out, "{:<18}", "mode");
    for k in &ks {
        let _ = write!(out, " {:>11}", format!("trigger@{k}"));
    }
    let _ = writeln!(out, " {:>14}", "mean withheld");
    for r in reports {
        let _ = write!(out, "{:<18}", r.mode.label());
        match &r.triggers {
            Some(t) => {
                for (_, v) in &t.at_k {
                    let _ = write!(out, " {:>11.4}", v);
                }
                let _ = writeln!(out, " {:>14.2}", t.mean_withheld);
            }
            None => {
                let _ = writeln!(out, " (threshold unset)");
            }
        }
    }
    out.push_str("mean withheld counts non-triggered prompts as zero\n");
    out
}

pub fn format_lambda_table(sweep: &LambdaSweep) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>8}", "lambda", "AUROC");
    for (lambda, a) in &sweep.rows {
        let _ = writeln!(out, "{:<8} {:>8.4}", lambda, a);
    }
    let _ = writeln!(out, "spread {:.4}", sweep.spread());
    out
}
