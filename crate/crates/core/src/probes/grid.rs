//! Development-set selection of `(alpha, beta, rho)`.

use serde::{Deserialize, Serialize};

use super::{LinearHead, TrainError};
use crate::eval::{auroc, ScoredRow};
use crate::featurize::FeatureMap;
use crate::monitor::{CompiledMonitor, HeadSequences, MonitorArtifact};
use crate::trace_store::{Label, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSelection {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub selected: GridSelection,
    pub cells: Vec<GridCell>,
    /// Cells sharing the selected AUROC that lost the tie-break.
    pub tied: usize,
}

fn terminal_ema(values: &[f64], lambda: f64) -> f64 {
    values
        .iter()
        .fold(0.0, |m, &g| lambda * g + (1.0 - lambda) * m)
}

/// Picks the grid point with the highest terminal-EMA AUROC on `dev`.
///
/// `residual_heads` holds one residual head per tail fraction `rho`; the
/// hazard and support heads are shared. Ties go to the smaller `beta`, then
/// the smaller `alpha`, then the larger `rho`.
#[allow(clippy::too_many_arguments)]
pub fn grid_select(
    dev: &[&TraceRecord],
    fm: &FeatureMap,
    hazard: &LinearHead,
    support: &LinearHead,
    residual_heads: &[(f64, LinearHead)],
    alpha_grid: &[f64],
    beta_grid: &[f64],
    lambda: f64,
) -> Result<GridReport, TrainError> {
    if alpha_grid.is_empty() || beta_grid.is_empty() || residual_heads.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let scored: Vec<&TraceRecord> = dev
        .iter()
        .copied()
        .filter(|r| r.token_count > 0 && matches!(r.label, Label::Safe | Label::Unsafe { .. }))
        .collect();
    let positives = scored.iter().filter(|r| r.label.is_unsafe()).count();
    if positives == 0 || positives == scored.len() {
        return Err(TrainError::DegenerateDev);
    }

    // Per rho: head sequences for every dev trace.
    let mut per_rho: Vec<(f64, Vec<HeadSequences>)> = Vec::with_capacity(residual_heads.len());
    for (rho, residual) in residual_heads {
        let mut art = MonitorArtifact::untrained(fm.clone(), lambda, 0);
        art.hazard = hazard.clone();
        art.support = support.clone();
        art.residual = residual.clone();
        let monitor = CompiledMonitor::new(&art).map_err(|e| TrainError::Config(e.to_string()))?;
        let seqs = scored
            .iter()
            .map(|r| monitor.head_sequences(r))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        per_rho.push((*rho, seqs));
    }

    let mut betas = beta_grid.to_vec();
    betas.sort_by(f64::total_cmp);
    let mut alphas = alpha_grid.to_vec();
    alphas.sort_by(f64::total_cmp);
    let mut rho_order: Vec<usize> = (0..per_rho.len()).collect();
    rho_order.sort_by(|&a, &b| per_rho[b].0.total_cmp(&per_rho[a].0));

    let mut cells = Vec::new();
    let mut best: Option<GridCell> = None;
    let mut g = Vec::new();
    for &beta in &betas {
        for &alpha in &alphas {
            for &ri in &rho_order {
                let (rho, seqs) = &per_rho[ri];
                let rows: Vec<ScoredRow> = scored
                    .iter()
                    .zip(seqs)
                    .map(|(rec, s)| {
                        g.clear();
                        g.extend((0..s.f.len()).map(|t| s.f[t] - alpha * s.c[t] + beta * s.r[t]));
                        ScoredRow::new(
                            rec.trace_id.clone(),
                            terminal_ema(&g, lambda),
                            rec.label.is_unsafe(),
                        )
                    })
                    .collect();
                let a = auroc(&rows).map_err(|_| TrainError::DegenerateDev)?;
                let cell = GridCell {
                    alpha,
                    beta,
                    rho: *rho,
                    auroc: a,
                };
                if best.as_ref().map_or(true, |b| a > b.auroc) {
                    best = Some(cell.clone());
                }
                cells.push(cell);
            }
        }
    }
    let best = best.expect("non-empty grid");
    let tied = cells.iter().filter(|c| c.auroc == best.auroc).count() - 1;
    Ok(GridReport {
        selected: GridSelection {
            alpha: best.alpha,
            beta: best.beta,
            rho: best.rho,
            auroc: best.auroc,
        },
        cells,
        tied,
    })
}
