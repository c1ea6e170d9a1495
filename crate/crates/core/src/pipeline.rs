//! Train-split fitting, dev-split grid selection and cal-split calibration
//! chained into one deterministic run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{calibration_input, select_threshold, CalibrationError, CalibrationResult};
use crate::featurize::{fit_feature_map, FeatureError, FeatureMap, ProjectionMethod};
use crate::linalg::Matrix;
use crate::monitor::{CompiledMonitor, MonitorArtifact, MonitorError};
use crate::probes::{
    build_hazard_samples, build_residual_pairs, build_support_pools, grid_select,
    train_logistic_head, train_residual_head, GridReport, HeadRole, LinearHead, TrainConfig,
    TrainError,
};
use crate::trace_store::{Label, Split, TraceDataset, TraceRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("split {0} has no usable traces")]
    EmptySplit(Split),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub projection: ProjectionMethod,
    pub train: TrainConfig,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub lambda: f64,
    pub budget: f64,
    pub window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: crate::featurize::DEFAULT_PROJECTION_DIM,
            projection: ProjectionMethod::Pca,
            train: TrainConfig::default(),
            alpha_grid: crate::probes::DEFAULT_ALPHA_GRID.to_vec(),
            beta_grid: crate::probes::DEFAULT_BETA_GRID.to_vec(),
            rho_grid: crate::probes::DEFAULT_RHO_GRID.to_vec(),
            lambda: crate::monitor::DEFAULT_LAMBDA,
            budget: crate::calibrate::DEFAULT_BUDGET,
            window: crate::calibrate::DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHeads {
    pub hazard: LinearHead,
    pub support: LinearHead,
    /// One residual head per tail fraction, in `rho_grid` order.
    pub residual: Vec<(f64, LinearHead)>,
    pub hazard_converged: bool,
    pub support_converged: bool,
    pub skipped_for_hazard: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Selected coefficients and calibrated threshold.
    pub artifact: MonitorArtifact,
    pub heads: TrainedHeads,
    pub grid: GridReport,
    pub calibration: CalibrationResult,
}

fn is_pair(r: &TraceRecord) -> bool {
    r.pair().is_some()
}

fn scorable(r: &TraceRecord) -> bool {
    r.token_count > 0 && r.label != Label::PromptOnly
}

/// Train-split states (every frame) and prompt-relative residuals. Residual
/// statistics come from the pair traces when there are any.
pub fn feature_training_matrices(dataset: &TraceDataset) -> (Matrix, Matrix) {
    let d = dataset.hidden_dim;
    let mut states = Matrix::with_cols(d);
    let mut residuals = Matrix::with_cols(d);
    let train: Vec<&TraceRecord> = dataset
        .split(Split::Train)
        .filter(|r| scorable(r))
        .collect();
    let has_pairs = train.iter().any(|r| is_pair(r));
    let mut delta = vec![0.0f64; d];
    for r in &train {
        for h in r.frame_rows() {
            states.push_row_f32(h);
            if !has_pairs || is_pair(r) {
                for (j, x) in delta.iter_mut().enumerate() {
                    *x = h[j] as f64 - r.prompt_summary[j] as f64;
                }
                residuals.push_row(&delta);
            }
        }
    }
    (states, residuals)
}

pub fn fit_features(
    dataset: &TraceDataset,
    cfg: &PipelineConfig,
) -> Result<FeatureMap, PipelineError> {
    let (states, residuals) = feature_training_matrices(dataset);
    if states.rows() == 0 {
        return Err(PipelineError::EmptySplit(Split::Train));
    }
    Ok(fit_feature_map(&states, &residuals, cfg.k, cfg.projection)?)
}

/// Hazard and support heads on non-pair train traces; one residual head per `rho`.
pub fn train_heads(
    dataset: &TraceDataset,
    fm: &FeatureMap,
    cfg: &PipelineConfig,
) -> Result<TrainedHeads, PipelineError> {
    cfg.train.validate()?;
    let train: Vec<&TraceRecord> = dataset
        .split(Split::Train)
        .filter(|r| scorable(r) && !is_pair(r))
        .collect();
    let (hazard_set, skipped) = build_hazard_samples(train.iter().copied(), fm, cfg.train.horizon)?;
    let hazard = train_logistic_head(&hazard_set, HeadRole::Hazard, &cfg.train)?;
    let support_set =
        build_support_pools(train.iter().copied(), fm, cfg.train.horizon)?.into_samples();
    let support = train_logistic_head(&support_set, HeadRole::Support, &cfg.train)?;

    let mut residual = Vec::with_capacity(cfg.rho_grid.len());
    for &rho in &cfg.rho_grid {
        let pairs = build_residual_pairs(dataset.split(Split::Train), fm, rho)?;
        let fit = train_residual_head(&pairs, &cfg.train)?;
        residual.push((rho, fit.head));
    }
    Ok(TrainedHeads {
        hazard: hazard.head,
        support: support.head,
        residual,
        hazard_converged: hazard.converged,
        support_converged: support.converged,
        skipped_for_hazard: skipped,
    })
}

/// Artifact carrying `heads` with the residual head for `rho`; no threshold.
pub fn assemble(
    fm: &FeatureMap,
    heads: &TrainedHeads,
    alpha: f64,
    beta: f64,
    rho: f64,
    cfg: &PipelineConfig,
) -> MonitorArtifact {
    let residual = heads
        .residual
        .iter()
        .find(|(r, _)| *r == rho)
        .map(|(_, h)| h.clone())
        .unwrap_or_else(|| LinearHead::zeros(HeadRole::Residual, fm.k));
    let mut art = MonitorArtifact::untrained(fm.clone(), cfg.lambda, cfg.train.horizon as u32);
    art.hazard = heads.hazard.clone();
    art.support = heads.support.clone();
    art.residual = residual;
    art.alpha = alpha;
    art.beta = beta;
    let mut prov = BTreeMap::new();
    prov.insert("tail_fraction".to_string(), format!("{rho}"));
    prov.insert("c".to_string(), format!("{}", cfg.train.c));
    prov.insert("seed".to_string(), format!("{}", cfg.train.seed));
    art.provenance = prov;
    art
}

pub fn run_pipeline(
    dataset: &TraceDataset,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let fm = fit_features(dataset, cfg)?;
    let heads = train_heads(dataset, &fm, cfg)?;

    let dev: Vec<&TraceRecord> = dataset.split(Split::Dev).filter(|r| scorable(r)).collect();
    if dev.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Dev));
    }
    let grid = grid_select(
        &dev,
        &fm,
        &heads.hazard,
        &heads.support,
        &heads.residual,
        &cfg.alpha_grid,
        &cfg.beta_grid,
        cfg.lambda,
    )?;
    let sel = &grid.selected;
    let mut artifact = assemble(&fm, &heads, sel.alpha, sel.beta, sel.rho, cfg);

    let cal: Vec<&TraceRecord> = dataset.split(Split::Cal).filter(|r| scorable(r)).collect();
    if cal.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Cal));
    }
    let monitor = CompiledMonitor::new(&artifact)?;
    let input = calibration_input(&monitor, cal.iter().copied(), cfg.budget, cfg.window)?;
    let calibration = select_threshold(&input)?;
    artifact.threshold = Some(calibration.threshold);
    artifact
        .provenance
        .insert("budget".to_string(), format!("{}", cfg.budget));
    artifact
        .provenance
        .insert("window".to_string(), format!("{}", cfg.window));
    Ok(PipelineOutput {
        artifact,
        heads,
        grid,
        calibration,
    })
}
