//! Declarative run configuration: one JSON document, every field optional.
//! Precedence is flags > config file > built-in defaults.

use std::path::{Path, PathBuf};

use aeric_core::calibrate::{DEFAULT_BUDGET, DEFAULT_WINDOW};
use aeric_core::eval::{
    BenchFixture, DEFAULT_LAMBDA_SET, DEFAULT_LEVEL, DEFAULT_N_BOOT, DEFAULT_TRIGGER_KS,
};
use aeric_core::featurize::{ProjectionMethod, DEFAULT_PROJECTION_DIM};
use aeric_core::pipeline::PipelineConfig;
use aeric_core::probes::{TrainConfig, DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID, DEFAULT_RHO_GRID};
use aeric_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub artifact: Option<PathBuf>,
    /// Directory of per-tail-fraction head artifacts written by `train`.
    pub heads: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Directory receiving the text report and its JSON twin.
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Featurize {
    pub k: usize,
    pub method: Method,
    /// Seed of the random projection; ignored by PCA.
    pub seed: u64,
}

impl Default for Featurize {
    fn default() -> Self {
        Self {
            k: DEFAULT_PROJECTION_DIM,
            method: Method::Pca,
            seed: 0,
        }
    }
}

impl Featurize {
    pub fn projection(&self) -> ProjectionMethod {
        match self.method {
            Method::Pca => ProjectionMethod::Pca,
            Method::Random => ProjectionMethod::Random { seed: self.seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda_set: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA_GRID.to_vec(),
            beta: DEFAULT_BETA_GRID.to_vec(),
            rho: DEFAULT_RHO_GRID.to_vec(),
            lambda_set: DEFAULT_LAMBDA_SET.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub budget: f64,
    /// Early-harm window `K` in tokens.
    pub window: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
    pub ks: Vec<usize>,
}

impl Default for Eval {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_N_BOOT,
            level: DEFAULT_LEVEL,
            seed: 0,
            ks: DEFAULT_TRIGGER_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bench {
    pub reps: usize,
    pub warmup: usize,
    pub self_check: bool,
    /// Workload used when no dataset/artifact is given.
    pub fixture: BenchFixture,
}

impl Default for Bench {
    fn default() -> Self {
        Self {
            reps: 30,
            warmup: 3,
            self_check: false,
            fixture: BenchFixture::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub featurize: Featurize,
    pub train: TrainConfig,
    pub grids: Grids,
    /// EMA coefficient used for grid selection, calibration and evaluation.
    pub lambda: f64,
    pub calibration: Calibration,
    pub eval: Eval,
    pub bench: Bench,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            synth: SynthConfig::reference(),
            featurize: Featurize::default(),
            train: TrainConfig::default(),
            grids: Grids::default(),
            lambda: aeric_core::monitor::DEFAULT_LAMBDA,
            calibration: Calibration::default(),
            eval: Eval::default(),
            bench: Bench::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses a config document; errors carry serde's line/column and field name.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let grids = &self.grids;
        for (name, grid) in [
            ("grids.alpha", &grids.alpha),
            ("grids.beta", &grids.beta),
            ("grids.rho", &grids.rho),
            ("grids.lambda_set", &grids.lambda_set),
        ] {
            if grid.is_empty() {
                return Err(CliError::Config(format!("{name} must not be empty")));
            }
            if grid.iter().any(|x| !x.is_finite()) {
                return Err(CliError::Config(format!("{name} has a non-finite entry")));
            }
        }
        if grids.rho.iter().any(|&r| r <= 0.0 || r > 1.0) {
            return Err(CliError::Config(
                "grids.rho entries must lie in (0, 1]".into(),
            ));
        }
        for (name, l) in std::iter::once(("lambda", self.lambda))
            .chain(grids.lambda_set.iter().map(|&l| ("grids.lambda_set", l)))
        {
            if !(l > 0.0 && l <= 1.0) {
                return Err(CliError::Config(format!(
                    "{name} must lie in (0, 1], got {l}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.calibration.budget) {
            return Err(CliError::Config(format!(
                "calibration.budget must lie in [0, 1], got {}",
                self.calibration.budget
            )));
        }
        if self.calibration.window == 0 {
            return Err(CliError::Config(
                "calibration.window must be positive".into(),
            ));
        }
        if self.featurize.k == 0 {
            return Err(CliError::Config("featurize.k must be positive".into()));
        }
        if !(self.eval.level > 0.0 && self.eval.level < 1.0) {
            return Err(CliError::Config(format!(
                "eval.level must lie in (0, 1), got {}",
                self.eval.level
            )));
        }
        if self.eval.ks.is_empty() {
            return Err(CliError::Config("eval.ks must not be empty".into()));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.synth
            .validate()
            .map_err(|e| CliError::Config(format!("synth: {e}")))?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            k: self.featurize.k,
            projection: self.featurize.projection(),
            train: self.train.clone(),
            alpha_grid: self.grids.alpha.clone(),
            beta_grid: self.grids.beta.clone(),
            rho_grid: self.grids.rho.clone(),
            lambda: self.lambda,
            budget: self.calibration.budget,
            window: self.calibration.window,
        }
    }

    /// SHA-256 over the canonical JSON of every setting except file paths, so
    /// the same settings hash identically wherever the files live.
    pub fn hash(&self) -> String {
        let mut settings = self.clone();
        settings.paths = Paths::default();
        let json = serde_json::to_vec(&settings).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require(value: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::Config(format!("missing path: {what} (flag or paths.{what})")))
    }
}
