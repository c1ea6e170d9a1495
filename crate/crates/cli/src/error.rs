use aeric_core::calibrate::CalibrationError;
use aeric_core::eval::EvalError;
use aeric_core::featurize::FeatureError;
use aeric_core::monitor::MonitorError;
use aeric_core::pipeline::PipelineError;
use aeric_core::probes::TrainError;
use aeric_core::synth::SynthError;
use aeric_core::trace_store::TraceError;
use thiserror::Error;

/// Every failure maps onto one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad data or a failed check (exit 2).
    #[error("{0}")]
    Validation(String),
    /// Unparseable or inconsistent configuration (exit 3).
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem or stream failure (exit 4).
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Monitor(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Monitor(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(TrainError, FeatureError, CalibrationError, SynthError);

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json: {e}"))
    }
}
