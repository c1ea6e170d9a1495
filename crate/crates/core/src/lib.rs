//! Same-pass safety monitor over decoder hidden states.
//!
//! Three linear heads read each generated token's hidden state: a hazard head
//! (harm within the next `H` tokens), a support head (evidence of a safe
//! continuation) and a residual head over the state minus the prompt summary.
//! Their combination is smoothed by an EMA and compared to a threshold
//! calibrated on held-out safe traffic.

pub mod calibrate;
pub mod eval;
pub mod featurize;
pub mod linalg;
pub mod monitor;
pub mod pipeline;
pub mod probes;
pub mod synth;
pub mod trace_store;

pub use calibrate::{select_threshold, CalibrationInput, CalibrationResult};
pub use eval::{auprc, auroc, AblationMode, EvalOptions, EvalReport, ScoredRow};
pub use featurize::{fit_feature_map, FeatureMap, ProjectionMethod};
pub use monitor::{
    load_artifact, save_artifact, CompiledMonitor, MonitorArtifact, MonitorError, MonitorState,
    MonitorStream,
};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
pub use probes::{HeadRole, LinearHead, TrainConfig};
pub use synth::{generate_dataset, GroundTruth, SynthConfig};
pub use trace_store::{
    parse_dataset, read_dataset, write_dataset, Label, RoleTag, Split, TraceDataset, TraceRecord,
};
