//! Configuration, artifact I/O, evaluation and the experiment runners.

pub mod ablation;
pub mod config;
pub mod pipeline;
pub mod stats;

pub use ablation::{run_ablations, run_arms, run_lambda_sweep, AblationReport, Arm, LambdaSweepReport, Metric};
pub use config::{config_diff, ExperimentConfig, Preset, PredictorInit, StructureInit};
pub use pipeline::{run_pipeline, EvalReport, EvalTable, StageCache, Timings};
pub use stats::{mae, sign_test_p, PairedComparison};
