//! Experiment configs, presets, run records and the command runners behind the CLI.

mod config;
mod presets;
mod record;
mod runner;

pub use config::{
    apply_override, load_config_value, parse_override, resolve_config, Arch, BlobsSpec, Command, DataSource,
    ExperimentConfig, IdxSpec, ModelSpec, SurfaceConfig, SweepConfig,
};
pub use presets::{preset, PRESETS};
pub use record::{
    accuracy_csv, scatter_csv, summarize, AccuracySummary, ModelRun, RunRecord, SweepRow, TwinRun,
    ACCURACY_CSV_HEADER, SCATTER_CSV_HEADER, TOOL,
};
pub use runner::{blf_logit_bound, build_model, load_splits, run_command, RunOutput, Splits};
