//! Run configuration, synthetic data, stage orchestration and report files.

pub mod config;
pub mod manifest;
pub mod report;
pub mod run;
pub mod synth;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use run::{run, Dataset, RunSummary};
pub use synth::{synth, write_synth, SynthConfig, SynthData};
