//! Experiment pipelines: simulate observations, train the tree, run every
//! tracker variant on the same data, score the tracks, and write CSV files.

mod config;
mod metrics;
mod output;
mod run;

pub use config::{ExperimentConfig, InitMode, Preset, Variant, EXPERIMENT_RESAMPLE_SIGMA};
pub use metrics::{evaluate, median, MetricsReport, VariantMetrics};
pub use output::{
    emit_csv, read_resamples_csv, read_tracks_csv, write_observations_csv, write_truth_csv,
    DEPTHS, METRICS, PEAKS, RESAMPLES, TIMING, TRACKS,
};
pub use run::{
    load_observations, run_experiment, run_variants, save_observations, simulate, train_tree,
    track_audio, FrameObservation, FrameRecord, Observations, TrackRecord, VariantOutput,
};
