//! Experiment orchestration behind the CLI: configuration, training and
//! comparison pipelines, gradient-check suite, and report files.

mod config;
mod experiment;
mod gradcheck;
mod report;

pub use config::{EnergyKind, ExperimentConfig, Task};
pub use experiment::{
    build_energy, build_pair, build_seq_data, eval_net, run_compare, run_train, tune_gd_lr,
    viterbi_matches_brute_force, SeqData, TrainArtifacts,
};
pub use gradcheck::{gradient_suite, CheckRow};
pub use report::{merge_reports, write_merged_csv, ExperimentReport, MergedReport, MethodRow};
