//! Downstream recognition on instances pooled around annotations.

mod instances;
mod mlp;

pub use instances::{
    design_matrix, extract_instances, pool_window, read_instances, truth_rows, write_instances, ClassSet, ExtractStats,
    TrimmedInstance,
};
pub use mlp::{evaluate_classifier, repeat_over_seeds, train_mlp, Mlp, MlpConfig, MlpEpochLog, MlpOutcome, SeedSummary};
