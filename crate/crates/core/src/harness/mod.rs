//! Training loop, evaluation, the activation × loss grid and its report.

mod config;
mod report;
mod train;

pub use config::TrainConfig;
pub use report::{evaluation_table, GridCell, GridReport, BUCKET_HEADERS};
pub use train::{
    evaluate, evaluate_predictions, grid, load_dataset_for, split_indices, train, train_on, Evaluation,
    ExperimentResult, Split, TrainOutcome,
};
