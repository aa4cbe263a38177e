//! Configuration, training, inference, evaluation and verification drivers
//! behind the `fednet` command-line tool.

pub mod ablate;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod gradsuite;
pub mod infer;
pub mod report;
pub mod train;

pub use ablate::{ablate, render_table, AblationRow, ABLATION_ROWS};
pub use config::{LrSchedule, Stage, TrainConfig};
pub use data::{load_dataset, Case};
pub use evaluate::evaluate_dirs;
pub use infer::{infer_volume, Model, StagePair};
pub use report::MetricsReport;
pub use train::{evaluate_stage, train, train_cases, Trained};
