//! Training: configuration, Adam, the optimization loop, evaluation and
//! checkpoints, plus the deformation benchmark.

pub mod adam;
pub mod bench;
pub mod config;
pub mod trainer;

pub use adam::{AdamGroup, AdamState};
pub use bench::{benchmark_deform, DeformBench};
pub use config::{split_assignment, LearningRates, TrainConfig};
pub use trainer::{evaluate_model, init_cloud, load_checkpoint, EvalReport, RunSummary, StepMetrics, Trainer};
