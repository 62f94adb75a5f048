//! Metrics, evaluation, baselines, ablations, and sweeps.

mod ablation;
mod baseline;
mod evaluate;
mod metrics;
mod sweep;

pub use ablation::{run_ablation, run_variant, AblationCell};
pub use baseline::{run_baseline, BaselineKind, BaselineModel, BaselineNetConfig};
pub use evaluate::{
    evaluate, report_from_scores, score_examples, ExampleScore, MetricsReport, RelImprBlock,
    ScenarioMetrics,
};
pub use metrics::{auc, rel_impr, MetricsError};
pub use sweep::{sweep, SeedCurve, SweepCurve, SweepHyper};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error("no training data for scenario {scenario}")]
    NoTrainingData { scenario: u32 },
    #[error("single/finetune baselines need a target scenario")]
    MissingTarget,
    #[error("invalid sweep grid: {0}")]
    BadGrid(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid config: {0}")]
    BadConfig(String),
}
