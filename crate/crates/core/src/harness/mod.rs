//! Training loop, run configuration, logs, evaluation of splits, the
//! domain-confusion probe, loss-curve reports and the scale ablation.

mod ablation;
mod config;
mod eval;
mod log;
mod optim;
mod probe;
mod report;
mod train;

pub use ablation::{all_subsets, run_ablation, subset_label, AblationReport, AblationRow};
pub use config::{EvalConfig, OptimizerConfig, RunConfig};
pub use eval::{detect_split, evaluate_split};
pub use log::{EvalRecord, LogRecord, TrainingLog};
pub use optim::Sgd;
pub use probe::{
    domain_confusion_probe, pixel_probe, pooled_features, pooled_pixels, LogisticProbe, ProbeConfig, ProbeCounts, ProbePlan,
    ProbeReport,
};
pub use report::{dissimilarity, loss_curves, report, CurveRow, LossCurves};
pub use train::{
    build_model, detector_from_checkpoint, prepare_config, train, RunSummary, TrainOutcome, CHECKPOINT_FILE, LOG_FILE,
    SUMMARY_FILE,
};
