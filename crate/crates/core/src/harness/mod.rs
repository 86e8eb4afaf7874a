//! End-to-end experiment: pretraining, adversarial-set construction,
//! adversarial retraining, evaluation and reporting.

mod config;
mod experiment;
mod report;

pub use config::{ExperimentConfig, Resolved};
pub use experiment::{
    adv_train, build_adv_training_set, labeled_inputs, load_corpus, pretrain, run_experiment, train_variant,
    Pretrained,
};
pub use report::{AdvSetSummary, CorpusSummary, ExperimentReport, TrainingSummary};
