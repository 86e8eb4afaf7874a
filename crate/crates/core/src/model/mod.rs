//! The classifier, its training loop, input gradients and evaluation.

mod checkpoint;
mod gradient;
mod metrics;
mod network;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradient::{input_gradient, InputGradient};
pub use metrics::{
    accuracy, auc, binary_auc, evaluate, evaluate_oracle, macro_f1, metrics, EvalReport, Metrics, Variant,
};
pub use network::{cross_entropy, nll, softmax, Architecture, Classifier, ForwardCache};
pub use train::{accuracy_on, sgd_step, train, EpochRecord, LabeledInput, TrainConfig, TrainHistory};
