//! Classifier training, metrics, pose alignment and the mixing-ratio sweep.

mod alignment;
mod classifier;
mod metrics;
mod sweep;

pub use alignment::{
    edge_mask, internal_gradient, pose_alignment, GRADIENT_RADIUS, GRADIENT_THRESHOLD, POSE_THRESHOLD,
};
pub use classifier::{
    evaluate, fit, load_classifier, load_examples, save_classifier, train_classifier, Backbone, SmallCnn, TrainConfig,
    CLASSIFIER_FORMAT_VERSION,
};
pub use metrics::{f1_macro, top1, ClassMetrics, EvalResult};
pub use sweep::{held_out, ratio_sweep, RatioSummary, SweepRow, SweepTable, DEFAULT_RATIOS};
