//! Severity classifier, losses, training loop, metrics, cross-validation,
//! ablation harness, and embedding export.

mod ablation;
mod classifier;
mod cv;
mod data;
mod embeddings;
mod losses;
mod metrics;
mod train;

pub use ablation::{ablation_report, format_ablation_table, run_ablation};
pub use classifier::{Classifier, ClassifierConfig};
pub use cv::{cross_validate, holdout_split, loss_weights, resolve_classes, CvOutcome};
pub use data::{Dataset, PreparedSample};
pub use embeddings::{export_embeddings, pca3, Branch, EmbeddingRow};
pub use losses::{compute_losses, summed_frame_mse, DiscMode, LossBreakdown, LossWeights, Variant};
pub use metrics::{compute_report, metrics_from_confusion, ClassConfusion, MetricsReport};
pub use train::{
    batch_loss, evaluate, sample_loss, train, BatchLossNodes, EpochLosses, Hyperparams,
    SampleTermNodes, TrainOutcome,
};
