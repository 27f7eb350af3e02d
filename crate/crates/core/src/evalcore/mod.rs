//! Zero-shot kNN classification, k-means clustering and evaluation metrics.

mod kmeans;
mod knn;
mod metrics;
mod partition;

use thiserror::Error;

pub use kmeans::{kmeans, kmeans_traced, ClusterAssignment, KMeansConfig};
pub use knn::{classify_batch, knn_classify, knn_top_labels, top_labels_batch, Neighbor, NeighborSet, ReferenceSet};
pub use metrics::{
    aggregate_runs, format_mean_std, macro_metrics, mean, sample_std, AggregatedMetrics, ClassMetrics, ConfusionMatrix, MacroMetrics,
    MeanStd, MetricsReport,
};
pub use partition::{ami, ari, Contingency};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("k = {k} exceeds reference size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}
