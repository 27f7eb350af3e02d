//! Perturbation attribution, attribution aggregation against a marker
//! database, and the marker-name similarity probe.

mod attribution;
mod lime;
mod markers;
mod similarity;

use thiserror::Error;

use crate::embed::EmbedError;

pub use attribution::{
    aggregate_attributions, marker_overlap, read_attributions, write_attributions, AttributionRecord, OverlapReport,
    TypeOverlap, TypeSignature, DEFAULT_CELL_CAP, TOP_GENES,
};
pub use lime::{lime_attribution, EmbeddingClassifier, LimeConfig, SentenceScorer, LIME_METHOD};
pub use markers::{MarkerDb, MarkerRecord};
pub use similarity::{marker_similarity_table, SimilarityRow, SimilarityTable};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("marker db line {line}: {msg}")]
    MarkerDb { line: usize, msg: String },
    #[error("attribution line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("attribution line {0}: non-finite score")]
    NonFiniteScore(usize),
    #[error("attribution line {line}: unknown cell {cell_id:?}")]
    UnknownCell { line: usize, cell_id: String },
    #[error("cannot aggregate mixed methods {0:?} and {1:?}")]
    MixedMethods(String, String),
    #[error("cell {cell_id:?} appears twice for class {class:?}")]
    DuplicateRecord { cell_id: String, class: String },
    #[error("need at least 2 in-context genes, found {0}")]
    TooFewFeatures(usize),
    #[error("gene {0:?} occurs twice in the explained context")]
    DuplicateGene(String),
    #[error("class {0:?} unknown to the classifier")]
    UnknownClass(String),
    #[error("surrogate normal equations are singular")]
    Singular,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
