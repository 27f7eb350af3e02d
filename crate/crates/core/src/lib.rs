//! Evaluation toolkit for text-encoder representations of single-cell data.
//!
//! Cells become *cell sentences* (gene names by descending expression), which
//! can be ablated, embedded through pluggable providers, evaluated with
//! zero-shot kNN and k-means, fused with a second modality in a trained
//! network, explained with perturbation attributions, and reranked by a
//! generative model.

pub mod ablate;
pub mod corpus;
pub mod par;
pub(crate) mod seed;

pub use par::Exec;
pub use seed::fnv1a64;
pub mod embed;
pub(crate) mod transport;
pub mod evalcore;
pub mod fusion;
pub mod interpret;
pub mod pipeline;
pub mod report;
pub mod rerank;
