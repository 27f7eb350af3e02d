mod data;
mod eval;
mod interp;
mod llm;
mod report;
mod train;

pub use data::{ablate, embed, ingest, sentences};
pub use eval::{cluster_eval, knn_eval};
pub use interp::{lime, marker_sim};
pub use llm::{marker_quiz, rerank};
pub use report::report;
pub use train::{train_fusion, train_head};
