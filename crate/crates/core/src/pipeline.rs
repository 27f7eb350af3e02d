//! End-to-end evaluation runs: ablate, embed, classify, score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablate::{AblateError, AblationSpec, Ablator};
use crate::corpus::{CellSentence, CorpusError, Dataset, Split};
use crate::embed::{EmbedError, EmbeddingVector, Provider};
use crate::evalcore::{ami, ari, classify_batch, kmeans, macro_metrics, EvalError, KMeansConfig, MetricsReport, ReferenceSet};
use crate::par::Exec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Ablate(#[from] AblateError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cell_id: String,
    pub truth: String,
    pub predicted: String,
    /// Neighbour labels in vote order.
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnRun {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

/// Embeddings for the train and test halves of a split dataset.
#[derive(Debug, Clone)]
pub struct SplitEmbeddings {
    pub train_ids: Vec<String>,
    pub train_labels: Vec<String>,
    pub train: Vec<EmbeddingVector>,
    pub test_ids: Vec<String>,
    pub test_labels: Vec<String>,
    pub test: Vec<EmbeddingVector>,
}

/// `sentences` must align with `dataset.cells`.
pub fn embed_split(
    dataset: &Dataset,
    sentences: &[CellSentence],
    provider: &Provider,
) -> Result<SplitEmbeddings, PipelineError> {
    if dataset.split.is_none() {
        return Err(PipelineError::Invalid("dataset has no train/test split".into()));
    }
    if sentences.len() != dataset.cells.len() {
        return Err(PipelineError::Invalid(format!("{} sentences for {} cells", sentences.len(), dataset.cells.len())));
    }
    let part = |role: Split| -> Result<(Vec<String>, Vec<String>, Vec<EmbeddingVector>), PipelineError> {
        let idx = dataset.indices(role);
        let batch: Vec<CellSentence> = idx.iter().map(|&i| sentences[i].clone()).collect();
        let vecs = provider.embed_batch(&batch)?;
        let ids = idx.iter().map(|&i| dataset.cells[i].cell_id.clone()).collect();
        let labels = idx.iter().map(|&i| dataset.cells[i].label.clone()).collect();
        Ok((ids, labels, vecs))
    };
    let (train_ids, train_labels, train) = part(Split::Train)?;
    let (test_ids, test_labels, test) = part(Split::Test)?;
    Ok(SplitEmbeddings { train_ids, train_labels, train, test_ids, test_labels, test })
}

/// k-NN classification of the test half against the train half.
pub fn knn_evaluate(emb: &SplitEmbeddings, k: usize, exec: Exec) -> Result<KnnRun, PipelineError> {
    let refs = ReferenceSet::new(emb.train_ids.clone(), emb.train.clone(), emb.train_labels.clone())?;
    let out = classify_batch(&emb.test, &refs, k, exec)?;
    let predicted: Vec<&str> = out.iter().map(|(l, _)| l.as_str()).collect();
    let m = macro_metrics(&emb.test_labels.iter().map(String::as_str).collect::<Vec<_>>(), &predicted)?;
    let predictions = out
        .iter()
        .zip(emb.test_ids.iter().zip(&emb.test_labels))
        .map(|((p, ns), (id, t))| Prediction {
            cell_id: id.clone(),
            truth: t.clone(),
            predicted: p.clone(),
            ranked: ns.ranked_labels(),
        })
        .collect();
    Ok(KnnRun { report: MetricsReport::from(&m), predictions })
}

/// k-means with one cluster per label, scored by ARI and AMI.
pub fn cluster_evaluate(
    vectors: &[EmbeddingVector],
    labels: &[String],
    seed: u64,
    exec: Exec,
) -> Result<(f64, f64), PipelineError> {
    let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let cfg = KMeansConfig { exec, ..KMeansConfig::default() };
    let fit = kmeans(vectors, k, seed, &cfg)?;
    Ok((ari(labels, &fit.assignment)?, ami(labels, &fit.assignment)?))
}

/// Applies `spec` corpus-wide, embeds and runs k-NN on the split.
pub fn ablation_knn(
    dataset: &Dataset,
    sentences: &[CellSentence],
    spec: &AblationSpec,
    provider: &Provider,
    k: usize,
    exec: Exec,
) -> Result<KnnRun, PipelineError> {
    let ablated = Ablator::new(spec.clone())?.apply_corpus(sentences, exec)?;
    let emb = embed_split(dataset, &ablated, provider)?;
    knn_evaluate(&emb, k, exec)
}
