use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::embed::EmbeddingVector;
use crate::par::Exec;

/// Labelled reference vectors with precomputed squared norms.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    ids: Vec<String>,
    labels: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    sq_norms: Vec<f64>,
    dim: usize,
}

impl ReferenceSet {
    pub fn new(ids: Vec<String>, vectors: Vec<EmbeddingVector>, labels: Vec<String>) -> Result<Self, EvalError> {
        if ids.len() != vectors.len() {
            return Err(EvalError::LengthMismatch(ids.len(), vectors.len()));
        }
        if labels.len() != vectors.len() {
            return Err(EvalError::LengthMismatch(labels.len(), vectors.len()));
        }
        let dim = vectors.first().map_or(0, EmbeddingVector::dim);
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(EvalError::DimMismatch { expected: dim, got: v.dim() });
        }
        let sq_norms = vectors.iter().map(|v| v.as_slice().iter().map(|x| x * x).sum()).collect();
        Ok(Self { ids, labels, vectors, sq_norms, dim })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Cosine similarity to every reference; zero vectors score 0.
    fn similarities(&self, q: &EmbeddingVector) -> Vec<f64> {
        let qs = q.as_slice();
        let qn: f64 = qs.iter().map(|x| x * x).sum();
        self.vectors
            .iter()
            .zip(&self.sq_norms)
            .map(|(r, &rn)| {
                if qn == 0.0 || rn == 0.0 {
                    return 0.0;
                }
                let d: f64 = qs.iter().zip(r.as_slice()).map(|(a, b)| a * b).sum();
                (d / (qn * rn).sqrt()).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub cell_id: String,
    pub label: String,
    pub similarity: f64,
}

/// The k most similar references, most similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    /// Distinct labels ranked by (vote count desc, summed similarity desc,
    /// position of first occurrence asc).
    pub fn ranked_labels(&self) -> Vec<String> {
        struct Tally {
            count: usize,
            sum: f64,
            first: usize,
        }
        let mut tallies: HashMap<&str, Tally> = HashMap::new();
        for (pos, n) in self.neighbors.iter().enumerate() {
            let t = tallies.entry(n.label.as_str()).or_insert(Tally { count: 0, sum: 0.0, first: pos });
            t.count += 1;
            t.sum += n.similarity;
        }
        let mut ranked: Vec<(&str, Tally)> = tallies.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.count
                .cmp(&a.1.count)
                .then_with(|| b.1.sum.total_cmp(&a.1.sum))
                .then_with(|| a.1.first.cmp(&b.1.first))
        });
        ranked.into_iter().map(|(l, _)| l.to_owned()).collect()
    }
}

fn check(query: &EmbeddingVector, refs: &ReferenceSet, k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if k > refs.len() {
        return Err(EvalError::KTooLarge { k, n: refs.len() });
    }
    if query.dim() != refs.dim {
        return Err(EvalError::DimMismatch { expected: refs.dim, got: query.dim() });
    }
    Ok(())
}

fn neighbors(query: &EmbeddingVector, refs: &ReferenceSet, k: usize) -> NeighborSet {
    let sims = refs.similarities(query);
    // Similarity descending, then reference index ascending.
    let order = |a: &usize, b: &usize| -> Ordering { sims[*b].total_cmp(&sims[*a]).then(a.cmp(b)) };
    let mut idx: Vec<usize> = (0..refs.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_by(order);
    NeighborSet {
        neighbors: idx
            .into_iter()
            .map(|i| Neighbor { cell_id: refs.ids[i].clone(), label: refs.labels[i].clone(), similarity: sims[i] })
            .collect(),
    }
}

/// Majority label among the k most cosine-similar references.
pub fn knn_classify(query: &EmbeddingVector, refs: &ReferenceSet, k: usize) -> Result<(String, NeighborSet), EvalError> {
    check(query, refs, k)?;
    let ns = neighbors(query, refs, k);
    let label = ns.ranked_labels().swap_remove(0);
    Ok((label, ns))
}

/// Up to `m` distinct neighbour labels in vote order.
pub fn knn_top_labels(query: &EmbeddingVector, refs: &ReferenceSet, k: usize, m: usize) -> Result<Vec<String>, EvalError> {
    check(query, refs, k)?;
    let mut ranked = neighbors(query, refs, k).ranked_labels();
    ranked.truncate(m);
    Ok(ranked)
}

pub fn classify_batch(
    queries: &[EmbeddingVector],
    refs: &ReferenceSet,
    k: usize,
    exec: Exec,
) -> Result<Vec<(String, NeighborSet)>, EvalError> {
    exec.try_map(queries, |q| knn_classify(q, refs, k))
}

pub fn top_labels_batch(
    queries: &[EmbeddingVector],
    refs: &ReferenceSet,
    k: usize,
    m: usize,
    exec: Exec,
) -> Result<Vec<Vec<String>>, EvalError> {
    exec.try_map(queries, |q| knn_top_labels(q, refs, k, m))
}
