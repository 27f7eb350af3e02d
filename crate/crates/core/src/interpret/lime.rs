use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttributionRecord, InterpretError};
use crate::ablate::in_context_count;
use crate::corpus::CellSentence;
use crate::embed::Provider;
use crate::fusion::MlpModel;
use crate::par::Exec;
use crate::seed;

pub const LIME_METHOD: &str = "lime";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    /// Total masks, the unperturbed one included.
    pub n_samples: usize,
    pub drop_prob: f64,
    /// Defaults to 0.75·√F.
    pub kernel_width: Option<f64>,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self { n_samples: 1000, drop_prob: 0.5, kernel_width: None, lambda: 1.0, seed: 0 }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<(), InterpretError> {
        let bad = |m: &str| Err(InterpretError::Config(m.into()));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return bad("drop_prob must lie in [0, 1)");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if matches!(self.kernel_width, Some(w) if !(w > 0.0 && w.is_finite())) {
            return bad("kernel_width must be positive");
        }
        Ok(())
    }
}

/// Black-box probability model over cell sentences.
pub trait SentenceScorer: Sync {
    /// Leading genes of `s` that can influence the score.
    fn context_len(&self, s: &CellSentence) -> usize;
    /// P(class | sentence) for each sentence.
    fn score(&self, sentences: &[CellSentence], class: &str) -> Result<Vec<f64>, InterpretError>;
}

/// An embedding provider feeding a single-branch classifier head.
pub struct EmbeddingClassifier<'a> {
    pub provider: &'a Provider,
    pub model: &'a MlpModel,
    pub exec: Exec,
}

impl SentenceScorer for EmbeddingClassifier<'_> {
    fn context_len(&self, s: &CellSentence) -> usize {
        let cfg = self.provider.config();
        if cfg.truncate_to_context {
            in_context_count(s, &cfg.budget)
        } else {
            s.len()
        }
    }

    fn score(&self, sentences: &[CellSentence], class: &str) -> Result<Vec<f64>, InterpretError> {
        let c = self
            .model
            .labels
            .iter()
            .position(|l| l == class)
            .ok_or_else(|| InterpretError::UnknownClass(class.into()))?;
        if self.model.input_dims() != [self.provider.dim()] {
            return Err(InterpretError::Invalid(format!(
                "classifier expects inputs {:?}, provider yields {}",
                self.model.input_dims(),
                self.provider.dim()
            )));
        }
        // Perturbed sentences share the cell's key, so the cache is bypassed.
        let vectors = self.provider.encode(sentences)?;
        Ok(self.exec.map(&vectors, |v| self.model.predict_proba(&[v.as_slice()])[c]))
    }
}

/// Solves (XᵀWX + λP) β = XᵀWy where column 0 of X is the intercept and P
/// penalizes every other column.
fn weighted_ridge(masks: &[Vec<bool>], weights: &[f64], y: &[f64], lambda: f64) -> Result<Vec<f64>, InterpretError> {
    let p = masks[0].len() + 1;
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    let mut row = vec![0.0; p];
    for ((m, &w), &t) in masks.iter().zip(weights).zip(y) {
        row[0] = 1.0;
        for (r, &bit) in row[1..].iter_mut().zip(m) {
            *r = if bit { 1.0 } else { 0.0 };
        }
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            b[i] += w * row[i] * t;
            for j in 0..=i {
                a[i * p + j] += w * row[i] * row[j];
            }
        }
    }
    for i in 1..p {
        a[i * p + i] += lambda;
    }
    cholesky_solve(&mut a, &mut b, p)?;
    Ok(b)
}

/// In-place Cholesky on the lower triangle, then forward/back substitution.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], p: usize) -> Result<(), InterpretError> {
    let scale = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 1e-12 * scale) {
            return Err(InterpretError::Singular);
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * p + k] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= a[k * p + i] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    Ok(())
}

/// Local linear surrogate over the in-context genes of one cell.
///
/// Genes beyond the context are left out of every perturbed sentence, so a
/// removal never pulls them into view.
pub fn lime_attribution(
    sentence: &CellSentence,
    target_class: &str,
    scorer: &dyn SentenceScorer,
    cfg: &LimeConfig,
) -> Result<AttributionRecord, InterpretError> {
    cfg.validate()?;
    let f = scorer.context_len(sentence).min(sentence.len());
    if f < 2 {
        return Err(InterpretError::TooFewFeatures(f));
    }
    let genes = &sentence.genes[..f];
    let mut seen = HashSet::with_capacity(f);
    if let Some(g) = genes.iter().find(|g| !seen.insert(g.as_str())) {
        return Err(InterpretError::DuplicateGene(g.clone()));
    }

    let mut rng = seed::rng(cfg.seed, "lime", &[seed::fnv1a64(sentence.cell_id.as_bytes())]);
    let mut masks = vec![vec![true; f]];
    masks.extend((1..cfg.n_samples).map(|_| (0..f).map(|_| rng.random::<f64>() >= cfg.drop_prob).collect::<Vec<_>>()));

    let perturbed: Vec<CellSentence> = masks
        .iter()
        .map(|m| CellSentence {
            cell_id: sentence.cell_id.clone(),
            genes: genes.iter().zip(m).filter(|(_, &keep)| keep).map(|(g, _)| g.clone()).collect(),
            variant: sentence.variant.clone(),
        })
        .collect();
    let y = scorer.score(&perturbed, target_class)?;
    if y.len() != masks.len() {
        return Err(InterpretError::Invalid(format!("scorer returned {} values for {} sentences", y.len(), masks.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(InterpretError::Invalid(format!("scorer returned non-finite value for mask {i}")));
    }

    let width = cfg.kernel_width.unwrap_or(0.75 * (f as f64).sqrt());
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| {
            let kept = m.iter().filter(|&&b| b).count();
            let d = 1.0 - (kept as f64 / f as f64).sqrt();
            (-d * d / (width * width)).exp()
        })
        .collect();
    let beta = weighted_ridge(&masks, &weights, &y, cfg.lambda)?;
    let scores: BTreeMap<String, f64> = genes.iter().cloned().zip(beta[1..].iter().copied()).collect();
    Ok(AttributionRecord {
        cell_id: sentence.cell_id.clone(),
        class: target_class.into(),
        method: LIME_METHOD.into(),
        scores,
    })
}
