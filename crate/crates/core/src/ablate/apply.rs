use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{hash_gene_name, hash_vocabulary, AblateError, AblationKind, AblationSpec, TokenBudget};
use crate::corpus::CellSentence;
use crate::par::Exec;
use crate::seed;

// Stream tags keep the RNG streams of different kinds apart under one seed.
const TAG_SHUFFLE: u64 = 1;
const TAG_PER_INSTANCE: u64 = 2;

/// Number of leading genes that fit the budget.
pub fn in_context_count(sentence: &CellSentence, budget: &TokenBudget) -> usize {
    let mut used = budget.prefix_tokens;
    for (i, g) in sentence.genes.iter().enumerate() {
        used += TokenBudget::tokens_per_gene(g);
        if used > budget.max_tokens {
            return i;
        }
    }
    sentence.genes.len()
}

/// ceil(fraction * n) for a ratio in (0, 1], guarded against float noise.
fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).min(n)
}

fn fisher_yates(tokens: &mut [String], rng: &mut ChaCha8Rng) {
    for i in (1..tokens.len()).rev() {
        let j = rng.random_range(0..=i);
        tokens.swap(i, j);
    }
}

fn random_hex10(rng: &mut ChaCha8Rng) -> String {
    let v: u64 = rng.random::<u64>() & 0xff_ffff_ffff;
    format!("{v:010x}")
}

fn per_instance_token(seed: u64, cell_id: &str, position: usize, attempt: u64) -> String {
    let mut rng = seed::rng(seed, cell_id, &[TAG_PER_INSTANCE, position as u64, attempt]);
    random_hex10(&mut rng)
}

/// An ablation spec bound to optional exact in-context counts.
///
/// When exact per-cell counts are supplied (from a real tokenizer), they
/// replace the character estimator for kinds that scope to the context of the
/// original gene names. The hashed sentence in `HashThenShuffleInContext` is
/// always measured with the estimator, since exact counts refer to the
/// unhashed text.
#[derive(Debug, Clone)]
pub struct Ablator {
    spec: AblationSpec,
    context_counts: Option<Arc<HashMap<String, usize>>>,
}

impl Ablator {
    pub fn new(spec: AblationSpec) -> Result<Self, AblateError> {
        spec.validate()?;
        Ok(Self { spec, context_counts: None })
    }

    pub fn with_context_counts(mut self, counts: HashMap<String, usize>) -> Self {
        self.context_counts = Some(Arc::new(counts));
        self
    }

    pub fn spec(&self) -> &AblationSpec {
        &self.spec
    }

    fn context(&self, s: &CellSentence) -> usize {
        let est = in_context_count(s, &self.spec.budget);
        match self.context_counts.as_ref().and_then(|m| m.get(&s.cell_id)) {
            Some(&c) => c.min(s.len()),
            None => est,
        }
    }

    fn shuffle_prefix(&self, tokens: &mut [String], cell_id: &str, scope: usize) -> Result<(), AblateError> {
        let mut rng = seed::rng(self.spec.seed_or_err()?, cell_id, &[TAG_SHUFFLE]);
        fisher_yates(&mut tokens[..scope], &mut rng);
        Ok(())
    }

    /// Transforms one identity sentence. Per-instance tokens are unique within
    /// the sentence; use [`Ablator::apply_corpus`] for corpus-wide uniqueness.
    pub fn apply(&self, sentence: &CellSentence) -> Result<CellSentence, AblateError> {
        if !sentence.variant.is_identity() {
            return Err(AblateError::Stacking {
                cell_id: sentence.cell_id.clone(),
                variant: sentence.variant.clone(),
            });
        }
        let mut genes = sentence.genes.clone();
        match self.spec.kind {
            AblationKind::Identity => {}
            AblationKind::GeneNameHash => {
                for g in &mut genes {
                    *g = hash_gene_name(g)?;
                }
            }
            AblationKind::GeneNamePerInstance => {
                let seed = self.spec.seed_or_err()?;
                let mut seen = HashSet::with_capacity(genes.len());
                for (pos, g) in genes.iter_mut().enumerate() {
                    let mut attempt = 0;
                    let mut tok = per_instance_token(seed, &sentence.cell_id, pos, attempt);
                    while !seen.insert(tok.clone()) {
                        attempt += 1;
                        tok = per_instance_token(seed, &sentence.cell_id, pos, attempt);
                    }
                    *g = tok;
                }
            }
            AblationKind::ShuffleAll => {
                let n = genes.len();
                self.shuffle_prefix(&mut genes, &sentence.cell_id, n)?;
            }
            AblationKind::ShuffleInContext => {
                let c = self.context(sentence);
                self.shuffle_prefix(&mut genes, &sentence.cell_id, c)?;
            }
            AblationKind::ShuffleTop10InContext => {
                let c = self.context(sentence);
                self.shuffle_prefix(&mut genes, &sentence.cell_id, c.div_ceil(10))?;
            }
            AblationKind::HashThenShuffleInContext => {
                for g in &mut genes {
                    *g = hash_gene_name(g)?;
                }
                let hashed = CellSentence::identity(sentence.cell_id.clone(), genes);
                let c = in_context_count(&hashed, &self.spec.budget);
                genes = hashed.genes;
                self.shuffle_prefix(&mut genes, &sentence.cell_id, c)?;
            }
            AblationKind::TruncateFraction { fraction } => {
                let c = self.context(sentence);
                genes.truncate(ceil_fraction(fraction, c));
            }
        }
        Ok(CellSentence { cell_id: sentence.cell_id.clone(), genes, variant: self.spec.variant_id() })
    }

    /// Transforms a corpus. Gene-name hashing is checked for injectivity over
    /// every name present; per-instance tokens are made corpus-unique by a
    /// generate, deduplicate, redraw pass in (cell, position) order.
    pub fn apply_corpus(&self, sentences: &[CellSentence], exec: Exec) -> Result<Vec<CellSentence>, AblateError> {
        if matches!(self.spec.kind, AblationKind::GeneNameHash | AblationKind::HashThenShuffleInContext) {
            hash_vocabulary(sentences.iter().flat_map(|s| s.genes.iter().map(String::as_str)))?;
        }
        let mut out = exec.try_map(sentences, |s| self.apply(s))?;
        if self.spec.kind == AblationKind::GeneNamePerInstance {
            let seed = self.spec.seed_or_err()?;
            let total: usize = out.iter().map(CellSentence::len).sum();
            let mut seen: HashSet<String> = HashSet::with_capacity(total);
            for s in &mut out {
                for (pos, tok) in s.genes.iter_mut().enumerate() {
                    // Restart past the per-sentence attempts so redraws stay fresh.
                    let mut attempt = 1 << 32;
                    while !seen.insert(tok.clone()) {
                        *tok = per_instance_token(seed, &s.cell_id, pos, attempt);
                        attempt += 1;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper: validate `spec` and transform one sentence.
pub fn apply(spec: &AblationSpec, sentence: &CellSentence) -> Result<CellSentence, AblateError> {
    Ablator::new(spec.clone())?.apply(sentence)
}

pub fn apply_corpus(spec: &AblationSpec, sentences: &[CellSentence], exec: Exec) -> Result<Vec<CellSentence>, AblateError> {
    Ablator::new(spec.clone())?.apply_corpus(sentences, exec)
}
