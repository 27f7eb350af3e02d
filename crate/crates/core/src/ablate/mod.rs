//! Deterministic ablation transforms over cell sentences.
//!
//! Each transform is pure: identical (spec, sentence) pairs give identical
//! output. Stochastic kinds seed a fresh RNG per cell from
//! `(seed, cell_id[, position])`, so results do not depend on the order in
//! which a corpus is processed.

mod apply;
mod hash;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use apply::{apply, apply_corpus, in_context_count, Ablator};
pub use hash::{hash_gene_name, hash_vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum AblateError {
    #[error("hash collision: {first:?} and {second:?} both map to {token}")]
    HashCollision { first: String, second: String, token: String },
    #[error("sentence for cell {cell_id:?} is already ablated ({variant}); ablations do not stack")]
    Stacking { cell_id: String, variant: VariantId },
    #[error("ablation {0} requires a seed")]
    MissingSeed(&'static str),
    #[error("invalid ablation spec: {0}")]
    InvalidSpec(String),
    #[error("empty gene name")]
    EmptyName,
}

/// Stable identifier of the transform lineage of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariantId(String);

impl VariantId {
    pub const IDENTITY: &'static str = "identity";

    pub fn identity() -> Self {
        Self(Self::IDENTITY.to_owned())
    }

    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn is_identity(&self) -> bool {
        self.0 == Self::IDENTITY
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Character-based proxy for an encoder's context window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenBudget {
    pub max_tokens: usize,
    pub prefix_tokens: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self { max_tokens: 512, prefix_tokens: 8 }
    }
}

impl TokenBudget {
    pub fn new(max_tokens: usize, prefix_tokens: usize) -> Result<Self, AblateError> {
        let b = Self { max_tokens, prefix_tokens };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), AblateError> {
        if self.max_tokens == 0 || self.max_tokens <= self.prefix_tokens {
            return Err(AblateError::InvalidSpec(format!(
                "max_tokens ({}) must exceed prefix_tokens ({})",
                self.max_tokens, self.prefix_tokens
            )));
        }
        Ok(())
    }

    /// ceil(chars / 4) + 1
    pub fn tokens_per_gene(name: &str) -> usize {
        name.chars().count().div_ceil(4) + 1
    }

    fn digest(&self) -> String {
        format!("b{}/{}", self.max_tokens, self.prefix_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AblationKind {
    Identity,
    GeneNameHash,
    GeneNamePerInstance,
    ShuffleAll,
    ShuffleInContext,
    ShuffleTop10InContext,
    HashThenShuffleInContext,
    TruncateFraction { fraction: f64 },
}

impl AblationKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::GeneNameHash => "gene_name_hash",
            Self::GeneNamePerInstance => "gene_name_per_instance",
            Self::ShuffleAll => "shuffle_all",
            Self::ShuffleInContext => "shuffle_in_context",
            Self::ShuffleTop10InContext => "shuffle_top10_in_context",
            Self::HashThenShuffleInContext => "hash_then_shuffle_in_context",
            Self::TruncateFraction { .. } => "truncate_fraction",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Self::GeneNamePerInstance
                | Self::ShuffleAll
                | Self::ShuffleInContext
                | Self::ShuffleTop10InContext
                | Self::HashThenShuffleInContext
        )
    }

    pub fn uses_context(&self) -> bool {
        matches!(
            self,
            Self::ShuffleInContext
                | Self::ShuffleTop10InContext
                | Self::HashThenShuffleInContext
                | Self::TruncateFraction { .. }
        )
    }

    /// Column heading used in ablation report tables.
    pub fn display_name(&self) -> String {
        match self {
            Self::Identity => "No Ablations / Baseline".into(),
            Self::GeneNameHash => "Gene Name Ablation".into(),
            Self::ShuffleAll => "Order Ablation (All Genes)".into(),
            Self::ShuffleInContext => "Order Ablation (In Context)".into(),
            Self::ShuffleTop10InContext => "Order Ablation (Top 10% In Context)".into(),
            Self::HashThenShuffleInContext => "Gene Name + Order Ablation (In Context)".into(),
            Self::GeneNamePerInstance => "Gene Name Per-Instance Ablation".into(),
            Self::TruncateFraction { fraction } => format!("Top {}% In Context", fraction * 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    #[serde(flatten)]
    pub kind: AblationKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub budget: TokenBudget,
}

impl AblationSpec {
    pub fn new(kind: AblationKind, seed: Option<u64>, budget: TokenBudget) -> Self {
        Self { kind, seed, budget }
    }

    pub fn identity() -> Self {
        Self::new(AblationKind::Identity, None, TokenBudget::default())
    }

    pub fn validate(&self) -> Result<(), AblateError> {
        self.budget.validate()?;
        if self.kind.is_stochastic() && self.seed.is_none() {
            return Err(AblateError::MissingSeed(self.kind.name()));
        }
        if let AblationKind::TruncateFraction { fraction } = self.kind {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(AblateError::InvalidSpec(format!("truncation fraction {fraction} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub(crate) fn seed_or_err(&self) -> Result<u64, AblateError> {
        self.seed.ok_or(AblateError::MissingSeed(self.kind.name()))
    }

    /// `kind[:parameter][:s<seed>][:b<max>/<prefix>]`; only the fields the
    /// kind actually reads take part.
    pub fn variant_id(&self) -> VariantId {
        if self.kind == AblationKind::Identity {
            return VariantId::identity();
        }
        let mut id = self.kind.name().to_owned();
        if let AblationKind::TruncateFraction { fraction } = self.kind {
            id.push_str(&format!(":{fraction}"));
        }
        if self.kind.is_stochastic() {
            if let Some(s) = self.seed {
                id.push_str(&format!(":s{s}"));
            }
        }
        if self.kind.uses_context() {
            id.push(':');
            id.push_str(&self.budget.digest());
        }
        VariantId(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimator() {
        assert_eq!(TokenBudget::tokens_per_gene("GCG"), 2);
        assert_eq!(TokenBudget::tokens_per_gene("ABCD"), 2);
        assert_eq!(TokenBudget::tokens_per_gene("ABCDE"), 3);
        assert_eq!(TokenBudget::tokens_per_gene("587a0accb2"), 4);
    }

    #[test]
    fn budget_validation() {
        assert!(TokenBudget::new(8, 8).is_err());
        assert!(TokenBudget::new(0, 0).is_err());
        assert!(TokenBudget::new(14, 8).is_ok());
    }

    #[test]
    fn variant_ids_are_stable_and_distinct() {
        let b = TokenBudget::default();
        let kinds = [
            AblationKind::Identity,
            AblationKind::GeneNameHash,
            AblationKind::GeneNamePerInstance,
            AblationKind::ShuffleAll,
            AblationKind::ShuffleInContext,
            AblationKind::ShuffleTop10InContext,
            AblationKind::HashThenShuffleInContext,
            AblationKind::TruncateFraction { fraction: 0.1 },
            AblationKind::TruncateFraction { fraction: 0.2 },
        ];
        let ids: Vec<_> = kinds.iter().map(|&k| AblationSpec::new(k, Some(7), b).variant_id()).collect();
        let again: Vec<_> = kinds.iter().map(|&k| AblationSpec::new(k, Some(7), b).variant_id()).collect();
        assert_eq!(ids, again);
        let uniq: std::collections::HashSet<_> = ids.iter().collect();
        assert_eq!(uniq.len(), ids.len());
        assert_eq!(ids[0], VariantId::identity());
        assert_eq!(ids[4].as_str(), "shuffle_in_context:s7:b512/8");
        assert!(ids.iter().all(|v| !v.as_str().contains('|')));
    }

    #[test]
    fn stochastic_kinds_need_seed() {
        let s = AblationSpec::new(AblationKind::ShuffleAll, None, TokenBudget::default());
        assert_eq!(s.validate(), Err(AblateError::MissingSeed("shuffle_all")));
        let s = AblationSpec::new(AblationKind::GeneNameHash, None, TokenBudget::default());
        assert!(s.validate().is_ok());
    }

    #[test]
    fn spec_serde_shape() {
        let s = AblationSpec::new(AblationKind::TruncateFraction { fraction: 0.5 }, None, TokenBudget::default());
        let j = serde_json::to_value(&s).unwrap();
        assert_eq!(j["kind"], "truncate_fraction");
        assert_eq!(j["fraction"], 0.5);
        let back: AblationSpec = serde_json::from_value(j).unwrap();
        assert_eq!(back, s);
        let parsed: AblationSpec = serde_json::from_str(r#"{"kind":"shuffle_all","seed":3}"#).unwrap();
        assert_eq!(parsed.budget, TokenBudget::default());
    }
}
