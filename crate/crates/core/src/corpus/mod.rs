//! Expression data, gene vocabulary, cell sentences and train/test splits.

mod load;
mod sentence;
mod split;
pub mod synth;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablate::VariantId;

pub use load::{
    load_dataset, parse_dense_csv, parse_sparse_jsonl, read_vocabulary, write_dense_csv,
    write_sparse_jsonl, DataFormat, LoadOptions,
};
pub use sentence::{build_sentence, build_sentences, SentenceSet};
pub use split::{read_split, stratified_holdout, stratified_split, write_split};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate cell_id {cell_id:?}")]
    DuplicateCell { line: usize, cell_id: String },
    #[error("line {line}: negative count")]
    NegativeCount { line: usize },
    #[error("line {line}: non-finite count")]
    NonFiniteCount { line: usize },
    #[error("line {line}: unknown gene {gene:?}")]
    UnknownGene { line: usize, gene: String },
    #[error("duplicate gene name {0:?} in vocabulary")]
    DuplicateGene(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("label {0:?} has a single cell; cannot stratify")]
    SingletonLabel(String),
    #[error("split does not cover cell {0:?}")]
    IncompleteSplit(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered set of unique gene names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneVocabulary {
    genes: Vec<String>,
    index: HashMap<String, usize>,
}

impl GeneVocabulary {
    pub fn new(genes: Vec<String>) -> Result<Self, CorpusError> {
        if genes.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(genes.len());
        for (i, g) in genes.iter().enumerate() {
            if index.insert(g.clone(), i).is_some() {
                return Err(CorpusError::DuplicateGene(g.clone()));
            }
        }
        Ok(Self { genes, index })
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn position(&self, gene: &str) -> Option<usize> {
        self.index.get(gene).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.genes[idx]
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }
}

/// One cell: identifier, label and sparse counts keyed by vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: String,
    pub label: String,
    /// (gene index, value) sorted by gene index. Explicit zeros are kept as given.
    pub counts: Vec<(usize, f64)>,
}

impl CellRecord {
    pub fn count(&self, gene: usize) -> f64 {
        self.counts
            .binary_search_by_key(&gene, |&(g, _)| g)
            .map(|i| self.counts[i].1)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocabulary: GeneVocabulary,
    pub cells: Vec<CellRecord>,
    pub label_set: Vec<String>,
    /// Aligned with `cells` when present.
    pub split: Option<Vec<Split>>,
}

impl Dataset {
    pub fn new(vocabulary: GeneVocabulary, cells: Vec<CellRecord>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for c in &cells {
            if !seen.insert(c.cell_id.as_str()) {
                return Err(CorpusError::DuplicateCell { line: 0, cell_id: c.cell_id.clone() });
            }
            for &(g, v) in &c.counts {
                if g >= vocabulary.len() {
                    return Err(CorpusError::Invalid(format!(
                        "cell {:?} references gene index {g} outside vocabulary",
                        c.cell_id
                    )));
                }
                if !v.is_finite() {
                    return Err(CorpusError::NonFiniteCount { line: 0 });
                }
                if v < 0.0 {
                    return Err(CorpusError::NegativeCount { line: 0 });
                }
            }
        }
        let label_set: BTreeSet<&str> = cells.iter().map(|c| c.label.as_str()).collect();
        let label_set = label_set.into_iter().map(str::to_owned).collect();
        Ok(Self { vocabulary, cells, label_set, split: None })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Indices of cells in the given split role, in dataset order.
    pub fn indices(&self, role: Split) -> Vec<usize> {
        match &self.split {
            Some(s) => (0..self.cells.len()).filter(|&i| s[i] == role).collect(),
            None => Vec::new(),
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.cells.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self, CorpusError> {
        if split.len() != self.cells.len() {
            return Err(CorpusError::Invalid(format!(
                "split has {} entries for {} cells",
                split.len(),
                self.cells.len()
            )));
        }
        self.split = Some(split);
        Ok(self)
    }
}

/// A cell rendered as an ordered gene-token list, plus the transform lineage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSentence {
    pub cell_id: String,
    pub genes: Vec<String>,
    pub variant: VariantId,
}

impl CellSentence {
    pub fn identity(cell_id: impl Into<String>, genes: Vec<String>) -> Self {
        Self { cell_id: cell_id.into(), genes, variant: VariantId::identity() }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    /// Tokens joined with single spaces, with an optional leading prefix.
    pub fn render(&self, prefix: &str) -> String {
        let mut out = String::with_capacity(prefix.len() + self.genes.len() * 8);
        out.push_str(prefix);
        for (i, g) in self.genes.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(matches!(GeneVocabulary::new(vec![]), Err(CorpusError::EmptyVocabulary)));
        let e = GeneVocabulary::new(vec!["A".into(), "B".into(), "A".into()]).unwrap_err();
        assert!(matches!(e, CorpusError::DuplicateGene(g) if g == "A"));
        let v = GeneVocabulary::new(vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(v.position("B"), Some(1));
        assert_eq!(v.name(0), "A");
    }

    #[test]
    fn render_joins_with_prefix() {
        let s = CellSentence::identity("c", vec!["GCG".into(), "TTR".into()]);
        assert_eq!(s.render("A cell: "), "A cell: GCG TTR");
        assert_eq!(s.render(""), "GCG TTR");
    }
}
