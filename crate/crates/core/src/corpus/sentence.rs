use super::{CellRecord, CellSentence, Dataset, GeneVocabulary};
use crate::par::Exec;

/// Genes in descending count order; zero counts omitted; equal counts
/// ordered by ascending vocabulary index.
pub fn build_sentence(cell: &CellRecord, vocab: &GeneVocabulary) -> CellSentence {
    let mut ranked: Vec<(usize, f64)> = cell.counts.iter().copied().filter(|&(_, v)| v > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let genes = ranked.into_iter().map(|(g, _)| vocab.name(g).to_owned()).collect();
    CellSentence::identity(cell.cell_id.clone(), genes)
}

/// Sentences for a whole dataset, aligned with `dataset.cells`.
#[derive(Debug, Clone)]
pub struct SentenceSet {
    pub sentences: Vec<CellSentence>,
    /// Cells whose counts are all zero; their sentences are empty.
    pub all_zero: Vec<String>,
}

pub fn build_sentences(dataset: &Dataset, exec: Exec) -> SentenceSet {
    let sentences = exec.map(&dataset.cells, |c| build_sentence(c, &dataset.vocabulary));
    let all_zero: Vec<String> =
        sentences.iter().filter(|s| s.is_empty()).map(|s| s.cell_id.clone()).collect();
    for id in &all_zero {
        log::warn!("cell {id} has no nonzero counts; sentence is empty");
    }
    SentenceSet { sentences, all_zero }
}
