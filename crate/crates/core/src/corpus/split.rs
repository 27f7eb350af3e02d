use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;

use super::{CorpusError, Dataset, Split};
use crate::seed;

/// Per-label seeded shuffle; `round(fraction * n)` cells of each label go to
/// test, clamped so every label keeps at least one cell on each side.
pub fn stratified_split(dataset: Dataset, test_fraction: f64, seed: u64) -> Result<Dataset, CorpusError> {
    let labels: Vec<&str> = dataset.cells.iter().map(|c| c.label.as_str()).collect();
    let held = stratified_holdout(&labels, test_fraction, seed)?;
    let split = held.into_iter().map(|h| if h { Split::Test } else { Split::Train }).collect();
    dataset.with_split(split)
}

/// Label-only core of [`stratified_split`]: `true` marks held-out items.
pub fn stratified_holdout<S: AsRef<str>>(labels: &[S], fraction: f64, seed: u64) -> Result<Vec<bool>, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(l.as_ref()).or_default().push(i);
    }
    let mut held = vec![false; labels.len()];
    for (label, mut idx) in by_label {
        if idx.len() < 2 {
            return Err(CorpusError::SingletonLabel(label.to_owned()));
        }
        let n = idx.len();
        let n_out = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut rng = seed::rng(seed, label, &[]);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_out] {
            held[i] = true;
        }
    }
    Ok(held)
}

pub fn write_split<W: Write>(dataset: &Dataset, w: W) -> Result<(), CorpusError> {
    let split = dataset
        .split
        .as_ref()
        .ok_or_else(|| CorpusError::Invalid("dataset has no split".into()))?;
    let map: BTreeMap<&str, Split> =
        dataset.cells.iter().zip(split).map(|(c, &s)| (c.cell_id.as_str(), s)).collect();
    serde_json::to_writer_pretty(w, &map).map_err(|e| CorpusError::Invalid(e.to_string()))
}

/// Attaches a `{cell_id: "train"|"test"}` map; it must cover every cell.
pub fn read_split<R: Read>(dataset: Dataset, r: R) -> Result<Dataset, CorpusError> {
    let map: HashMap<String, Split> = serde_json::from_reader(r)
        .map_err(|e| CorpusError::Malformed { line: e.line(), msg: e.to_string() })?;
    let split = dataset
        .cells
        .iter()
        .map(|c| map.get(&c.cell_id).copied().ok_or_else(|| CorpusError::IncompleteSplit(c.cell_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    dataset.with_split(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CellRecord, GeneVocabulary};

    fn balanced(n_per_label: usize, labels: &[&str]) -> Dataset {
        let vocab = GeneVocabulary::new(vec!["G".into()]).unwrap();
        let mut cells = Vec::new();
        for l in labels {
            for i in 0..n_per_label {
                cells.push(CellRecord { cell_id: format!("{l}{i}"), label: l.to_string(), counts: vec![(0, 1.0)] });
            }
        }
        Dataset::new(vocab, cells).unwrap()
    }

    #[test]
    fn eighty_twenty_per_label() {
        let ds = stratified_split(balanced(50, &["A", "B"]), 0.2, 7).unwrap();
        let test = ds.indices(Split::Test);
        assert_eq!(test.len(), 20);
        assert_eq!(ds.indices(Split::Train).len(), 80);
        let a = test.iter().filter(|&&i| ds.cells[i].label == "A").count();
        assert_eq!(a, 10);
    }

    #[test]
    fn invalid_fractions() {
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(
                stratified_split(balanced(5, &["A"]), f, 1),
                Err(CorpusError::InvalidFraction(_))
            ));
        }
    }

    #[test]
    fn singleton_label_rejected() {
        let e = stratified_split(balanced(1, &["A"]), 0.5, 1).unwrap_err();
        assert!(matches!(e, CorpusError::SingletonLabel(l) if l == "A"));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = stratified_split(balanced(30, &["A", "B", "C"]), 0.3, 11).unwrap();
        let b = stratified_split(balanced(30, &["A", "B", "C"]), 0.3, 11).unwrap();
        let c = stratified_split(balanced(30, &["A", "B", "C"]), 0.3, 12).unwrap();
        assert_eq!(a.split, b.split);
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn split_file_round_trip() {
        let ds = stratified_split(balanced(10, &["A", "B"]), 0.2, 3).unwrap();
        let mut buf = Vec::new();
        write_split(&ds, &mut buf).unwrap();
        let back = read_split(balanced(10, &["A", "B"]), buf.as_slice()).unwrap();
        assert_eq!(back.split, ds.split);
    }
}
