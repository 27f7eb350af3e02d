use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::InterpretError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub cell_type: String,
    pub gene: String,
    /// 1 is the top marker.
    pub rank: u32,
}

/// Reference marker genes per cell type, held in rank order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkerDb {
    by_type: BTreeMap<String, Vec<(u32, String)>>,
}

impl MarkerDb {
    pub fn from_records(records: impl IntoIterator<Item = MarkerRecord>) -> Result<Self, InterpretError> {
        let mut by_type: BTreeMap<String, Vec<(u32, String)>> = BTreeMap::new();
        for r in records {
            by_type.entry(r.cell_type).or_default().push((r.rank, r.gene));
        }
        for (t, list) in &mut by_type {
            list.sort();
            let mut genes = HashSet::new();
            for w in list.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(InterpretError::MarkerDb { line: 0, msg: format!("type {t:?}: rank {} repeated", w[0].0) });
                }
            }
            for (_, g) in list.iter() {
                if !genes.insert(g.as_str()) {
                    return Err(InterpretError::MarkerDb { line: 0, msg: format!("type {t:?}: gene {g:?} repeated") });
                }
            }
        }
        Ok(Self { by_type })
    }

    /// Reads `cell_type<TAB>gene<TAB>rank` lines. A first line whose rank
    /// column is not a number is taken as a header; `#` lines are skipped.
    pub fn read_tsv<R: Read>(mut r: R) -> Result<Self, InterpretError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(InterpretError::MarkerDb { line: line_no, msg: format!("expected 3 columns, got {}", cols.len()) });
            }
            let rank = match cols[2].trim().parse::<u32>() {
                Ok(r) if r >= 1 => r,
                Ok(_) => return Err(InterpretError::MarkerDb { line: line_no, msg: "rank must be at least 1".into() }),
                Err(_) if records.is_empty() && line_no == 1 => continue,
                Err(e) => return Err(InterpretError::MarkerDb { line: line_no, msg: format!("rank: {e}") }),
            };
            let (t, g) = (cols[0].trim(), cols[1].trim());
            if t.is_empty() || g.is_empty() {
                return Err(InterpretError::MarkerDb { line: line_no, msg: "empty cell type or gene".into() });
            }
            records.push(MarkerRecord { cell_type: t.into(), gene: g.into(), rank });
        }
        Self::from_records(records)
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.by_type.keys().map(String::as_str)
    }

    /// Markers of `cell_type` in rank order.
    pub fn markers(&self, cell_type: &str) -> Option<Vec<&str>> {
        self.by_type.get(cell_type).map(|l| l.iter().map(|(_, g)| g.as_str()).collect())
    }

    pub fn contains(&self, cell_type: &str, gene: &str) -> bool {
        self.by_type.get(cell_type).is_some_and(|l| l.iter().any(|(_, g)| g == gene))
    }

    pub fn len(&self) -> usize {
        self.by_type.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_type.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_tsv_in_rank_order() {
        let tsv = "cell_type\tgene\trank\nAlpha\tTTR\t2\nAlpha\tGCG\t1\nBeta\tINS\t1\n# comment\n\n";
        let db = MarkerDb::read_tsv(tsv.as_bytes()).unwrap();
        assert_eq!(db.types().collect::<Vec<_>>(), vec!["Alpha", "Beta"]);
        assert_eq!(db.markers("Alpha").unwrap(), vec!["GCG", "TTR"]);
        assert!(db.contains("Beta", "INS"));
        assert!(!db.contains("Beta", "GCG"));
        assert!(db.markers("Gamma").is_none());
    }

    #[test]
    fn rejects_bad_rows() {
        let dup_rank = "A\tX\t1\nA\tY\t1\n";
        assert!(matches!(MarkerDb::read_tsv(dup_rank.as_bytes()), Err(InterpretError::MarkerDb { .. })));
        let dup_gene = "A\tX\t1\nA\tX\t2\n";
        assert!(MarkerDb::read_tsv(dup_gene.as_bytes()).is_err());
        let short = "A\tX\t1\nA\tY\n";
        match MarkerDb::read_tsv(short.as_bytes()) {
            Err(InterpretError::MarkerDb { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(MarkerDb::read_tsv("A\tX\t1\nA\tY\tz\n".as_bytes()).is_err());
    }
}
