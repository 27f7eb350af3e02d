use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellRecord, CorpusError, Dataset, GeneVocabulary};

const UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    DenseCsv,
    SparseJsonl,
}

impl std::str::FromStr for DataFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense-csv" => Ok(Self::DenseCsv),
            "sparse-jsonl" => Ok(Self::SparseJsonl),
            other => Err(format!("unknown data format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Companion `cell_id,label` CSV for dense input.
    pub labels: Option<PathBuf>,
    /// `{"genes": [...]}` file fixing the vocabulary for sparse input.
    pub vocabulary: Option<PathBuf>,
}

pub fn load_dataset(path: &Path, format: DataFormat, opts: &LoadOptions) -> Result<Dataset, CorpusError> {
    let file = BufReader::new(File::open(path)?);
    match format {
        DataFormat::DenseCsv => {
            let labels = match &opts.labels {
                Some(p) => Some(read_labels(BufReader::new(File::open(p)?))?),
                None => None,
            };
            parse_dense_csv(file, labels.as_ref())
        }
        DataFormat::SparseJsonl => {
            let vocab = match &opts.vocabulary {
                Some(p) => Some(read_vocabulary(BufReader::new(File::open(p)?))?),
                None => None,
            };
            parse_sparse_jsonl(file, vocab)
        }
    }
}

fn parse_count(raw: &str, line: usize) -> Result<f64, CorpusError> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| CorpusError::Malformed { line, msg: format!("not a number: {raw:?}") })?;
    check_count(v, line)
}

fn check_count(v: f64, line: usize) -> Result<f64, CorpusError> {
    if !v.is_finite() {
        return Err(CorpusError::NonFiniteCount { line });
    }
    if v < 0.0 {
        return Err(CorpusError::NegativeCount { line });
    }
    Ok(v)
}

fn read_labels<R: Read>(reader: R) -> Result<HashMap<String, String>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(CorpusError::Malformed { line, msg: "labels row must be cell_id,label".into() });
        }
        out.insert(rec[0].to_owned(), rec[1].to_owned());
    }
    Ok(out)
}

fn csv_err(e: &csv::Error) -> CorpusError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    CorpusError::Malformed { line, msg: e.to_string() }
}

/// Dense matrix: header `cell_id[,label],<gene1>,...`; one row per cell.
pub fn parse_dense_csv<R: Read>(
    reader: R,
    labels: Option<&HashMap<String, String>>,
) -> Result<Dataset, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(&e))?.clone();
    if header.get(0) != Some("cell_id") {
        return Err(CorpusError::Malformed { line: 1, msg: "first column must be cell_id".into() });
    }
    let has_label_col = header.get(1) == Some("label");
    let first_gene = if has_label_col { 2 } else { 1 };
    let genes: Vec<String> = header.iter().skip(first_gene).map(str::to_owned).collect();
    let vocabulary = GeneVocabulary::new(genes)?;

    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell_id = rec[0].to_owned();
        if cell_id.is_empty() {
            return Err(CorpusError::Malformed { line, msg: "empty cell_id".into() });
        }
        if !seen.insert(cell_id.clone()) {
            return Err(CorpusError::DuplicateCell { line, cell_id });
        }
        let label = if has_label_col {
            rec[1].to_owned()
        } else if let Some(map) = labels {
            map.get(&cell_id).cloned().ok_or_else(|| CorpusError::Malformed {
                line,
                msg: format!("no label for cell {cell_id:?}"),
            })?
        } else {
            UNLABELED.to_owned()
        };
        let mut counts = Vec::with_capacity(vocabulary.len());
        for (g, raw) in rec.iter().skip(first_gene).enumerate() {
            counts.push((g, parse_count(raw, line)?));
        }
        cells.push(CellRecord { cell_id, label, counts });
    }
    Dataset::new(vocabulary, cells)
}

#[derive(Deserialize)]
struct SparseRecord {
    cell_id: String,
    #[serde(default)]
    label: Option<String>,
    counts: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    genes: Vec<String>,
}

pub fn read_vocabulary<R: Read>(reader: R) -> Result<GeneVocabulary, CorpusError> {
    let v: VocabularyFile = serde_json::from_reader(reader)
        .map_err(|e| CorpusError::Malformed { line: e.line(), msg: e.to_string() })?;
    GeneVocabulary::new(v.genes)
}

/// One JSON object per line. Without a fixed vocabulary, genes are the
/// sorted union of all count keys.
pub fn parse_sparse_jsonl<R: BufRead>(
    reader: R,
    vocabulary: Option<GeneVocabulary>,
) -> Result<Dataset, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SparseRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, msg: e.to_string() })?;
        records.push((line_no, rec));
    }
    let vocabulary = match vocabulary {
        Some(v) => v,
        None => {
            let all: BTreeSet<&str> =
                records.iter().flat_map(|(_, r)| r.counts.keys().map(String::as_str)).collect();
            GeneVocabulary::new(all.into_iter().map(str::to_owned).collect())?
        }
    };
    let mut cells = Vec::with_capacity(records.len());
    let mut seen = HashSet::new();
    for (line, rec) in records {
        if !seen.insert(rec.cell_id.clone()) {
            return Err(CorpusError::DuplicateCell { line, cell_id: rec.cell_id });
        }
        let mut counts = Vec::with_capacity(rec.counts.len());
        for (gene, v) in rec.counts {
            let g = vocabulary
                .position(&gene)
                .ok_or_else(|| CorpusError::UnknownGene { line, gene: gene.clone() })?;
            counts.push((g, check_count(v, line)?));
        }
        counts.sort_by_key(|&(g, _)| g);
        cells.push(CellRecord {
            cell_id: rec.cell_id,
            label: rec.label.unwrap_or_else(|| UNLABELED.to_owned()),
            counts,
        });
    }
    Dataset::new(vocabulary, cells)
}

#[derive(Serialize)]
struct SparseOut<'a> {
    cell_id: &'a str,
    label: &'a str,
    counts: BTreeMap<&'a str, f64>,
}

/// Writes the sparse JSONL form; genes with explicit entries are kept.
pub fn write_sparse_jsonl<W: Write>(ds: &Dataset, mut w: W) -> Result<(), CorpusError> {
    for c in &ds.cells {
        let counts = c.counts.iter().map(|&(g, v)| (ds.vocabulary.name(g), v)).collect();
        let rec = SparseOut { cell_id: &c.cell_id, label: &c.label, counts };
        serde_json::to_writer(&mut w, &rec).map_err(|e| CorpusError::Invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the dense CSV form with an inline `label` column.
pub fn write_dense_csv<W: Write>(ds: &Dataset, w: W) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["cell_id", "label"];
    header.extend(ds.vocabulary.genes().iter().map(String::as_str));
    wtr.write_record(&header).map_err(|e| csv_err(&e))?;
    for c in &ds.cells {
        let mut row = vec![c.cell_id.clone(), c.label.clone()];
        row.extend((0..ds.vocabulary.len()).map(|g| format!("{}", c.count(g))));
        wtr.write_record(&row).map_err(|e| csv_err(&e))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_row_parses() {
        let ds = parse_dense_csv("cell_id,GCG,INS\nc1,5,0\n".as_bytes(), None).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.vocabulary.genes(), &["GCG".to_string(), "INS".to_string()]);
        assert_eq!(ds.cells[0].count(0), 5.0);
        assert_eq!(ds.cells[0].count(1), 0.0);
        assert_eq!(ds.cells[0].label, UNLABELED);
    }

    #[test]
    fn dense_negative_count_reports_line() {
        let e = parse_dense_csv("cell_id,GCG,INS\nc1,5,0\nc2,-1,3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(e, CorpusError::NegativeCount { line: 3 }), "{e:?}");
    }

    #[test]
    fn dense_duplicate_and_ragged_rows() {
        let e = parse_dense_csv("cell_id,A\nc1,1\nc1,2\n".as_bytes(), None).unwrap_err();
        assert!(matches!(e, CorpusError::DuplicateCell { line: 3, .. }), "{e:?}");
        let e = parse_dense_csv("cell_id,A,B\nc1,1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(e, CorpusError::Malformed { line: 2, .. }), "{e:?}");
        let e = parse_dense_csv("cell_id,A\nc1,x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(e, CorpusError::Malformed { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn dense_companion_labels() {
        let labels: HashMap<_, _> = [("c1".to_string(), "Alpha".to_string())].into();
        let ds = parse_dense_csv("cell_id,A\nc1,1\n".as_bytes(), Some(&labels)).unwrap();
        assert_eq!(ds.cells[0].label, "Alpha");
        assert_eq!(ds.label_set, vec!["Alpha".to_string()]);
    }

    #[test]
    fn sparse_record_parses() {
        let src = r#"{"cell_id":"c2","label":"Beta","counts":{"INS":3.5}}"#;
        let ds = parse_sparse_jsonl(src.as_bytes(), None).unwrap();
        assert_eq!(ds.cells[0].counts, vec![(0, 3.5)]);
        assert_eq!(ds.cells[0].label, "Beta");
    }

    #[test]
    fn sparse_vocabulary_is_sorted_union() {
        let src = "{\"cell_id\":\"a\",\"label\":\"x\",\"counts\":{\"TTR\":1}}\n\
                   {\"cell_id\":\"b\",\"label\":\"y\",\"counts\":{\"GCG\":2,\"INS\":1}}\n";
        let ds = parse_sparse_jsonl(src.as_bytes(), None).unwrap();
        assert_eq!(ds.vocabulary.genes(), &["GCG", "INS", "TTR"]);
    }

    #[test]
    fn sparse_unknown_gene_with_fixed_vocabulary() {
        let vocab = GeneVocabulary::new(vec!["GCG".into()]).unwrap();
        let src = "{\"cell_id\":\"a\",\"label\":\"x\",\"counts\":{\"GCG\":1}}\n\
                   {\"cell_id\":\"b\",\"label\":\"x\",\"counts\":{\"INS\":1}}\n";
        let e = parse_sparse_jsonl(src.as_bytes(), Some(vocab)).unwrap_err();
        assert!(matches!(e, CorpusError::UnknownGene { line: 2, ref gene } if gene == "INS"), "{e:?}");
    }

    #[test]
    fn sparse_negative_and_malformed() {
        let e = parse_sparse_jsonl(r#"{"cell_id":"a","counts":{"G":-2}}"#.as_bytes(), None).unwrap_err();
        assert!(matches!(e, CorpusError::NegativeCount { line: 1 }));
        let e = parse_sparse_jsonl("{\"cell_id\":\"a\",\"counts\":{}}\nnot json\n".as_bytes(), None)
            .unwrap_err();
        assert!(matches!(e, CorpusError::Malformed { line: 2, .. }));
    }
}
