use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{InterpretError, MarkerDb};

/// Cells summed per type.
pub const DEFAULT_CELL_CAP: usize = 10;
/// Length of each type's gene list.
pub const TOP_GENES: usize = 10;

/// Per-gene scores explaining one cell's score for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub cell_id: String,
    pub class: String,
    pub method: String,
    pub scores: BTreeMap<String, f64>,
}

/// The top positively attributed genes of one type under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSignature {
    pub class: String,
    pub method: String,
    pub n_cells: usize,
    /// (gene, summed score), descending.
    pub genes: Vec<(String, f64)>,
}

impl TypeSignature {
    pub fn gene_names(&self) -> impl Iterator<Item = &str> {
        self.genes.iter().map(|(g, _)| g.as_str())
    }
}

/// Sums scores over at most `cap` cells per class (lowest cell ids first)
/// and keeps the ten genes with the largest positive sums.
pub fn aggregate_attributions(records: &[AttributionRecord], cap: usize) -> Result<Vec<TypeSignature>, InterpretError> {
    let Some(first) = records.first() else { return Ok(Vec::new()) };
    if let Some(r) = records.iter().find(|r| r.method != first.method) {
        return Err(InterpretError::MixedMethods(first.method.clone(), r.method.clone()));
    }
    let mut by_class: BTreeMap<&str, BTreeMap<&str, &AttributionRecord>> = BTreeMap::new();
    for r in records {
        if by_class.entry(&r.class).or_default().insert(&r.cell_id, r).is_some() {
            return Err(InterpretError::DuplicateRecord { cell_id: r.cell_id.clone(), class: r.class.clone() });
        }
    }
    let mut out = Vec::with_capacity(by_class.len());
    for (class, cells) in by_class {
        if cells.len() > cap {
            log::warn!("class {class:?}: {} cells supplied, using the first {cap} by cell_id", cells.len());
        }
        let used: Vec<&AttributionRecord> = cells.into_values().take(cap).collect();
        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for r in &used {
            for (g, s) in &r.scores {
                *sums.entry(g).or_insert(0.0) += s;
            }
        }
        let mut genes: Vec<(String, f64)> =
            sums.into_iter().filter(|&(_, s)| s > 0.0).map(|(g, s)| (g.to_owned(), s)).collect();
        // Stable sort keeps gene-name order among equal sums.
        genes.sort_by(|a, b| b.1.total_cmp(&a.1));
        genes.truncate(TOP_GENES);
        out.push(TypeSignature { class: class.to_owned(), method: first.method.clone(), n_cells: used.len(), genes });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeOverlap {
    pub cell_type: String,
    /// False when the marker db has no entry for this type.
    pub covered: bool,
    pub top_genes: BTreeMap<String, Vec<String>>,
    /// Top genes that are markers of this type, in top-list order.
    pub markers_found: BTreeMap<String, Vec<String>>,
    /// Markers found by every method, in marker rank order.
    pub shared: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub methods: Vec<String>,
    pub types: Vec<TypeOverlap>,
    pub uncovered: Vec<String>,
}

/// Intersects each type's top genes with its markers, per method and across
/// methods.
pub fn marker_overlap(signatures: &[TypeSignature], db: &MarkerDb) -> Result<OverlapReport, InterpretError> {
    let mut by_type: BTreeMap<&str, BTreeMap<&str, &TypeSignature>> = BTreeMap::new();
    for s in signatures {
        if by_type.entry(&s.class).or_default().insert(&s.method, s).is_some() {
            return Err(InterpretError::Invalid(format!("two {:?} signatures for type {:?}", s.method, s.class)));
        }
    }
    let methods: BTreeSet<&str> = signatures.iter().map(|s| s.method.as_str()).collect();
    let mut report = OverlapReport { methods: methods.iter().map(|m| m.to_string()).collect(), types: Vec::new(), uncovered: Vec::new() };
    for (cell_type, sigs) in by_type {
        let markers = db.markers(cell_type);
        if markers.is_none() {
            log::warn!("type {cell_type:?} has no marker db entry");
            report.uncovered.push(cell_type.to_owned());
        }
        let marker_set: HashSet<&str> = markers.iter().flatten().copied().collect();
        let mut t = TypeOverlap {
            cell_type: cell_type.to_owned(),
            covered: markers.is_some(),
            top_genes: BTreeMap::new(),
            markers_found: BTreeMap::new(),
            shared: Vec::new(),
        };
        for (method, sig) in &sigs {
            t.top_genes.insert(method.to_string(), sig.gene_names().map(str::to_owned).collect());
            let found = sig.gene_names().filter(|g| marker_set.contains(g)).map(str::to_owned).collect();
            t.markers_found.insert(method.to_string(), found);
        }
        t.shared = markers
            .iter()
            .flatten()
            .filter(|m| t.markers_found.values().all(|f| f.iter().any(|g| g == *m)))
            .map(|m| m.to_string())
            .collect();
        if t.markers_found.is_empty() {
            t.shared.clear();
        }
        report.types.push(t);
    }
    Ok(report)
}

/// Rewrites bare NaN / Infinity tokens, which some writers emit, as null so
/// the line still parses and the score can be reported precisely.
fn nullify_nonfinite(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_str = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
        } else {
            let token = ["-Infinity", "Infinity", "NaN"].into_iter().find(|t| rest.starts_with(t));
            if let Some(t) = token {
                out.push_str("null");
                rest = &rest[t.len()..];
                continue;
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    cell_id: String,
    class: String,
    method: String,
    scores: BTreeMap<String, Option<f64>>,
}

/// Reads attribution JSONL. With `known_cells`, records for other cells are
/// rejected.
pub fn read_attributions<R: BufRead>(
    reader: R,
    known_cells: Option<&HashSet<String>>,
) -> Result<Vec<AttributionRecord>, InterpretError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&nullify_nonfinite(&line))
            .map_err(|e| InterpretError::Schema { line: line_no, msg: e.to_string() })?;
        if raw.method.is_empty() {
            return Err(InterpretError::Schema { line: line_no, msg: "empty method".into() });
        }
        if known_cells.is_some_and(|k| !k.contains(&raw.cell_id)) {
            return Err(InterpretError::UnknownCell { line: line_no, cell_id: raw.cell_id });
        }
        let scores = raw
            .scores
            .into_iter()
            .map(|(g, s)| match s {
                Some(v) if v.is_finite() => Ok((g, v)),
                _ => Err(InterpretError::NonFiniteScore(line_no)),
            })
            .collect::<Result<_, _>>()?;
        out.push(AttributionRecord { cell_id: raw.cell_id, class: raw.class, method: raw.method, scores });
    }
    Ok(out)
}

pub fn write_attributions<W: Write>(mut w: W, records: &[AttributionRecord]) -> Result<(), InterpretError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| InterpretError::Invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::MarkerRecord;

    fn rec(cell: &str, class: &str, method: &str, scores: &[(&str, f64)]) -> AttributionRecord {
        AttributionRecord {
            cell_id: cell.into(),
            class: class.into(),
            method: method.into(),
            scores: scores.iter().map(|(g, s)| (g.to_string(), *s)).collect(),
        }
    }

    fn names(s: &TypeSignature) -> Vec<&str> {
        s.gene_names().collect()
    }

    #[test]
    fn positive_filter_and_order() {
        let out = aggregate_attributions(&[rec("c1", "Alpha", "lime", &[("A", 2.0), ("B", -1.0), ("C", 0.5)])], 10).unwrap();
        assert_eq!(names(&out[0]), ["A", "C"]);
        let out = aggregate_attributions(
            &[rec("c1", "Alpha", "lime", &[("A", 1.0), ("B", 0.1)]), rec("c2", "Alpha", "lime", &[("A", -1.0)])],
            10,
        )
        .unwrap();
        assert_eq!(names(&out[0]), ["B"]);
    }

    #[test]
    fn cap_uses_lowest_cell_ids() {
        // Cells c00..c11; only c10 and c11 score gene Z.
        let recs: Vec<_> = (0..12)
            .map(|i| {
                let z = if i >= 10 { 5.0 } else { 0.0 };
                rec(&format!("c{i:02}"), "T", "lime", &[("A", 1.0), ("Z", z)])
            })
            .rev()
            .collect();
        let out = aggregate_attributions(&recs, 10).unwrap();
        assert_eq!(out[0].n_cells, 10);
        assert_eq!(out[0].genes, vec![("A".to_string(), 10.0)]);
    }

    #[test]
    fn top_ten_and_permutation_invariant() {
        let mut recs: Vec<_> = (0..5)
            .map(|c| {
                let s: Vec<(String, f64)> = (0..15).map(|g| (format!("G{g:02}"), 0.1 * (g + c) as f64 - 0.3)).collect();
                let s: Vec<(&str, f64)> = s.iter().map(|(g, v)| (g.as_str(), *v)).collect();
                rec(&format!("c{c}"), "T", "ig", &s)
            })
            .collect();
        let a = aggregate_attributions(&recs, 10).unwrap();
        assert_eq!(a[0].genes.len(), TOP_GENES);
        assert_eq!(a[0].genes[0].0, "G14");
        recs.reverse();
        recs.swap(0, 2);
        assert_eq!(aggregate_attributions(&recs, 10).unwrap(), a);
    }

    #[test]
    fn mixed_methods_and_duplicates_rejected() {
        let e = aggregate_attributions(&[rec("a", "T", "lime", &[]), rec("b", "T", "ig", &[])], 10).unwrap_err();
        assert!(matches!(e, InterpretError::MixedMethods(..)));
        let e = aggregate_attributions(&[rec("a", "T", "lime", &[]), rec("a", "T", "lime", &[])], 10).unwrap_err();
        assert!(matches!(e, InterpretError::DuplicateRecord { .. }));
        assert!(aggregate_attributions(&[], 10).unwrap().is_empty());
    }

    fn db() -> MarkerDb {
        let r = |t: &str, g: &str, rank| MarkerRecord { cell_type: t.into(), gene: g.into(), rank };
        MarkerDb::from_records([r("Alpha", "GCG", 1), r("Alpha", "TTR", 2), r("Alpha", "IRX2", 3), r("Beta", "INS", 1)]).unwrap()
    }

    fn sig(class: &str, method: &str, genes: &[&str]) -> TypeSignature {
        TypeSignature {
            class: class.into(),
            method: method.into(),
            n_cells: 1,
            genes: genes.iter().map(|g| (g.to_string(), 1.0)).collect(),
        }
    }

    #[test]
    fn overlap_per_method_and_shared() {
        let sigs = [
            sig("Alpha", "lime", &["TTR", "XYZ", "GCG", "IRX2"]),
            sig("Alpha", "integrated_gradients", &["GCG", "TTR", "ABC"]),
            sig("Gamma", "lime", &["PPY"]),
        ];
        let r = marker_overlap(&sigs, &db()).unwrap();
        let alpha = &r.types[0];
        assert_eq!(alpha.markers_found["lime"], ["TTR", "GCG", "IRX2"]);
        assert_eq!(alpha.markers_found["integrated_gradients"], ["GCG", "TTR"]);
        assert_eq!(alpha.shared, ["GCG", "TTR"]);
        assert_eq!(r.uncovered, ["Gamma"]);
        assert!(!r.types[1].covered && r.types[1].shared.is_empty());

        let mut swapped = sigs.clone();
        swapped.swap(0, 1);
        assert_eq!(marker_overlap(&swapped, &db()).unwrap().types[0].shared, alpha.shared);

        let r = marker_overlap(&[sig("Beta", "lime", &[])], &db()).unwrap();
        assert!(r.types[0].markers_found["lime"].is_empty() && r.types[0].shared.is_empty());
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let recs = vec![rec("c1", "Alpha", "integrated_gradients", &[("GCG", 0.5)]), rec("c2", "Beta", "integrated_gradients", &[("INS", -1e-3)])];
        let mut buf = Vec::new();
        write_attributions(&mut buf, &recs).unwrap();
        let known: HashSet<String> = ["c1".to_string(), "c2".to_string()].into();
        assert_eq!(read_attributions(buf.as_slice(), Some(&known)).unwrap(), recs);

        let nan = "{\"cell_id\":\"c1\",\"class\":\"A\",\"method\":\"m\",\"scores\":{\"G\":1}}\n{\"cell_id\":\"c2\",\"class\":\"A\",\"method\":\"m\",\"scores\":{\"NaN\":NaN}}\n";
        assert!(matches!(read_attributions(nan.as_bytes(), None), Err(InterpretError::NonFiniteScore(2))));
        let unknown = "{\"cell_id\":\"zz\",\"class\":\"A\",\"method\":\"m\",\"scores\":{}}";
        assert!(matches!(read_attributions(unknown.as_bytes(), Some(&known)), Err(InterpretError::UnknownCell { line: 1, .. })));
        let bad = "{\"cell_id\":\"c1\",\"class\":\"A\",\"scores\":{}}";
        assert!(matches!(read_attributions(bad.as_bytes(), None), Err(InterpretError::Schema { line: 1, .. })));
    }

    #[test]
    fn nullify_leaves_strings_alone() {
        assert_eq!(nullify_nonfinite(r#"{"NaN":NaN,"x":-Infinity}"#), r#"{"NaN":null,"x":null}"#);
    }
}
