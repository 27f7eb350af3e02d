use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{InterpretError, MarkerDb};
use crate::embed::{cosine, EmbedError, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub cell_type: String,
    pub top_marker: String,
    pub n_markers: usize,
    /// Mean cosine of the top marker to the type's other markers.
    pub intra: f64,
    /// Mean cosine of the top marker to the other types' markers.
    pub inter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub rows: Vec<SimilarityRow>,
    pub intra: f64,
    pub inter: f64,
    pub excluded: Vec<String>,
}

/// Embeds marker names as bare strings via `embed` and compares each
/// type's top marker with its own and other types' markers.
pub fn marker_similarity_table<F>(db: &MarkerDb, types: &[String], embed: F) -> Result<SimilarityTable, InterpretError>
where
    F: Fn(&[String]) -> Result<Vec<EmbeddingVector>, EmbedError>,
{
    let mut excluded = Vec::new();
    let mut selected: Vec<(&str, Vec<&str>)> = Vec::new();
    for t in types.iter().collect::<BTreeSet<_>>() {
        match db.markers(t) {
            Some(m) if m.len() >= 2 => selected.push((t, m)),
            Some(m) => {
                log::warn!("type {t:?} has {} marker(s); excluded", m.len());
                excluded.push(t.clone());
            }
            None => {
                log::warn!("type {t:?} missing from marker db; excluded");
                excluded.push(t.clone());
            }
        }
    }
    if selected.len() < 2 {
        return Err(InterpretError::Invalid(format!("need 2 types with 2+ markers, have {}", selected.len())));
    }
    let names: Vec<String> =
        selected.iter().flat_map(|(_, m)| m.iter().map(|g| g.to_string())).collect::<BTreeSet<_>>().into_iter().collect();
    let vectors = embed(&names)?;
    if vectors.len() != names.len() {
        return Err(InterpretError::Invalid(format!("embedder returned {} vectors for {} names", vectors.len(), names.len())));
    }
    let lookup: HashMap<&str, &EmbeddingVector> = names.iter().map(String::as_str).zip(&vectors).collect();
    // Sorted operands keep the sums independent of list order.
    let mean_cos = |top: &str, others: &mut Vec<&str>| -> Result<f64, InterpretError> {
        others.sort_unstable();
        let mut s = 0.0;
        for g in others.iter() {
            s += cosine(lookup[top], lookup[g])?;
        }
        Ok(s / others.len() as f64)
    };
    let mut rows = Vec::with_capacity(selected.len());
    for (i, (t, markers)) in selected.iter().enumerate() {
        let top = markers[0];
        let mut own: Vec<&str> = markers[1..].to_vec();
        let mut other: Vec<&str> =
            selected.iter().enumerate().filter(|&(j, _)| j != i).flat_map(|(_, (_, m))| m.iter().copied()).collect();
        rows.push(SimilarityRow {
            cell_type: t.to_string(),
            top_marker: top.to_owned(),
            n_markers: markers.len(),
            intra: mean_cos(top, &mut own)?,
            inter: mean_cos(top, &mut other)?,
        });
    }
    let n = rows.len() as f64;
    let intra = rows.iter().map(|r| r.intra).sum::<f64>() / n;
    let inter = rows.iter().map(|r| r.inter).sum::<f64>() / n;
    Ok(SimilarityTable { rows, intra, inter, excluded })
}
