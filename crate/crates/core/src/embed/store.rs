use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector};
use crate::ablate::VariantId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub model_id: String,
    pub dim: usize,
    pub normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    vector: Vec<f64>,
}

/// `cell_id|variant`. Variant ids never contain `|`.
pub fn store_key(cell_id: &str, variant: &VariantId) -> String {
    format!("{cell_id}|{variant}")
}

/// JSONL embedding store: one header line, then one `{"key", "vector"}`
/// object per entry. Entries are written in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    header: StoreHeader,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(header: StoreHeader) -> Self {
        Self { header, entries: BTreeMap::new() }
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cell_id: &str, variant: &VariantId) -> Option<&EmbeddingVector> {
        self.entries.get(&store_key(cell_id, variant))
    }

    pub fn get_key(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Inserts or overwrites; the vector must match the header dimension.
    pub fn insert(&mut self, cell_id: &str, variant: &VariantId, v: EmbeddingVector) -> Result<(), EmbedError> {
        self.insert_key(store_key(cell_id, variant), v)
    }

    pub fn insert_key(&mut self, key: String, v: EmbeddingVector) -> Result<(), EmbedError> {
        if v.dim() != self.header.dim {
            return Err(EmbedError::DimMismatch { expected: self.header.dim, got: v.dim() });
        }
        self.entries.insert(key, v);
        Ok(())
    }

    /// Parses a store and collects soft warnings (zero vectors; norms that
    /// disagree with the `normalized` flag). Hard violations are errors.
    pub fn read_with_warnings<R: BufRead>(reader: R) -> Result<(Self, Vec<String>), EmbedError> {
        let mut lines = reader.lines().enumerate();
        let header: StoreHeader = loop {
            match lines.next() {
                Some((i, l)) => {
                    let l = l?;
                    if l.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&l)
                        .map_err(|e| EmbedError::StoreFormat { line: i + 1, msg: format!("header: {e}") })?;
                }
                None => return Err(EmbedError::StoreFormat { line: 1, msg: "missing header".into() }),
            }
        };
        if header.dim == 0 {
            return Err(EmbedError::StoreFormat { line: 1, msg: "dim must be positive".into() });
        }
        let mut store = Self::new(header);
        let mut warnings = Vec::new();
        for (i, l) in lines {
            let line = i + 1;
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let e: Entry = serde_json::from_str(&l).map_err(|e| EmbedError::StoreFormat { line, msg: e.to_string() })?;
            if !e.key.contains('|') {
                return Err(EmbedError::StoreFormat { line, msg: format!("key {:?} lacks a variant", e.key) });
            }
            let v = EmbeddingVector::new(e.vector).map_err(|err| EmbedError::StoreFormat { line, msg: err.to_string() })?;
            if v.dim() != store.header.dim {
                return Err(EmbedError::StoreFormat {
                    line,
                    msg: format!("dimension {} does not match header {}", v.dim(), store.header.dim),
                });
            }
            if store.entries.contains_key(&e.key) {
                return Err(EmbedError::DuplicateKey(e.key));
            }
            let n = v.norm();
            if n == 0.0 {
                warnings.push(format!("line {line}: zero vector for {}", e.key));
            } else if store.header.normalized && (n - 1.0).abs() > 1e-6 {
                warnings.push(format!("line {line}: norm {n} but header says normalized"));
            }
            store.entries.insert(e.key, v);
        }
        Ok((store, warnings))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let (store, warnings) = Self::read_with_warnings(reader)?;
        for w in warnings {
            log::warn!("{w}");
        }
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        let to_err = |e: serde_json::Error| EmbedError::Io(e.into());
        serde_json::to_writer(&mut w, &self.header).map_err(to_err)?;
        w.write_all(b"\n")?;
        for (key, v) in &self.entries {
            let e = Entry { key: key.clone(), vector: v.as_slice().to_vec() };
            serde_json::to_writer(&mut w, &e).map_err(to_err)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp)?;
            self.write(BufWriter::new(f))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}
