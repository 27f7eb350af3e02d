//! Synthetic corpora for desk-scale experiments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CellRecord, CorpusError, Dataset, GeneVocabulary};
use crate::seed;

/// Layout of the rank-structured marker corpus.
///
/// Every sentence opens with the same `head_genes` genes in an order specific
/// to the cell type (adjacent pairs swap with `head_swap_prob`). Ranks
/// `head_genes..window` hold `markers_per_cell` of the type's own markers and
/// `confusers_per_cell` markers of other types, interleaved with noise genes;
/// the tail is noise only. All names are four characters long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerCorpusConfig {
    pub n_types: usize,
    pub cells_per_type: usize,
    pub head_genes: usize,
    pub head_swap_prob: f64,
    pub markers_per_type: usize,
    pub markers_per_cell: usize,
    pub confusers_per_cell: usize,
    pub window: usize,
    pub noise_pool: usize,
    pub sentence_len: usize,
}

impl Default for MarkerCorpusConfig {
    fn default() -> Self {
        Self {
            n_types: 5,
            cells_per_type: 200,
            head_genes: 6,
            head_swap_prob: 0.1,
            markers_per_type: 10,
            markers_per_cell: 5,
            confusers_per_cell: 3,
            window: 60,
            noise_pool: 3000,
            sentence_len: 400,
        }
    }
}

fn base36(mut i: usize, width: usize) -> String {
    const DIGITS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut out = vec![b'0'; width];
    for slot in out.iter_mut().rev() {
        *slot = DIGITS[i % 36];
        i /= 36;
    }
    assert_eq!(i, 0, "index does not fit in {width} base-36 digits");
    String::from_utf8(out).expect("ascii")
}

pub fn head_gene(i: usize) -> String {
    format!("H{}", base36(i, 3))
}

pub fn marker_gene(cell_type: usize, j: usize, per_type: usize) -> String {
    format!("M{}", base36(cell_type * per_type + j, 3))
}

pub fn noise_gene(i: usize) -> String {
    format!("N{}", base36(i, 3))
}

pub fn type_label(t: usize) -> String {
    format!("type{t}")
}

impl MarkerCorpusConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Invalid(format!("marker corpus: {m}")));
        if self.n_types < 2 || self.cells_per_type < 2 {
            return bad("need at least two types with two cells each");
        }
        if self.markers_per_cell > self.markers_per_type {
            return bad("markers_per_cell exceeds markers_per_type");
        }
        if self.head_genes + self.markers_per_cell + self.confusers_per_cell > self.window {
            return bad("window too small for head and markers");
        }
        if self.window > self.sentence_len {
            return bad("window longer than sentence");
        }
        if self.sentence_len - self.head_genes - self.markers_per_cell - self.confusers_per_cell > self.noise_pool {
            return bad("noise pool smaller than the noise slots");
        }
        if !(0.0..=1.0).contains(&self.head_swap_prob) {
            return bad("head_swap_prob outside [0, 1]");
        }
        Ok(())
    }

    fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.head_genes).map(head_gene).collect();
        for t in 0..self.n_types {
            v.extend((0..self.markers_per_type).map(|j| marker_gene(t, j, self.markers_per_type)));
        }
        v.extend((0..self.noise_pool).map(noise_gene));
        v
    }
}

/// Generates the corpus; gene rank `p` gets count `sentence_len - p`.
pub fn marker_corpus(cfg: &MarkerCorpusConfig, seed: u64) -> Result<Dataset, CorpusError> {
    cfg.validate()?;
    let vocab = GeneVocabulary::new(cfg.vocabulary())?;
    let head = cfg.head_genes;
    let marker_base = head;
    let noise_base = head + cfg.n_types * cfg.markers_per_type;

    // Distinct head orders per type.
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_types);
    let mut order_rng = seed::rng(seed, "synth-head", &[]);
    while orders.len() < cfg.n_types {
        let mut o: Vec<usize> = (0..head).collect();
        o.shuffle(&mut order_rng);
        if !orders.contains(&o) || head < 4 {
            orders.push(o);
        }
    }

    let mut cells = Vec::with_capacity(cfg.n_types * cfg.cells_per_type);
    for (t, order) in orders.iter().enumerate() {
        for i in 0..cfg.cells_per_type {
            let mut rng = seed::rng(seed, "synth-cell", &[t as u64, i as u64]);
            let mut ranked: Vec<usize> = order.clone();
            for k in 0..head.saturating_sub(1) {
                if rng.random::<f64>() < cfg.head_swap_prob {
                    ranked.swap(k, k + 1);
                }
            }
            let own: Vec<usize> = (0..cfg.markers_per_type)
                .collect::<Vec<_>>()
                .choose_multiple(&mut rng, cfg.markers_per_cell)
                .map(|&j| marker_base + t * cfg.markers_per_type + j)
                .collect();
            let mut placed = own;
            let others: Vec<usize> = (0..cfg.n_types * cfg.markers_per_type)
                .filter(|m| m / cfg.markers_per_type != t)
                .map(|m| marker_base + m)
                .collect();
            placed.extend(others.choose_multiple(&mut rng, cfg.confusers_per_cell).copied());
            let slots = cfg.sentence_len - head;
            let noise: Vec<usize> = (0..cfg.noise_pool)
                .collect::<Vec<_>>()
                .choose_multiple(&mut rng, slots - placed.len())
                .map(|&j| noise_base + j)
                .collect();
            let window_slots = cfg.window - head;
            let mut positions: Vec<usize> = (0..window_slots).collect();
            positions.shuffle(&mut rng);
            let mut body: Vec<Option<usize>> = vec![None; slots];
            for (&p, &g) in positions.iter().zip(&placed) {
                body[p] = Some(g);
            }
            let mut noise = noise.into_iter();
            ranked.extend(body.into_iter().map(|s| s.unwrap_or_else(|| noise.next().expect("enough noise"))));
            let n = ranked.len();
            let counts = ranked.into_iter().enumerate().map(|(p, g)| (g, (n - p) as f64)).collect();
            cells.push(CellRecord { cell_id: format!("c{t}-{i:04}"), label: type_label(t), counts });
        }
    }
    Dataset::new(vocab, cells)
}

/// Two modalities that each resolve half of the label structure.
///
/// Modality `a` separates classes {0}, {1} and {2, 3}; modality `b`
/// separates {2}, {3} and {0, 1}. Each alone can at best reach 0.75
/// accuracy on balanced data; together they identify every class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityPair {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

pub fn complementary_modalities(n_per_class: usize, dim: usize, noise_sd: f64, seed: u64) -> ModalityPair {
    assert!(dim >= 3, "need room for three cluster centres");
    let noise = Normal::new(0.0, noise_sd).expect("valid sd");
    let mut rng = seed::rng(seed, "synth-modalities", &[]);
    // Group of each class in modality a / b; groups sit on distinct axes.
    let group_a = [0, 1, 2, 2];
    let group_b = [2, 2, 0, 1];
    let mut out = ModalityPair { a: Vec::new(), b: Vec::new(), labels: Vec::new() };
    for i in 0..4 * n_per_class {
        let c = i % 4;
        let centre = |g: usize, d: usize| if d == g { 3.0 } else { 0.0 };
        out.a.push((0..dim).map(|d| centre(group_a[c], d) + noise.sample(&mut rng)).collect());
        out.b.push((0..dim).map(|d| centre(group_b[c], d) + noise.sample(&mut rng)).collect());
        out.labels.push(format!("class{c}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_sentence;

    #[test]
    fn names_are_four_chars_and_unique() {
        let cfg = MarkerCorpusConfig::default();
        let v = cfg.vocabulary();
        assert!(v.iter().all(|g| g.len() == 4));
        assert!(GeneVocabulary::new(v).is_ok());
        assert_eq!(base36(35, 2), "0z");
    }

    #[test]
    fn sentence_layout() {
        let cfg = MarkerCorpusConfig { cells_per_type: 5, head_swap_prob: 0.0, ..MarkerCorpusConfig::default() };
        let ds = marker_corpus(&cfg, 3).unwrap();
        assert_eq!(ds.cells.len(), 25);
        assert_eq!(ds.label_set.len(), 5);
        for cell in &ds.cells {
            let s = build_sentence(cell, &ds.vocabulary);
            assert_eq!(s.len(), cfg.sentence_len);
            assert!(s.genes[..cfg.head_genes].iter().all(|g| g.starts_with('H')));
            let markers: Vec<&String> = s.genes.iter().filter(|g| g.starts_with('M')).collect();
            assert_eq!(markers.len(), cfg.markers_per_cell + cfg.confusers_per_cell);
            let last_marker = s.genes.iter().rposition(|g| g.starts_with('M')).unwrap();
            assert!(last_marker < cfg.window);
        }
        // Same type, no swaps: identical head.
        let a = build_sentence(&ds.cells[0], &ds.vocabulary);
        let b = build_sentence(&ds.cells[1], &ds.vocabulary);
        assert_eq!(a.genes[..6], b.genes[..6]);
        assert_eq!(marker_corpus(&cfg, 3).unwrap().cells, ds.cells);
    }

    #[test]
    fn modality_groups() {
        let p = complementary_modalities(50, 4, 0.1, 1);
        assert_eq!(p.labels.len(), 200);
        // Classes 2 and 3 coincide in a, 0 and 1 coincide in b.
        let argmax = |v: &Vec<f64>| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        assert_eq!(argmax(&p.a[2]), argmax(&p.a[3]));
        assert_ne!(argmax(&p.a[0]), argmax(&p.a[1]));
        assert_eq!(argmax(&p.b[0]), argmax(&p.b[1]));
        assert_ne!(argmax(&p.b[2]), argmax(&p.b[3]));
    }
}
