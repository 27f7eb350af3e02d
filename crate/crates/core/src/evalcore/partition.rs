use std::collections::HashMap;
use std::hash::Hash;

use super::EvalError;

/// Contingency table between two partitions of the same items.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub table: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

fn encode<T: Hash + Eq>(xs: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let codes = xs
        .iter()
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (codes, ids.len())
}

impl Contingency {
    pub fn new<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<Self, EvalError> {
        if a.len() != b.len() {
            return Err(EvalError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() < 2 {
            return Err(EvalError::TooFew { need: 2, got: a.len() });
        }
        let (ca, ka) = encode(a);
        let (cb, kb) = encode(b);
        let mut table = vec![vec![0u64; kb]; ka];
        for (&i, &j) in ca.iter().zip(&cb) {
            table[i][j] += 1;
        }
        let row_sums = table.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Self { table, row_sums, col_sums, n: a.len() as u64 })
    }
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index by pair counting over the contingency table.
pub fn ari<A: Hash + Eq, B: Hash + Eq>(truth: &[A], clusters: &[B]) -> Result<f64, EvalError> {
    let c = Contingency::new(truth, clusters)?;
    let index: f64 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let sum_a: f64 = c.row_sums.iter().map(|&x| comb2(x)).sum();
    let sum_b: f64 = c.col_sums.iter().map(|&x| comb2(x)).sum();
    let expected = sum_a * sum_b / comb2(c.n);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // Both partitions trivial (one block, or all singletons).
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter().filter(|&&s| s > 0).map(|&s| {
        let p = s as f64 / n;
        -p * p.ln()
    }).sum()
}

fn mutual_info(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.row_sums[i] as f64 * c.col_sums[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// E[MI] under the hypergeometric model of random partitions with fixed
/// marginals.
fn expected_mutual_info(c: &Contingency) -> f64 {
    let n = c.n as usize;
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.row_sums {
        let a = a as usize;
        for &b in &c.col_sums {
            let b = b as usize;
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = ln_fact[a] + ln_fact[b] + ln_fact[n - a] + ln_fact[n - b] - ln_fact[n];
            for nij in lo..=hi {
                let ln_p = fixed
                    - ln_fact[nij]
                    - ln_fact[a - nij]
                    - ln_fact[b - nij]
                    - ln_fact[n + nij - a - b];
                let term = nij as f64 / nf * (nf * nij as f64 / (a as f64 * b as f64)).ln();
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information, arithmetic-mean entropy normalizer.
pub fn ami<A: Hash + Eq, B: Hash + Eq>(truth: &[A], clusters: &[B]) -> Result<f64, EvalError> {
    let c = Contingency::new(truth, clusters)?;
    let (ku, kv) = (c.row_sums.len(), c.col_sums.len());
    let n = c.n as usize;
    if (ku == 1 && kv == 1) || (ku == n && kv == n) {
        return Ok(1.0);
    }
    let mi = mutual_info(&c);
    let emi = expected_mutual_info(&c);
    let nf = c.n as f64;
    let norm = 0.5 * (entropy(&c.row_sums, nf) + entropy(&c.col_sums, nf));
    let denom = norm - emi;
    if denom.abs() < f64::EPSILON {
        return Ok(if (mi - emi).abs() < f64::EPSILON { 1.0 } else { 0.0 });
    }
    Ok((mi - emi) / denom)
}
