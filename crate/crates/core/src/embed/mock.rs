use super::EmbeddingVector;
use crate::corpus::CellSentence;
use crate::seed::{fnv1a64_extend, FNV_OFFSET};

fn token_hash(token: &str, seed: u64) -> u64 {
    let h = fnv1a64_extend(FNV_OFFSET, token.as_bytes());
    fnv1a64_extend(h, &seed.to_le_bytes())
}

/// Rank-weighted hashed bag of words over `tokens`.
///
/// The token at rank `r` adds `±1 / log2(r + 2)` to coordinate
/// `fnv1a64(token ‖ seed_le) mod dim`; the sign is the hash's top bit. The
/// sum is L2-normalized. An empty token list gives the zero vector.
///
/// # Panics
/// If `dim < 8`.
pub fn mock_embed_tokens<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 8, "mock embedding dimension must be at least 8");
    let mut v = vec![0.0f64; dim];
    for (rank, tok) in tokens.iter().enumerate() {
        let h = token_hash(tok.as_ref(), seed);
        let idx = (h % dim as u64) as usize;
        let w = 1.0 / ((rank + 2) as f64).log2();
        if h >> 63 == 1 {
            v[idx] -= w;
        } else {
            v[idx] += w;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    EmbeddingVector::new(v).expect("finite by construction")
}

pub fn mock_embed(sentence: &CellSentence, dim: usize, seed: u64) -> EmbeddingVector {
    mock_embed_tokens(&sentence.genes, dim, seed)
}

/// Splits free text on whitespace and hyphens, the tokenization the mock
/// applies to bare strings.
pub fn mock_tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| c.is_whitespace() || c == '-').filter(|t| !t.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine;

    fn s(tokens: &[&str]) -> CellSentence {
        CellSentence::identity("c", tokens.iter().map(|t| t.to_string()).collect())
    }

    #[test]
    fn identical_inputs_are_bitwise_equal() {
        let a = mock_embed(&s(&["GCG", "TTR", "INS"]), 64, 3);
        let b = mock_embed(&s(&["GCG", "TTR", "INS"]), 64, 3);
        assert_eq!(a, b);
        assert_eq!(cosine(&a, &b).unwrap(), 1.0);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_matters() {
        let a = mock_embed(&s(&["GCG", "TTR", "INS", "SST"]), 256, 1);
        let b = mock_embed(&s(&["SST", "INS", "TTR", "GCG"]), 256, 1);
        assert!(cosine(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn empty_sentence_is_zero() {
        assert!(mock_embed(&s(&[]), 16, 0).is_zero());
    }

    #[test]
    fn seed_changes_layout() {
        assert_ne!(mock_embed(&s(&["GCG"]), 64, 1), mock_embed(&s(&["GCG"]), 64, 2));
    }

    #[test]
    fn frozen_coordinates() {
        // fnv1a64("GCG" ‖ 0u64 LE) computed independently of this module.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in b"GCG".iter().chain(&[0u8; 8]) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        let v = mock_embed(&s(&["GCG"]), 32, 0);
        let idx = (h % 32) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        assert_eq!(v.as_slice()[idx], sign);
    }

    #[test]
    #[should_panic]
    fn tiny_dim_panics() {
        mock_embed(&s(&["A"]), 4, 0);
    }

    #[test]
    fn tokenizer_splits_hyphens() {
        assert_eq!(mock_tokenize(" ALPHA-m1  x"), vec!["ALPHA", "m1", "x"]);
    }
}
