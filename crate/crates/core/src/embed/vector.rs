use serde::{Deserialize, Serialize};

use super::EmbedError;

/// A finite real vector. Length is the dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimMismatch { expected: 1, got: 0 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// dot(u, v) / (|u| |v|), clamped to [-1, 1].
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimMismatch { expected: u.dim(), got: v.dim() });
    }
    let (a, b) = (u.as_slice(), v.as_slice());
    let (nu2, nv2) = (dot(a, a), dot(b, b));
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    // sqrt of the product keeps cosine(u, u) exactly 1.
    Ok((dot(a, b) / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[0.3, -2.0, 5.0]), &v(&[0.3, -2.0, 5.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // Closed form 1/sqrt(2).
        let c = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(EmbedError::ZeroVector)));
        assert!(matches!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])), Err(EmbedError::DimMismatch { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbedError::NonFinite(1))));
        assert!(matches!(EmbeddingVector::new(vec![f64::INFINITY]), Err(EmbedError::NonFinite(0))));
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }
}
