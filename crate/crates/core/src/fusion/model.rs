use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FusionError;

pub const CHECKPOINT_FORMAT: &str = "cellsense-mlp/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

/// Fully connected layer; `weights` is `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// He-uniform weights in ±sqrt(6 / fan_in), zero bias.
    pub fn he_uniform(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self { in_dim, out_dim, activation, weights, bias: vec![0.0; out_dim] }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    /// Pre-activation `W x + b` written into `out`.
    pub(crate) fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.bias[j] + self.row(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn validate(&self, name: &str) -> Result<(), FusionError> {
        if self.weights.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(FusionError::Shape(format!("layer {name}: inconsistent parameter lengths")));
        }
        if self.weights.iter().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(FusionError::Shape(format!("layer {name}: non-finite parameter")));
        }
        Ok(())
    }
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// One relu branch per input modality, concatenated into a softmax layer.
/// A unimodal head is the single-branch case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub branches: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub labels: Vec<String>,
}

impl MlpModel {
    pub fn new(input_dims: &[usize], hidden: usize, labels: Vec<String>, rng: &mut impl Rng) -> Result<Self, FusionError> {
        if labels.len() < 2 {
            return Err(FusionError::DegenerateLabels(labels.len()));
        }
        if input_dims.is_empty() || hidden == 0 || input_dims.contains(&0) {
            return Err(FusionError::Config("input dims and hidden width must be positive".into()));
        }
        let branches: Vec<DenseLayer> =
            input_dims.iter().map(|&d| DenseLayer::he_uniform(d, hidden, Activation::Relu, rng)).collect();
        let output = DenseLayer::he_uniform(hidden * input_dims.len(), labels.len(), Activation::Softmax, rng);
        Ok(Self { branches, output, labels })
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.in_dim).collect()
    }

    pub fn hidden_width(&self) -> usize {
        self.branches.iter().map(|b| b.out_dim).sum()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    /// Post-relu concatenated hidden activations.
    pub(crate) fn hidden(&self, x: &[&[f64]]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden_width()];
        let mut off = 0;
        for (b, xi) in self.branches.iter().zip(x) {
            let seg = &mut h[off..off + b.out_dim];
            b.affine(xi, seg);
            for v in seg.iter_mut() {
                *v = v.max(0.0);
            }
            off += b.out_dim;
        }
        h
    }

    pub(crate) fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n_classes()];
        self.output.affine(h, &mut z);
        z
    }

    /// Class probabilities for one example (one slice per modality).
    pub fn predict_proba(&self, x: &[&[f64]]) -> Vec<f64> {
        let mut z = self.logits_from_hidden(&self.hidden(x));
        softmax(&mut z);
        z
    }

    pub fn predict_index(&self, x: &[&[f64]]) -> usize {
        let z = self.logits_from_hidden(&self.hidden(x));
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        best
    }

    pub fn predict(&self, x: &[&[f64]]) -> &str {
        &self.labels[self.predict_index(x)]
    }

    /// Parameter blocks in checkpoint order: each branch (weights, bias), then output.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.branches.len() + 2);
        for l in self.branches.iter().chain([&self.output]) {
            out.push(&l.weights[..]);
            out.push(&l.bias[..]);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.branches.len() + 2);
        for l in self.branches.iter_mut().chain([&mut self.output]) {
            out.push(&mut l.weights[..]);
            out.push(&mut l.bias[..]);
        }
        out
    }

    /// Weight blocks decay, bias blocks do not.
    pub fn decay_mask(&self) -> Vec<bool> {
        (0..2 * (self.branches.len() + 1)).map(|i| i % 2 == 0).collect()
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for b in self.blocks() {
            for x in b {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.labels.len() < 2 {
            return Err(FusionError::DegenerateLabels(self.labels.len()));
        }
        for (i, b) in self.branches.iter().enumerate() {
            b.validate(&format!("branch {i}"))?;
        }
        self.output.validate("output")?;
        if self.output.in_dim != self.hidden_width() || self.output.out_dim != self.labels.len() {
            return Err(FusionError::Shape("output layer does not match branches and labels".into()));
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), FusionError> {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), model: self.clone() };
        serde_json::to_writer(w, &ck).map_err(|e| FusionError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(r: R) -> Result<Self, FusionError> {
        let ck: Checkpoint = serde_json::from_reader(r).map_err(|e| FusionError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(FusionError::Checkpoint(format!("unsupported format {:?}", ck.format)));
        }
        ck.model.validate()?;
        Ok(ck.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(flatten)]
    model: MlpModel,
}
