use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Rows are true labels, columns predictions; labels sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new<S: AsRef<str>>(truth: &[S], pred: &[S]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
        }
        let labels: Vec<String> = truth
            .iter()
            .chain(pred)
            .map(|s| s.as_ref())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect();
        let pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
        for (t, p) in truth.iter().zip(pred) {
            counts[pos[t.as_ref()]][pos[p.as_ref()]] += 1;
        }
        Ok(Self { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        let l = self.labels.len();
        (0..l)
            .map(|i| {
                let tp = self.counts[i][i] as f64;
                let support: u64 = self.counts[i].iter().sum();
                let predicted: u64 = (0..l).map(|r| self.counts[r][i]).sum();
                let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
                ClassMetrics { label: self.labels[i].clone(), precision, recall, f1, support }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Accuracy plus unweighted class means over labels present in `truth`.
pub fn macro_metrics<S: AsRef<str>>(truth: &[S], pred: &[S]) -> Result<MacroMetrics, EvalError> {
    let cm = ConfusionMatrix::new(truth, pred)?;
    let per_class = cm.per_class();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let avg = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64
        }
    };
    Ok(MacroMetrics {
        accuracy: cm.accuracy(),
        precision: avg(|c| c.precision),
        recall: avg(|c| c.recall),
        f1: avg(|c| c.f1),
        per_class,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass sample standard deviation (n − 1 denominator).
pub fn sample_std(values: &[f64]) -> Result<f64, EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: values.len() });
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

/// One evaluation run. Clustering scores are absent for classification-only runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ami: Option<f64>,
}

impl From<&MacroMetrics> for MetricsReport {
    fn from(m: &MacroMetrics) -> Self {
        Self {
            accuracy: m.accuracy,
            macro_precision: m.precision,
            macro_recall: m.recall,
            macro_f1: m.f1,
            ari: None,
            ami: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// `None` for a single run.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        Self { mean: mean(values), std: sample_std(values).ok() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => f.write_str(&format_mean_std(self.mean, s)),
            None => write!(f, "{:.3}", self.mean),
        }
    }
}

/// Mean to three decimals, std to two significant digits (at least three decimals).
pub fn format_mean_std(mean: f64, std: f64) -> String {
    if std == 0.0 || !std.is_finite() {
        return format!("{mean:.3} ({:.3})", std);
    }
    let decimals = (1 - std.abs().log10().floor() as i32).max(3) as usize;
    format!("{mean:.3} ({std:.decimals$})")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedMetrics {
    pub runs: Vec<MetricsReport>,
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<MeanStd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ami: Option<MeanStd>,
}

pub fn aggregate_runs(runs: &[MetricsReport]) -> Result<AggregatedMetrics, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    let opt = |f: fn(&MetricsReport) -> Option<f64>| {
        let v: Option<Vec<f64>> = runs.iter().map(f).collect();
        v.map(|v| MeanStd::of(&v))
    };
    Ok(AggregatedMetrics {
        runs: runs.to_vec(),
        accuracy: col(|r| r.accuracy),
        macro_precision: col(|r| r.macro_precision),
        macro_recall: col(|r| r.macro_recall),
        macro_f1: col(|r| r.macro_f1),
        ari: opt(|r| r.ari),
        ami: opt(|r| r.ami),
    })
}
