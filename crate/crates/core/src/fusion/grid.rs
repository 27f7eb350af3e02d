use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::train::{predict_batch, train_mlp, TrainConfig, TrainedModel};
use super::FusionError;
use crate::corpus::{stratified_holdout, CorpusError};
use crate::evalcore::macro_metrics;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lr0: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub gamma: Vec<f64>,
    pub validation_fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lr0: vec![1e-4, 3e-4, 1e-3],
            epochs: vec![10, 20, 40],
            batch_size: vec![32, 128],
            gamma: vec![0.9, 0.95],
            validation_fraction: 0.1,
        }
    }
}

impl GridSpec {
    /// Grid points in lexicographic (lr0, epochs, batch_size, gamma) order.
    pub fn points(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let sorted_f = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let sorted_u = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut out = Vec::new();
        for &lr0 in &sorted_f(&self.lr0) {
            for &epochs in &sorted_u(&self.epochs) {
                for &batch_size in &sorted_u(&self.batch_size) {
                    for &gamma in &sorted_f(&self.gamma) {
                        out.push(TrainConfig { lr0, epochs, batch_size, gamma, ..*base });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointResult {
    pub config: TrainConfig,
    /// `-inf` when training diverged.
    pub val_f1: f64,
    pub val_accuracy: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: TrainConfig,
    pub points: Vec<GridPointResult>,
    /// Winner retrained on the full training set.
    pub model: TrainedModel,
}

fn subset(rows: &[Vec<f64>], keep: &[usize]) -> Vec<Vec<f64>> {
    keep.iter().map(|&i| rows[i].clone()).collect()
}

/// Scores every grid point on a stratified validation split carved from the
/// training data, then retrains the winner on all of it. `base` supplies the
/// optimizer constants, width and seed.
pub fn grid_search<S: AsRef<str> + Sync>(
    grid: &GridSpec,
    inputs: &[&[Vec<f64>]],
    labels: &[S],
    base: &TrainConfig,
    exec: Exec,
) -> Result<GridOutcome, FusionError> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(FusionError::Config("grid has no points".into()));
    }
    let held = stratified_holdout(labels, grid.validation_fraction, base.seed).map_err(|e| match e {
        CorpusError::SingletonLabel(l) => FusionError::EmptyClass(l),
        other => FusionError::Config(other.to_string()),
    })?;
    let fit_idx: Vec<usize> = (0..labels.len()).filter(|&i| !held[i]).collect();
    let val_idx: Vec<usize> = (0..labels.len()).filter(|&i| held[i]).collect();
    let fit_x: Vec<Vec<Vec<f64>>> = inputs.iter().map(|m| subset(m, &fit_idx)).collect();
    let val_x: Vec<Vec<Vec<f64>>> = inputs.iter().map(|m| subset(m, &val_idx)).collect();
    let fit_y: Vec<&str> = fit_idx.iter().map(|&i| labels[i].as_ref()).collect();
    let val_y: Vec<&str> = val_idx.iter().map(|&i| labels[i].as_ref()).collect();
    let fit_refs: Vec<&[Vec<f64>]> = fit_x.iter().map(Vec::as_slice).collect();
    let val_refs: Vec<&[Vec<f64>]> = val_x.iter().map(Vec::as_slice).collect();

    let results: Vec<GridPointResult> = exec.map(&points, |cfg| match train_mlp(&fit_refs, &fit_y, cfg, exec) {
        Ok(t) => {
            let pred = predict_batch(&t.model, &val_refs, exec);
            let pred: Vec<&str> = pred.iter().map(String::as_str).collect();
            let m = macro_metrics(&val_y, &pred).expect("aligned lengths");
            GridPointResult { config: *cfg, val_f1: m.f1, val_accuracy: m.accuracy, failure: None }
        }
        Err(e @ FusionError::NonFiniteLoss { .. }) => GridPointResult {
            config: *cfg,
            val_f1: f64::NEG_INFINITY,
            val_accuracy: f64::NEG_INFINITY,
            failure: Some(e.to_string()),
        },
        Err(e) => GridPointResult { config: *cfg, val_f1: f64::NAN, val_accuracy: f64::NAN, failure: Some(e.to_string()) },
    });
    if let Some(r) = results.iter().find(|r| r.val_f1.is_nan()) {
        return Err(FusionError::Config(r.failure.clone().unwrap_or_default()));
    }
    // Points are already in lexicographic order, so the first maximum wins ties.
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        let b = &results[best];
        let ord = r.val_f1.total_cmp(&b.val_f1).then(r.val_accuracy.total_cmp(&b.val_accuracy));
        if ord == Ordering::Greater {
            best = i;
        }
    }
    if results[best].failure.is_some() {
        return Err(FusionError::Config("every grid point diverged".into()));
    }
    let winner = results[best].config;
    log::info!("grid winner lr0={} epochs={} batch={} gamma={}", winner.lr0, winner.epochs, winner.batch_size, winner.gamma);
    let model = train_mlp(inputs, labels, &winner, exec)?;
    Ok(GridOutcome { best: winner, points: results, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed_: u64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = seed::rng(seed_, "blobs", &[]);
        let noise = Normal::new(0.0, 0.7).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            x.push((0..5).map(|d| if d == c { 2.0 } else { 0.0 } + noise.sample(&mut rng)).collect());
            y.push(format!("t{c}"));
        }
        (x, y)
    }

    fn base() -> TrainConfig {
        TrainConfig { hidden: 16, seed: 4, ..TrainConfig::default() }
    }

    #[test]
    fn point_enumeration_order() {
        let g = GridSpec { lr0: vec![1e-3, 1e-4], epochs: vec![20, 10], batch_size: vec![8], gamma: vec![0.9], ..GridSpec::default() };
        let p = g.points(&base());
        let key: Vec<(f64, usize)> = p.iter().map(|c| (c.lr0, c.epochs)).collect();
        assert_eq!(key, vec![(1e-4, 10), (1e-4, 20), (1e-3, 10), (1e-3, 20)]);
        assert_eq!(GridSpec::default().points(&base()).len(), 36);
    }

    #[test]
    fn single_point_grid() {
        let (x, y) = blobs(60, 1);
        let g = GridSpec { lr0: vec![1e-2], epochs: vec![5], batch_size: vec![16], gamma: vec![1.0], ..GridSpec::default() };
        let out = grid_search(&g, &[&x], &y, &base(), Exec::default()).unwrap();
        assert_eq!((out.best.lr0, out.best.epochs, out.best.batch_size, out.best.gamma), (1e-2, 5, 16, 1.0));
        assert_eq!(out.points.len(), 1);
    }

    #[test]
    fn diverging_lr_loses() {
        let (x, y) = blobs(90, 2);
        let g = GridSpec { lr0: vec![1e-3, 10.0], epochs: vec![30], batch_size: vec![16], gamma: vec![1.0], ..GridSpec::default() };
        let out = grid_search(&g, &[&x], &y, &base(), Exec::default()).unwrap();
        assert_eq!(out.best.lr0, 1e-3);
        let again = grid_search(&g, &[&x], &y, &base(), Exec::Sequential).unwrap();
        assert_eq!(again.best, out.best);
        assert_eq!(again.model.model.checksum(), out.model.model.checksum());
    }

    #[test]
    fn singleton_class_cannot_be_split() {
        let (mut x, mut y) = blobs(30, 3);
        x.push(vec![0.0; 5]);
        y.push("lonely".into());
        let err = grid_search(&GridSpec::default(), &[&x], &y, &base(), Exec::Sequential).unwrap_err();
        assert_eq!(err, FusionError::EmptyClass("lonely".into()));
    }
}
