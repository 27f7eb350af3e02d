use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{softmax, MlpModel};
use super::optim::{adamw_step, lr_schedule, AdamW, OptimizerState};
use super::FusionError;
use crate::par::Exec;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Width of each modality branch.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let o = AdamW::default();
        Self {
            lr0: 1e-3,
            epochs: 20,
            batch_size: 128,
            gamma: 0.95,
            weight_decay: o.weight_decay,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            seed: 0,
            hidden: 4096,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamW {
        AdamW { beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon, weight_decay: self.weight_decay }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::Config(m.into()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, batch_size and hidden must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("epsilon must be positive and weight_decay non-negative");
        }
        Ok(())
    }
}

/// Single-hidden-layer baseline classifier settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub max_batch: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden: 100, lr: 1e-3, max_epochs: 200, max_batch: 200, patience: 10, min_delta: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: MlpModel,
    pub trace: Vec<EpochTrace>,
}

pub fn write_trace<W: Write>(w: W, trace: &[EpochTrace]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for t in trace {
        out.serialize(t)?;
    }
    out.flush()?;
    Ok(())
}

struct Schedule {
    lr0: f64,
    gamma: f64,
    epochs: usize,
    batch_size: usize,
    opt: AdamW,
    seed: u64,
    early_stop: Option<(usize, f64)>,
}

/// Checks that modalities align and yields (sorted labels, targets).
fn prepare<S: AsRef<str>>(inputs: &[&[Vec<f64>]], labels: &[S]) -> Result<(Vec<String>, Vec<usize>), FusionError> {
    if inputs.is_empty() {
        return Err(FusionError::Config("no input modalities".into()));
    }
    for m in inputs {
        if m.len() != labels.len() {
            return Err(FusionError::LengthMismatch(m.len(), labels.len()));
        }
        let dim = m.first().map_or(0, Vec::len);
        if dim == 0 || m.iter().any(|r| r.len() != dim) {
            return Err(FusionError::Shape("rows within a modality must share a positive dimension".into()));
        }
        if m.iter().flatten().any(|x| !x.is_finite()) {
            return Err(FusionError::Shape("non-finite input value".into()));
        }
    }
    let order: Vec<String> = labels.iter().map(|l| l.as_ref()).collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    if order.len() < 2 {
        return Err(FusionError::DegenerateLabels(order.len()));
    }
    let targets = labels.iter().map(|l| order.binary_search_by(|o| o.as_str().cmp(l.as_ref())).expect("label present")).collect();
    Ok((order, targets))
}

fn example<'a>(inputs: &[&'a [Vec<f64>]], i: usize) -> Vec<&'a [f64]> {
    inputs.iter().map(|m| m[i].as_slice()).collect()
}

struct Forward {
    h: Vec<f64>,
    dz: Vec<f64>,
    loss: f64,
}

/// Mean cross-entropy over `idx` and its gradient per parameter block.
///
/// Every reduction runs over examples in `idx` order, so the result is
/// bitwise independent of the execution strategy.
pub fn batch_loss_and_grad(
    model: &MlpModel,
    inputs: &[&[Vec<f64>]],
    targets: &[usize],
    idx: &[usize],
    exec: Exec,
) -> (f64, Vec<Vec<f64>>) {
    let scale = 1.0 / idx.len() as f64;
    let fwd: Vec<Forward> = exec.map(idx, |&i| {
        let h = model.hidden(&example(inputs, i));
        let mut z = model.logits_from_hidden(&h);
        let y = targets[i];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[y];
        softmax(&mut z);
        z[y] -= 1.0;
        for v in &mut z {
            *v *= scale;
        }
        Forward { h, dz: z, loss }
    });
    let loss = fwd.iter().map(|f| f.loss).sum::<f64>() * scale;

    let out = &model.output;
    let width = out.in_dim;
    let dh: Vec<Vec<f64>> = exec.map(&fwd, |f| {
        let mut d = vec![0.0; width];
        for (c, &g) in f.dz.iter().enumerate() {
            for (dk, w) in d.iter_mut().zip(out.row(c)) {
                *dk += w * g;
            }
        }
        for (dk, &hk) in d.iter_mut().zip(&f.h) {
            if hk <= 0.0 {
                *dk = 0.0;
            }
        }
        d
    });

    let mut grads = Vec::with_capacity(2 * model.branches.len() + 2);
    let mut off = 0;
    for (m, b) in model.branches.iter().enumerate() {
        let rows: Vec<(Vec<f64>, f64)> = exec.map_range(b.out_dim, |j| {
            let mut gw = vec![0.0; b.in_dim];
            let mut gb = 0.0;
            for (d, &i) in dh.iter().zip(idx) {
                let g = d[off + j];
                if g != 0.0 {
                    for (w, x) in gw.iter_mut().zip(&inputs[m][i]) {
                        *w += g * x;
                    }
                    gb += g;
                }
            }
            (gw, gb)
        });
        let (gw, gb) = flatten(rows);
        grads.push(gw);
        grads.push(gb);
        off += b.out_dim;
    }
    let rows: Vec<(Vec<f64>, f64)> = exec.map_range(out.out_dim, |c| {
        let mut gw = vec![0.0; width];
        let mut gb = 0.0;
        for f in &fwd {
            let g = f.dz[c];
            for (w, h) in gw.iter_mut().zip(&f.h) {
                *w += g * h;
            }
            gb += g;
        }
        (gw, gb)
    });
    let (gw, gb) = flatten(rows);
    grads.push(gw);
    grads.push(gb);
    (loss, grads)
}

fn flatten(rows: Vec<(Vec<f64>, f64)>) -> (Vec<f64>, Vec<f64>) {
    let mut w = Vec::with_capacity(rows.iter().map(|r| r.0.len()).sum());
    let mut b = Vec::with_capacity(rows.len());
    for (r, g) in rows {
        w.extend(r);
        b.push(g);
    }
    (w, b)
}

fn fit(
    model: &mut MlpModel,
    inputs: &[&[Vec<f64>]],
    targets: &[usize],
    s: &Schedule,
    exec: Exec,
) -> Result<Vec<EpochTrace>, FusionError> {
    let n = targets.len();
    let mask = model.decay_mask();
    let sizes: Vec<usize> = model.blocks().iter().map(|b| b.len()).collect();
    let mut state = OptimizerState::zeros(&sizes);
    let mut trace = Vec::with_capacity(s.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..s.epochs {
        let lr = lr_schedule(s.lr0, s.gamma, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(s.seed, "epoch", &[epoch as u64]));
        let mut total = 0.0;
        for (b, batch) in order.chunks(s.batch_size).enumerate() {
            let (loss, grads) = batch_loss_and_grad(model, inputs, targets, batch, exec);
            if !loss.is_finite() {
                log::error!("training diverged: epoch {epoch}, batch {b}, lr {lr:e}, loss {loss}");
                return Err(FusionError::NonFiniteLoss { epoch, batch: b, lr });
            }
            total += loss * batch.len() as f64;
            adamw_step(&mut model.blocks_mut(), &grads, &mask, &mut state, &s.opt, lr).map_err(|e| match e {
                FusionError::NonFiniteGradient(_) => FusionError::NonFiniteLoss { epoch, batch: b, lr },
                other => other,
            })?;
        }
        let loss = total / n as f64;
        trace.push(EpochTrace { epoch, lr, loss });
        if let Some((patience, min_delta)) = s.early_stop {
            if loss > best - min_delta {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(loss);
            if stale >= patience {
                log::debug!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok(trace)
}

/// Trains one relu branch per modality (`inputs[m][i]` is modality `m` of
/// example `i`) feeding a shared softmax layer.
pub fn train_mlp<S: AsRef<str>>(
    inputs: &[&[Vec<f64>]],
    labels: &[S],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainedModel, FusionError> {
    cfg.validate()?;
    let (order, targets) = prepare(inputs, labels)?;
    let dims: Vec<usize> = inputs.iter().map(|m| m[0].len()).collect();
    let mut model = MlpModel::new(&dims, cfg.hidden, order, &mut seed::rng(cfg.seed, "init", &[]))?;
    let s = Schedule {
        lr0: cfg.lr0,
        gamma: cfg.gamma,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        opt: cfg.optimizer(),
        seed: cfg.seed,
        early_stop: None,
    };
    let trace = fit(&mut model, inputs, &targets, &s, exec)?;
    Ok(TrainedModel { model, trace })
}

/// Two-branch fusion network over precomputed embeddings.
pub fn train_fusion<S: AsRef<str>>(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    labels: &[S],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainedModel, FusionError> {
    train_mlp(&[a, b], labels, cfg, exec)
}

/// Baseline head: one hidden relu layer, Adam without decay, early stopping
/// on the training loss.
pub fn train_head<S: AsRef<str>>(
    inputs: &[Vec<f64>],
    labels: &[S],
    cfg: &HeadConfig,
    exec: Exec,
) -> Result<TrainedModel, FusionError> {
    if cfg.hidden == 0 || cfg.max_epochs == 0 || cfg.max_batch == 0 || !(cfg.lr > 0.0) {
        return Err(FusionError::Config("head hidden, epochs, batch and lr must be positive".into()));
    }
    let mods = [inputs];
    let (order, targets) = prepare(&mods, labels)?;
    let mut model = MlpModel::new(&[inputs[0].len()], cfg.hidden, order, &mut seed::rng(cfg.seed, "init", &[]))?;
    let s = Schedule {
        lr0: cfg.lr,
        gamma: 1.0,
        epochs: cfg.max_epochs,
        batch_size: cfg.max_batch.min(inputs.len()),
        opt: AdamW { weight_decay: 0.0, ..AdamW::default() },
        seed: cfg.seed,
        early_stop: Some((cfg.patience.max(1), cfg.min_delta)),
    };
    let trace = fit(&mut model, &mods, &targets, &s, exec)?;
    Ok(TrainedModel { model, trace })
}

pub fn predict_batch(model: &MlpModel, inputs: &[&[Vec<f64>]], exec: Exec) -> Vec<String> {
    let n = inputs.first().map_or(0, |m| m.len());
    exec.map_range(n, |i| model.predict(&example(inputs, i)).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn total_loss(model: &MlpModel, inputs: &[&[Vec<f64>]], targets: &[usize]) -> f64 {
        let idx: Vec<usize> = (0..targets.len()).collect();
        batch_loss_and_grad(model, inputs, targets, &idx, Exec::Sequential).0
    }

    fn random_problem(trial: u64) -> (MlpModel, Vec<Vec<Vec<f64>>>, Vec<usize>) {
        let mut rng = seed::rng(trial, "gradcheck", &[]);
        let n_mod = rng.random_range(1..=2);
        let dims: Vec<usize> = (0..n_mod).map(|_| rng.random_range(1..=8)).collect();
        let classes = rng.random_range(2..=4);
        let hidden = rng.random_range(1..=8);
        let labels = (0..classes).map(|c| format!("c{c}")).collect();
        let mut model = MlpModel::new(&dims, hidden, labels, &mut rng).unwrap();
        for b in model.blocks_mut() {
            for x in b.iter_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
        let n = rng.random_range(2..=6);
        let inputs = dims.iter().map(|&d| (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()).collect();
        let targets = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (model, inputs, targets)
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-4;
        for trial in 0..20 {
            let (model, inputs, targets) = random_problem(trial);
            let refs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
            let idx: Vec<usize> = (0..targets.len()).collect();
            let (_, grads) = batch_loss_and_grad(&model, &refs, &targets, &idx, Exec::Sequential);
            for (bi, g) in grads.iter().enumerate() {
                for j in 0..g.len() {
                    let mut plus = model.clone();
                    plus.blocks_mut()[bi][j] += h;
                    let mut minus = model.clone();
                    minus.blocks_mut()[bi][j] -= h;
                    let num = (total_loss(&plus, &refs, &targets) - total_loss(&minus, &refs, &targets)) / (2.0 * h);
                    let denom = g[j].abs().max(num.abs());
                    let rel = if denom < 1e-7 { (g[j] - num).abs() } else { (g[j] - num).abs() / denom };
                    assert!(rel < 1e-5, "trial {trial} block {bi}[{j}]: analytic {} numeric {num}", g[j]);
                }
            }
        }
    }

    #[test]
    fn strategies_give_identical_gradients() {
        let (model, inputs, targets) = random_problem(99);
        let refs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
        let idx: Vec<usize> = (0..targets.len()).rev().collect();
        let a = batch_loss_and_grad(&model, &refs, &targets, &idx, Exec::Sequential);
        let b = batch_loss_and_grad(&model, &refs, &targets, &idx, Exec::Parallel);
        assert_eq!(a, b);
    }

    /// Two classes split on the sign of the first coordinate of modality A;
    /// modality B is noise.
    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>) {
        let mut rng = seed::rng(seed, "separable", &[]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            let mut row: Vec<f64> = (0..6).map(|_| noise.sample(&mut rng)).collect();
            row[0] = sign * (1.0 + rng.random::<f64>());
            a.push(row);
            b.push((0..4).map(|_| noise.sample(&mut rng)).collect());
            y.push(format!("class{c}"));
        }
        (a, b, y)
    }

    fn accuracy(pred: &[String], y: &[String]) -> f64 {
        pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64
    }

    #[test]
    fn fusion_fits_separable_data() {
        let (a, b, y) = separable(200, 1);
        let cfg = TrainConfig { lr0: 1e-2, epochs: 40, batch_size: 32, gamma: 0.95, hidden: 32, ..TrainConfig::default() };
        let t = train_fusion(&a, &b, &y, &cfg, Exec::default()).unwrap();
        assert_eq!(t.trace.len(), 40);
        assert!(t.trace.last().unwrap().loss < t.trace[0].loss);
        let acc = accuracy(&predict_batch(&t.model, &[&a, &b], Exec::default()), &y);
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn training_is_reproducible_across_strategies() {
        let (a, b, y) = separable(60, 2);
        let cfg = TrainConfig { epochs: 3, batch_size: 16, hidden: 8, seed: 5, ..TrainConfig::default() };
        let s = train_fusion(&a, &b, &y, &cfg, Exec::Sequential).unwrap();
        let p = train_fusion(&a, &b, &y, &cfg, Exec::Parallel).unwrap();
        let again = train_fusion(&a, &b, &y, &cfg, Exec::Sequential).unwrap();
        assert_eq!(s.model.checksum(), p.model.checksum());
        assert_eq!(s.model.checksum(), again.model.checksum());
        let other = train_fusion(&a, &b, &y, &TrainConfig { seed: 6, ..cfg }, Exec::Sequential).unwrap();
        assert_ne!(s.model.checksum(), other.model.checksum());
    }

    #[test]
    fn degenerate_and_mismatched_inputs() {
        let (a, b, _) = separable(10, 3);
        let one = vec!["x"; 10];
        let cfg = TrainConfig { hidden: 4, epochs: 1, ..TrainConfig::default() };
        assert_eq!(train_fusion(&a, &b, &one, &cfg, Exec::Sequential).unwrap_err(), FusionError::DegenerateLabels(1));
        let short = vec!["x", "y"];
        assert_eq!(train_fusion(&a, &b, &short, &cfg, Exec::Sequential).unwrap_err(), FusionError::LengthMismatch(10, 2));
        let bad = TrainConfig { gamma: 1.5, ..cfg };
        assert!(matches!(train_fusion(&a, &b, &one, &bad, Exec::Sequential), Err(FusionError::Config(_))));
    }

    #[test]
    fn huge_lr_aborts_with_diagnostics() {
        let (a, b, y) = separable(40, 4);
        let cfg = TrainConfig { lr0: 1e300, hidden: 4, epochs: 5, batch_size: 8, ..TrainConfig::default() };
        let err = train_fusion(&a, &b, &y, &cfg, Exec::Sequential).unwrap_err();
        assert!(matches!(err, FusionError::NonFiniteLoss { .. }), "{err:?}");
    }

    #[test]
    fn head_separates_gaussians() {
        let mut rng = seed::rng(7, "gauss", &[]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut draw = |n: usize| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                let c = i % 2;
                let shift = if c == 0 { -1.5 } else { 1.5 };
                xs.push((0..16).map(|_| shift + noise.sample(&mut rng)).collect::<Vec<f64>>());
                ys.push(if c == 0 { "neg".to_string() } else { "pos".to_string() });
            }
            (xs, ys)
        };
        let (xtr, ytr) = draw(200);
        let (xte, yte) = draw(200);
        let cfg = HeadConfig { seed: 3, ..HeadConfig::default() };
        let t = train_head(&xtr, &ytr, &cfg, Exec::default()).unwrap();
        assert!(t.trace.len() <= 200);
        let acc = accuracy(&predict_batch(&t.model, &[&xte], Exec::default()), &yte);
        assert!(acc >= 0.95, "test accuracy {acc}");
        let again = train_head(&xtr, &ytr, &cfg, Exec::default()).unwrap();
        assert_eq!(again.model.checksum(), t.model.checksum());
    }

    #[test]
    fn head_memorizes_two_points() {
        let x = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, -0.5]];
        let y = ["a", "b"];
        let t = train_head(&x, &y, &HeadConfig::default(), Exec::Sequential).unwrap();
        let pred = predict_batch(&t.model, &[&x], Exec::Sequential);
        assert_eq!(pred, vec!["a", "b"]);
    }

    #[test]
    fn trace_csv() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[EpochTrace { epoch: 0, lr: 0.001, loss: 0.5 }, EpochTrace { epoch: 1, lr: 0.0009, loss: 0.25 }])
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,lr,loss\n0,0.001,0.5\n1,0.0009,0.25\n");
    }
}
