//! Mini-batch training with AdamW and cosine learning-rate annealing.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 100, learning_rate: 1e-3, weight_decay: 1e-4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Cosine annealing from `base` at epoch 0 down to 0 at the final epoch.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return base;
    }
    let progress = epoch as f64 / (epochs - 1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(n_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    /// One update. Decay applies only where `decay_mask` is true.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64, decay_mask: &[bool]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if decay_mask[i] {
                params[i] -= lr * weight_decay * params[i];
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// A differentiable empirical risk over indexable rows.
pub trait Objective {
    fn n_rows(&self) -> usize;

    /// Mean loss over `rows`. When `grad` is given, the gradient of that mean
    /// is added into it.
    fn batch_loss(&self, params: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the checkpointed epoch.
    pub params: ParameterSet,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
}

/// Trains `init` on `objective`. After each epoch the parameters are scored
/// with `validation` (or the epoch's training loss when absent) and the
/// lowest-scoring epoch is kept; ties keep the earliest epoch.
pub fn train(
    objective: &dyn Objective,
    init: ParameterSet,
    cfg: &TrainConfig,
    validation: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = objective.n_rows();
    if n == 0 {
        return Err(Error::Validation("cannot train on empty data".into()));
    }
    let mask = init.decay_mask();
    let mut params = init;
    let mut best = params.values.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut opt = AdamW::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let loss = objective.batch_loss(&params.values, batch, Some(&mut grad));
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            opt.step(&mut params.values, &grad, lr, cfg.weight_decay, &mask);
        }
        let train_loss = total / n as f64;
        let val_loss = validation.map(|f| f(&params.values));
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            best.copy_from_slice(&params.values);
        }
        trace.push(EpochRecord { epoch, train_loss, val_loss });
    }
    params.values = best;
    Ok(TrainOutcome { params, best_epoch, trace })
}

/// Dumps `(epoch, train_loss, val_loss)` rows as CSV.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in trace {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), val])?;
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::mlp::MlpSpec;
    use ndarray::{Array2, Axis};

    struct Mse {
        spec: MlpSpec,
        x: Array2<f64>,
        y: Vec<f64>,
    }

    impl Objective for Mse {
        fn n_rows(&self) -> usize {
            self.y.len()
        }

        fn batch_loss(&self, params: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
            let xb = self.x.select(Axis(0), rows);
            let cache = self.spec.forward(params, xb.view()).unwrap();
            let m = rows.len() as f64;
            let resid: Array2<f64> =
                Array2::from_shape_fn((rows.len(), 1), |(i, _)| cache.output()[[i, 0]] - self.y[rows[i]]);
            if let Some(g) = grad {
                let up = resid.mapv(|r| 2.0 * r / m);
                self.spec.backward(params, &cache, up.view(), g);
            }
            resid.iter().map(|r| r * r).sum::<f64>() / m
        }
    }

    fn problem() -> Mse {
        let x = Array2::from_shape_fn((64, 1), |(i, _)| i as f64 / 32.0 - 1.0);
        let y = x.column(0).iter().map(|v| 3.0 * v).collect();
        Mse { spec: MlpSpec::new(1, vec![8], 1), x, y }
    }

    #[test]
    fn schedule_endpoints() {
        for epochs in [2usize, 10, 200, 1000] {
            assert_eq!(cosine_lr(0.01, 0, epochs), 0.01);
            assert!(cosine_lr(0.01, epochs - 1, epochs) <= 1e-3 * 0.01);
        }
        assert_eq!(cosine_lr(0.5, 0, 1), 0.5);
    }

    #[test]
    fn fits_linear_target() {
        let p = problem();
        let init = p.spec.init(&mut ChaCha8Rng::seed_from_u64(3));
        let cfg = TrainConfig { epochs: 200, batch_size: 16, learning_rate: 2e-2, weight_decay: 0.0, seed: 1 };
        let out = train(&p, init, &cfg, None).unwrap();
        let all: Vec<usize> = (0..64).collect();
        let mse = p.batch_loss(&out.params.values, &all, None);
        assert!(mse < 1e-2, "mse {mse}");
        assert_eq!(out.trace.len(), 200);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let p = problem();
        let init = p.spec.init(&mut ChaCha8Rng::seed_from_u64(3));
        let cfg = TrainConfig { epochs: 5, batch_size: 16, learning_rate: 0.0, weight_decay: 0.0, seed: 1 };
        let out = train(&p, init.clone(), &cfg, None).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = problem();
        let cfg = TrainConfig { epochs: 20, batch_size: 10, learning_rate: 1e-2, weight_decay: 1e-4, seed: 9 };
        let a = train(&p, p.spec.init(&mut ChaCha8Rng::seed_from_u64(3)), &cfg, None).unwrap();
        let b = train(&p, p.spec.init(&mut ChaCha8Rng::seed_from_u64(3)), &cfg, None).unwrap();
        assert_eq!(a.params.values, b.params.values);
    }

    #[test]
    fn checkpoint_prefers_earliest_tie() {
        let p = problem();
        let cfg = TrainConfig { epochs: 6, batch_size: 10, learning_rate: 1e-2, weight_decay: 0.0, seed: 0 };
        let constant = |_: &[f64]| 1.0;
        let out = train(&p, p.spec.init(&mut ChaCha8Rng::seed_from_u64(3)), &cfg, Some(&constant)).unwrap();
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn divergence_names_epoch() {
        struct Nan;
        impl Objective for Nan {
            fn n_rows(&self) -> usize {
                3
            }
            fn batch_loss(&self, _: &[f64], _: &[usize], _: Option<&mut [f64]>) -> f64 {
                f64::NAN
            }
        }
        let init = MlpSpec::new(1, vec![], 1).init(&mut ChaCha8Rng::seed_from_u64(0));
        let r = train(&Nan, init, &TrainConfig::default(), None);
        assert!(matches!(r, Err(Error::Divergence { epoch: 0 })));
    }

    #[test]
    fn trace_csv_layout() {
        let mut buf = Vec::new();
        let trace = [
            EpochRecord { epoch: 0, train_loss: 1.5, val_loss: Some(2.0) },
            EpochRecord { epoch: 1, train_loss: 1.0, val_loss: None },
        ];
        write_trace_csv(&mut buf, &trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n0,1.5,2\n1,1,\n");
    }
}
