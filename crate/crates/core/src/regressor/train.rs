//! Mini-batch training with adaptive moment estimates (Adam).
//!
//! The loop is shared by the pairwise distance regressor and the direct
//! position regressor; each supplies an [`Objective`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Examples drawn (without replacement) per epoch; `None` sweeps all of them.
    pub examples_per_epoch: Option<usize>,
    /// Learning rate at the last epoch as a fraction of the initial one
    /// (cosine schedule). 1.0 keeps it constant.
    pub final_lr_fraction: f64,
    /// Floor applied to gains before conversion to dB.
    pub db_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            examples_per_epoch: None,
            final_lr_fraction: 1.0,
            db_floor: -150.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("moment coefficients must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be > 0"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(invalid("final_lr_fraction must lie in (0, 1]"));
        }
        if self.examples_per_epoch == Some(0) {
            return Err(invalid("examples_per_epoch must be >= 1"));
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction >= 1.0 {
            return self.learning_rate;
        }
        let progress = epoch as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

/// Adam state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1, beta2, epsilon }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// A differentiable sum-of-squared-errors training objective.
pub trait Objective {
    type Scratch;

    fn num_examples(&self) -> usize;

    fn num_params(&self) -> usize;

    fn scratch(&self) -> Self::Scratch;

    /// Adds `scale * d(err^2)/d(params)` for example `idx` to `grad`; returns `err^2`.
    fn accumulate(&self, params: &[f64], idx: usize, scale: f64, scratch: &mut Self::Scratch, grad: &mut [f64]) -> f64;
}

/// Mean loss over `indices` and its gradient.
pub fn batch_gradient<O: Objective>(objective: &O, params: &[f64], indices: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; objective.num_params()];
    let mut scratch = objective.scratch();
    let loss = batch_gradient_into(objective, params, indices, &mut scratch, &mut grad);
    (loss, grad)
}

fn batch_gradient_into<O: Objective>(
    objective: &O,
    params: &[f64],
    indices: &[usize],
    scratch: &mut O::Scratch,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / indices.len() as f64;
    let mut total = 0.0;
    for &i in indices {
        total += objective.accumulate(params, i, scale, scratch, grad);
    }
    total * scale
}

/// Runs `config.epochs` epochs of Adam on `params` in place and returns the
/// mean training loss of each epoch.
pub fn train_objective<O: Objective>(objective: &O, params: &mut [f64], config: &TrainConfig) -> Result<Vec<f64>> {
    train_objective_with(objective, params, config, |_, _| {})
}

/// As [`train_objective`], calling `on_epoch(epoch, loss)` after every epoch.
pub fn train_objective_with<O: Objective, F: FnMut(usize, f64)>(
    objective: &O,
    params: &mut [f64],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = objective.num_examples();
    if n == 0 {
        return Err(invalid("training set is empty"));
    }
    if params.len() != objective.num_params() {
        return Err(invalid("parameter vector does not match the network"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(params.len(), config.beta1, config.beta2, config.epsilon);
    let mut grad = vec![0.0; params.len()];
    let mut scratch = objective.scratch();
    let mut order: Vec<usize> = (0..n).collect();
    let per_epoch = config.examples_per_epoch.map_or(n, |k| k.min(n));
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        let mut sum = 0.0;
        for batch in order[..per_epoch].chunks(config.batch_size) {
            let loss = batch_gradient_into(objective, params, batch, &mut scratch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            adam.step(params, &grad, lr);
        }
        let epoch_loss = sum / per_epoch as f64;
        if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, loss: epoch_loss });
        }
        on_epoch(epoch, epoch_loss);
        trace.push(epoch_loss);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Least squares on y = 3x - 1.
    struct Line(Vec<(f64, f64)>);

    impl Objective for Line {
        type Scratch = ();
        fn num_examples(&self) -> usize {
            self.0.len()
        }
        fn num_params(&self) -> usize {
            2
        }
        fn scratch(&self) {}
        fn accumulate(&self, p: &[f64], idx: usize, scale: f64, _: &mut (), grad: &mut [f64]) -> f64 {
            let (x, y) = self.0[idx];
            let e = p[0] * x + p[1] - y;
            grad[0] += scale * 2.0 * e * x;
            grad[1] += scale * 2.0 * e;
            e * e
        }
    }

    fn line() -> Line {
        Line((0..50).map(|i| i as f64 / 10.0).map(|x| (x, 3.0 * x - 1.0)).collect())
    }

    #[test]
    fn adam_fits_a_line() {
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 10, epochs: 400, ..Default::default() };
        let mut p = vec![0.0, 0.0];
        let trace = train_objective(&line(), &mut p, &cfg).unwrap();
        assert_eq!(trace.len(), 400);
        assert!((p[0] - 3.0).abs() < 1e-2 && (p[1] + 1.0).abs() < 1e-2, "{p:?}");
        assert!(trace.last().unwrap() < &1e-3);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = TrainConfig { learning_rate: 0.01, batch_size: 7, epochs: 5, seed: 3, ..Default::default() };
        let (mut a, mut b) = (vec![0.0, 0.0], vec![0.0, 0.0]);
        let ta = train_objective(&line(), &mut a, &cfg).unwrap();
        let tb = train_objective(&line(), &mut b, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = TrainConfig { learning_rate: 1e300, batch_size: 50, epochs: 20, beta1: 0.0, beta2: 0.0, ..Default::default() };
        let bad = Line(vec![(1e200, 1e200)]);
        let mut p = vec![1e200, 0.0];
        assert!(matches!(train_objective(&bad, &mut p, &cfg), Err(Error::TrainingDiverged { epoch: 0, .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let mut p = vec![0.0, 0.0];
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(train_objective(&line(), &mut p, &cfg).is_err());
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(train_objective(&line(), &mut p, &cfg).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig { epochs: 11, final_lr_fraction: 0.1, ..Default::default() };
        assert!((cfg.learning_rate_at(0) - 1e-3).abs() < 1e-15);
        assert!((cfg.learning_rate_at(10) - 1e-4).abs() < 1e-15);
    }
}
