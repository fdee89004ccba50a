//! Minibatch training of one network with projection onto nonnegative
//! hidden-state weights.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{nll_and_grad, nll_loss, IcnnParams};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Upper bound on minibatch steps per call, whatever `epochs` implies.
    pub max_steps: Option<usize>,
    /// Full-dataset loss is evaluated this often; the best parameters seen
    /// are kept.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 500,
            max_steps: Some(300),
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::invalid("learning_rate, batch_size, epochs and eval_every must be positive"));
        }
        Ok(())
    }

    /// Minibatch steps for a dataset of `n` samples.
    pub fn steps_for(&self, n: usize) -> usize {
        let full = self.epochs * n.div_ceil(self.batch_size);
        self.max_steps.map_or(full, |cap| full.min(cap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean NLL over the dataset before and after training.
    pub loss_before: f64,
    pub loss_after: f64,
    pub steps: usize,
}

/// Adam moments, kept across calls so a warm-started network continues
/// from where its optimizer stopped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn failed(what: &str) -> Error {
    Error::TrainingFailed(format!("non-finite {what}"))
}

/// Trains `params` in place on `(x, y)` with `y` in reported units. The
/// network's output affine map is left unchanged.
pub fn train_network(
    params: &mut IcnnParams,
    adam: &mut OptimizerState,
    x: ArrayView2<f64>,
    y: &[f64],
    config: &TrainConfig,
    rng: &mut SimRng,
) -> Result<TrainLog> {
    config.validate()?;
    let n = x.nrows();
    if n == 0 || n != y.len() {
        return Err(Error::invalid("dataset must be non-empty with one target per row"));
    }
    let raw: Vec<f64> = y
        .iter()
        .map(|t| (t - params.output_shift) / params.output_scale)
        .collect();
    let full_loss = |p: &IcnnParams| -> Result<f64> { Ok(nll_loss(p, x, y)? / n as f64) };
    let loss_before = full_loss(params)?;
    if !loss_before.is_finite() {
        return Err(failed("initial loss"));
    }

    let steps = config.steps_for(n);
    let np = params.num_params();
    if adam.m.len() != np {
        *adam = OptimizerState {
            m: vec![0.0; np],
            v: vec![0.0; np],
            t: 0,
        };
    }
    let mut best = (loss_before, params.clone());
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let bs = config.batch_size.min(n);
    let mut xb = Array2::zeros((bs, x.ncols()));
    let mut yb = vec![0.0; bs];

    for step in 1..=steps {
        if cursor + bs > n {
            order.shuffle(rng);
            cursor = 0;
        }
        for (r, &idx) in order[cursor..cursor + bs].iter().enumerate() {
            xb.row_mut(r).assign(&x.row(idx));
            yb[r] = raw[idx];
        }
        cursor += bs;
        let (loss, grad) = nll_and_grad(params, xb.view(), &yb)?;
        if !loss.is_finite() {
            return Err(failed("minibatch loss"));
        }
        let scale = 1.0 / bs as f64;
        adam.t += 1;
        let lr = config.learning_rate;
        let (c1, c2) = (1.0 - BETA1.powi(adam.t), 1.0 - BETA2.powi(adam.t));
        let mut k = 0;
        for (w, g) in params.slices_mut().into_iter().zip(grad.slices()) {
            for (wi, &gi) in w.iter_mut().zip(g) {
                let gi = gi * scale;
                if !gi.is_finite() {
                    return Err(failed("gradient"));
                }
                match config.optimizer {
                    OptimizerKind::Sgd => *wi -= lr * gi,
                    OptimizerKind::Adam => {
                        adam.m[k] = BETA1 * adam.m[k] + (1.0 - BETA1) * gi;
                        adam.v[k] = BETA2 * adam.v[k] + (1.0 - BETA2) * gi * gi;
                        *wi -= lr * (adam.m[k] / c1) / ((adam.v[k] / c2).sqrt() + ADAM_EPS);
                    }
                }
                k += 1;
            }
        }
        params.project();
        if step % config.eval_every == 0 || step == steps {
            let l = full_loss(params)?;
            if !l.is_finite() {
                return Err(failed("training loss"));
            }
            if l < best.0 {
                best = (l, params.clone());
            }
        }
    }
    *params = best.1;
    Ok(TrainLog {
        loss_before,
        loss_after: best.0,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn quadratic_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        let y = x
            .rows()
            .into_iter()
            .map(|r| 1.0 - (r[0] - 0.6).powi(2) - 2.0 * (r[1] - 0.3).powi(2))
            .collect();
        (x, y)
    }

    #[test]
    fn loss_does_not_increase_and_weights_stay_feasible() {
        let (x, y) = quadratic_data(64, 1);
        let mut rng = rng_from_seed(2);
        let mut p = IcnnParams::init(2, &[16, 16], 1.0, &mut rng).unwrap();
        let cfg = TrainConfig {
            max_steps: Some(300),
            ..TrainConfig::default()
        };
        let log = train_network(&mut p, &mut OptimizerState::default(), x.view(), &y, &cfg, &mut rng).unwrap();
        assert!(log.loss_after <= log.loss_before);
        assert!(log.loss_after < log.loss_before - 0.1, "{log:?}");
        assert!(p.is_feasible());
    }

    #[test]
    fn sgd_option_runs() {
        let (x, y) = quadratic_data(32, 3);
        let mut rng = rng_from_seed(4);
        let mut p = IcnnParams::init(2, &[8], 1.0, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            max_steps: Some(50),
            ..TrainConfig::default()
        };
        let log = train_network(&mut p, &mut OptimizerState::default(), x.view(), &y, &cfg, &mut rng).unwrap();
        assert_eq!(log.steps, 50);
        assert!(log.loss_after <= log.loss_before);
    }

    #[test]
    fn diverging_training_is_reported() {
        let (x, y) = quadratic_data(32, 5);
        let mut rng = rng_from_seed(6);
        let mut p = IcnnParams::init(2, &[8], 1.0, &mut rng).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e300,
            max_steps: Some(20),
            ..TrainConfig::default()
        };
        let err = train_network(&mut p, &mut OptimizerState::default(), x.view(), &y, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::TrainingFailed(_)), "{err}");
    }

    #[test]
    fn step_budget() {
        let cfg = TrainConfig {
            max_steps: None,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.steps_for(100), 500 * 4);
        assert_eq!(TrainConfig::default().steps_for(100), 300);
    }
}
