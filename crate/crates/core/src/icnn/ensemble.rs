//! Ensemble prediction and upper-confidence-bound acquisition.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{input_gradients, IcnnParams};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Mean, variance and their input gradients for a batch of policies.
pub struct Prediction {
    pub mu: Array1<f64>,
    pub var: Array1<f64>,
    pub d_mu: Array2<f64>,
    pub d_var: Array2<f64>,
}

/// A differentiable predictive model of the objective.
pub trait Surrogate {
    fn dim(&self) -> usize;
    fn predict_with_grad(&self, p: ArrayView2<f64>) -> Result<Prediction>;
}

/// Gaussian-mixture collapse of per-member predictions.
pub fn mixture(mus: &[f64], vars: &[f64]) -> (f64, f64) {
    let m = mus.len() as f64;
    let mu = mus.iter().sum::<f64>() / m;
    let second = mus.iter().zip(vars).map(|(u, v)| v + u * u).sum::<f64>() / m;
    let var = second - mu * mu;
    debug_assert!(var >= -1e-10 * second.abs().max(1.0), "mixture variance {var}");
    (mu, var.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<IcnnParams>,
}

impl Ensemble {
    pub fn new(members: Vec<IcnnParams>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::invalid("ensemble needs at least one member"));
        };
        if members.iter().any(|m| m.input_dim != first.input_dim) {
            return Err(Error::invalid("ensemble members disagree on input dimension"));
        }
        Ok(Ensemble { members })
    }

    /// Mixture mean and variance at one policy.
    pub fn predict(&self, p: &[f64]) -> Result<(f64, f64)> {
        let mut mus = Vec::with_capacity(self.members.len());
        let mut vars = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let (u, v) = m.forward(p)?;
            mus.push(u);
            vars.push(v);
        }
        Ok(mixture(&mus, &vars))
    }
}

impl Surrogate for Ensemble {
    fn dim(&self) -> usize {
        self.members[0].input_dim
    }

    fn predict_with_grad(&self, p: ArrayView2<f64>) -> Result<Prediction> {
        let (b, n) = p.dim();
        let m = self.members.len() as f64;
        let mut mu = Array1::zeros(b);
        let mut second = Array1::zeros(b);
        let mut d_mu = Array2::zeros((b, n));
        let mut d_second = Array2::zeros((b, n));
        for member in &self.members {
            let g = input_gradients(member, p)?;
            mu += &g.mu;
            second += &(&g.var + &g.mu.mapv(|x| x * x));
            d_mu += &g.d_mu;
            d_second += &(&g.d_var + &(&g.d_mu * &(2.0 * &g.mu).insert_axis(Axis(1))));
        }
        mu /= m;
        second /= m;
        d_mu /= m;
        d_second /= m;
        let var = (&second - &mu.mapv(|x| x * x)).mapv(|v| v.max(0.0));
        let d_var = d_second - &d_mu * &(2.0 * &mu).insert_axis(Axis(1));
        Ok(Prediction { mu, var, d_mu, d_var })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    /// Projected gradient steps per start.
    pub steps: usize,
    /// Initial move length in policy space.
    pub initial_step: f64,
    /// Maximizers closer than this (Euclidean) are merged.
    pub dedup_tol: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            steps: 60,
            initial_step: 0.1,
            dedup_tol: 1e-3,
        }
    }
}

/// `mu + beta * sigma` and its input gradient, row by row.
fn ucb_with_grad(s: &dyn Surrogate, p: ArrayView2<f64>, beta: f64) -> Result<(Array1<f64>, Array2<f64>)> {
    let pr = s.predict_with_grad(p)?;
    let sigma = pr.var.mapv(f64::sqrt);
    let val = &pr.mu + &(beta * &sigma);
    let coef = sigma.mapv(|sd| if sd > 1e-300 { beta / (2.0 * sd) } else { 0.0 });
    let grad = pr.d_mu + &(pr.d_var * &coef.insert_axis(Axis(1)));
    Ok((val, grad))
}

/// Maximizes `mu + beta sigma` over `[floor, 1]^N` by projected gradient
/// ascent from each row of `starts`. Returns the distinct maximizers, best
/// first, with their acquisition values.
pub fn ucb_maximize(
    surrogate: &dyn Surrogate,
    beta: f64,
    starts: ArrayView2<f64>,
    floor: f64,
    config: &AcquisitionConfig,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = surrogate.dim();
    if starts.ncols() != n {
        return Err(Error::invalid("start points have the wrong dimension"));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid("beta must be nonnegative"));
    }
    let rows = starts.nrows();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let mut x = starts.mapv(|v| v.clamp(floor, 1.0));
    let (mut val, mut grad) = ucb_with_grad(surrogate, x.view(), beta)?;
    let mut eta = vec![config.initial_step; rows];
    let mut trial = x.clone();

    for _ in 0..config.steps {
        if eta.iter().all(|&e| e < 1e-9) {
            break;
        }
        for r in 0..rows {
            let g = grad.row(r);
            let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let scale = if gmax > 0.0 { eta[r] / gmax } else { 0.0 };
            for c in 0..n {
                trial[[r, c]] = (x[[r, c]] + scale * g[c]).clamp(floor, 1.0);
            }
        }
        let (tv, tg) = ucb_with_grad(surrogate, trial.view(), beta)?;
        for r in 0..rows {
            if tv[r] >= val[r] {
                x.row_mut(r).assign(&trial.row(r));
                grad.row_mut(r).assign(&tg.row(r));
                val[r] = tv[r];
                eta[r] = (eta[r] * 1.5).min(1.0);
            } else {
                eta[r] *= 0.5;
            }
        }
    }

    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| val[b].total_cmp(&val[a]));
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in order {
        let p = x.row(r).to_vec();
        let distinct = kept.iter().all(|(q, _)| {
            p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= config.dedup_tol
        });
        if distinct {
            kept.push((p, val[r]));
        }
    }
    Ok(kept)
}

/// `rows` policies uniform in `[floor, 1]^n`.
pub fn uniform_policies(rows: usize, n: usize, floor: f64, rng: &mut SimRng) -> Array2<f64> {
    Array2::from_shape_fn((rows, n), |_| rng.random_range(floor..=1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    /// `mu = -|p - c|^2`, `var = v0 + w |p - d|^2`.
    struct Quadratic {
        c: Vec<f64>,
        d: Vec<f64>,
        v0: f64,
        w: f64,
    }

    impl Surrogate for Quadratic {
        fn dim(&self) -> usize {
            self.c.len()
        }

        fn predict_with_grad(&self, p: ArrayView2<f64>) -> Result<Prediction> {
            let (b, n) = p.dim();
            let mut out = Prediction {
                mu: Array1::zeros(b),
                var: Array1::zeros(b),
                d_mu: Array2::zeros((b, n)),
                d_var: Array2::zeros((b, n)),
            };
            for r in 0..b {
                out.var[r] = self.v0;
                for k in 0..n {
                    let (a, e) = (p[[r, k]] - self.c[k], p[[r, k]] - self.d[k]);
                    out.mu[r] -= a * a;
                    out.d_mu[[r, k]] = -2.0 * a;
                    out.var[r] += self.w * e * e;
                    out.d_var[[r, k]] = 2.0 * self.w * e;
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn mixture_of_identical_members() {
        let (mu, var) = mixture(&[1.5, 1.5, 1.5], &[0.2, 0.2, 0.2]);
        assert_relative_eq!(mu, 1.5);
        assert_relative_eq!(var, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn mixture_adds_disagreement() {
        let (mu, var) = mixture(&[0.0, 2.0], &[1.0, 3.0]);
        assert_relative_eq!(mu, 1.0);
        assert_relative_eq!(var, 3.0);
    }

    #[test]
    fn zero_beta_finds_interior_maximum() {
        let q = Quadratic {
            c: vec![0.3, 0.7, 0.55],
            d: vec![0.0; 3],
            v0: 1.0,
            w: 1.0,
        };
        let starts = uniform_policies(100, 3, 1e-3, &mut rng_from_seed(1));
        let found = ucb_maximize(&q, 0.0, starts.view(), 1e-3, &AcquisitionConfig::default()).unwrap();
        assert_eq!(found.len(), 1, "{found:?}");
        for (a, b) in found[0].0.iter().zip(&q.c) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn maximum_outside_box_is_projected() {
        let q = Quadratic {
            c: vec![1.4, -0.2],
            d: vec![0.0; 2],
            v0: 1.0,
            w: 0.0,
        };
        let starts = uniform_policies(10, 2, 1e-3, &mut rng_from_seed(2));
        let found = ucb_maximize(&q, 0.0, starts.view(), 1e-3, &AcquisitionConfig::default()).unwrap();
        assert_eq!(found.len(), 1);
        assert_relative_eq!(found[0].0[0], 1.0);
        assert_relative_eq!(found[0].0[1], 1e-3);
    }

    #[test]
    fn large_beta_pulls_towards_uncertainty() {
        let q = Quadratic {
            c: vec![0.5, 0.5],
            d: vec![0.0, 0.0],
            v0: 0.01,
            w: 4.0,
        };
        let starts = uniform_policies(20, 2, 1e-3, &mut rng_from_seed(3));
        let exploit = ucb_maximize(&q, 0.0, starts.view(), 1e-3, &AcquisitionConfig::default()).unwrap();
        let explore = ucb_maximize(&q, 5.0, starts.view(), 1e-3, &AcquisitionConfig::default()).unwrap();
        // sigma grows away from d = 0, so exploration moves further out
        let norm = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        assert!(norm(&explore[0].0) > norm(&exploit[0].0) + 0.1);
    }

    #[test]
    fn ensemble_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let members = (0..3)
            .map(|_| IcnnParams::init(3, &[6, 6], 1.0, &mut rng).unwrap())
            .collect();
        let ens = Ensemble::new(members).unwrap();
        let x = uniform_policies(4, 3, 0.0, &mut rng);
        let beta = 0.7;
        let (_, g) = ucb_with_grad(&ens, x.view(), beta).unwrap();
        let ucb = |p: &[f64]| {
            let (m, v) = ens.predict(p).unwrap();
            m + beta * v.sqrt()
        };
        let h = 1e-6;
        for r in 0..4 {
            for c in 0..3 {
                let mut up = x.row(r).to_vec();
                let mut dn = up.clone();
                up[c] += h;
                dn[c] -= h;
                let fd = (ucb(&up) - ucb(&dn)) / (2.0 * h);
                assert!((g[[r, c]] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{} vs {fd}", g[[r, c]]);
            }
        }
    }
}
