//! Probing, the action aggregator and the fixed-point best response.

use serde::{Deserialize, Serialize};

use crate::channel::{RateEstimate, RATE_FLOOR};
use crate::env::RateEnvironment;
use crate::error::{Error, Result};

/// Number of terms kept in the series expansion of the best response.
pub const K_TERMS: usize = 5;

/// Per-neighbor quantities from one probe of device `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub device: usize,
    /// Rates of the other devices given `i` transmits (`V_k`); entry `i` is unused.
    pub v: Vec<f64>,
    /// Rates of the other devices given `i` is silent (`U_k`).
    pub u: Vec<f64>,
    /// Estimates at the probed policy, reusable as the current estimate.
    pub with: RateEstimate,
}

/// Runs both probing half-windows for device `i` and solves for `V_k`, `U_k`.
pub fn probe_conditional_rates(
    env: &mut dyn RateEnvironment,
    i: usize,
    policy: &[f64],
    p_floor: f64,
    current: Option<&RateEstimate>,
) -> Result<ProbeResult> {
    let n = env.num_devices();
    if i >= n || policy.len() != n {
        return Err(Error::invalid(format!("device {i} or policy length {} invalid for {n} devices", policy.len())));
    }
    let pi = policy[i];
    if !(pi >= p_floor && pi <= 1.0) {
        return Err(Error::invalid(format!("p[{i}] = {pi} outside [{p_floor}, 1]")));
    }
    let (with, without) = env.probe_pair(policy, i, current)?;
    let u = without.mean_rate.clone();
    let v = with
        .mean_rate
        .iter()
        .zip(&u)
        .map(|(&r, &uk)| (r - (1.0 - pi) * uk) / pi)
        .collect();
    Ok(ProbeResult { device: i, v, u, with })
}

/// Power sums of the neighbors' rate-loss fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorVector {
    /// `J_n = sum_k Q_k^n`, `n = 1..=K_TERMS`.
    pub j: [f64; K_TERMS],
    /// `(k, Q_k)` for every neighbor that was kept.
    pub q: Vec<(usize, f64)>,
    /// Neighbors dropped because `U_k` was at the rate floor.
    pub excluded: Vec<usize>,
}

impl AggregatorVector {
    pub fn from_q(q: &[f64]) -> Self {
        let mut j = [0.0; K_TERMS];
        for &qk in q {
            let mut pow = 1.0;
            for jn in j.iter_mut() {
                pow *= qk;
                *jn += pow;
            }
        }
        AggregatorVector {
            j,
            q: q.iter().copied().enumerate().collect(),
            excluded: Vec::new(),
        }
    }

    /// True when no neighbor is affected (or none could be kept).
    pub fn is_empty(&self) -> bool {
        self.j.iter().all(|&x| x == 0.0)
    }
}

/// `Q_k = clamp((U_k - V_k)/U_k, 0, 1)` for `k != device`, skipping
/// neighbors with `U_k <= RATE_FLOOR`.
pub fn compute_aggregator(v: &[f64], u: &[f64], device: usize) -> AggregatorVector {
    let mut q = Vec::new();
    let mut excluded = Vec::new();
    for k in 0..u.len() {
        if k == device {
            continue;
        }
        if u[k] <= RATE_FLOOR {
            excluded.push(k);
            continue;
        }
        let qk = ((u[k] - v[k]) / u[k]).clamp(0.0, 1.0);
        q.push((k, qk));
    }
    let qs: Vec<f64> = q.iter().map(|x| x.1).collect();
    let mut agg = AggregatorVector::from_q(&qs);
    agg.q = q;
    agg.excluded = excluded;
    agg
}

/// `F(p) = 1 / <J, (1, p, .., p^{K-1})>` (infinite when the product is 0).
pub fn series_map(j: &[f64; K_TERMS], p: f64) -> f64 {
    let mut denom = 0.0;
    let mut pow = 1.0;
    for &jn in j {
        denom += jn * pow;
        pow *= p;
    }
    if denom > 0.0 {
        1.0 / denom
    } else {
        f64::INFINITY
    }
}

/// `min(F(p), 1)`.
pub fn best_response_map(j: &[f64; K_TERMS], p: f64) -> f64 {
    series_map(j, p).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub p: f64,
    pub iterations: usize,
    /// The iteration cap was reached before `|dp| < tol`.
    pub hit_cap: bool,
    /// Switched to the averaged update after the steps stopped shrinking.
    pub damped: bool,
}

/// Steps that may fail to shrink before switching to the averaged update.
const STALL_LIMIT: usize = 20;

/// Iterates `p <- min(F(p), 1)` from `p_init` until successive iterates
/// differ by less than `tol`, or `max_iters` steps.
pub fn fixed_point_best_response(j: &[f64; K_TERMS], p_init: f64, tol: f64, max_iters: usize) -> FixedPoint {
    if j.iter().all(|&x| x == 0.0) {
        return FixedPoint {
            p: 1.0,
            iterations: 0,
            hit_cap: false,
            damped: false,
        };
    }
    let mut p = p_init;
    let mut last_step = f64::INFINITY;
    let mut stalls = 0;
    let mut damped = false;
    for it in 1..=max_iters {
        let target = best_response_map(j, p);
        let next = if damped { 0.5 * (p + target) } else { target };
        let step = (next - p).abs();
        p = next;
        if step < tol {
            return FixedPoint {
                p,
                iterations: it,
                hit_cap: false,
                damped,
            };
        }
        if !damped {
            if step >= last_step {
                stalls += 1;
                if stalls >= STALL_LIMIT {
                    damped = true;
                }
            } else {
                stalls = 0;
            }
        }
        last_step = step;
    }
    FixedPoint {
        p,
        iterations: max_iters,
        hit_cap: true,
        damped,
    }
}
