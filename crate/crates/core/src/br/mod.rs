//! Distributed best-response dynamics with action aggregation.

mod aggregate;

pub use aggregate::{
    best_response_map, compute_aggregator, fixed_point_best_response, probe_conditional_rates, series_map,
    AggregatorVector, FixedPoint, ProbeResult, K_TERMS,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{check_probabilities, DEFAULT_P_FLOOR};
use crate::env::RateEnvironment;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// How the next user to update is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Uniform with replacement.
    Random,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrConfig {
    /// Objective changes at or below this count as no change.
    pub termination_tol: f64,
    pub p_floor: f64,
    /// Slots per probing half-window (Monte Carlo only).
    pub probe_slots: u64,
    pub max_outer_iters: usize,
    pub selection: Selection,
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    /// With exact rates, keep the old probability when an update lowers the
    /// objective. Ignored for noisy sources.
    pub reject_worse: bool,
    /// Stop before a step would take the environment past this many
    /// evaluations.
    pub max_evaluations: Option<u64>,
}

impl Default for BrConfig {
    fn default() -> Self {
        BrConfig {
            termination_tol: 1e-6,
            p_floor: DEFAULT_P_FLOOR,
            probe_slots: 20_000,
            max_outer_iters: 10_000,
            selection: Selection::Random,
            fp_tol: 1e-9,
            fp_max_iters: 1000,
            reject_worse: true,
            max_evaluations: None,
        }
    }
}

impl BrConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.termination_tol > 0.0) {
            return Err(Error::invalid("termination_tol must be positive"));
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1.0) {
            return Err(Error::invalid("p_floor must be in (0, 1]"));
        }
        if n >= 2 {
            let cap = 1.0 / (K_TERMS as f64 * (n - 1) as f64);
            if self.p_floor > cap {
                return Err(Error::invalid(format!(
                    "p_floor {} exceeds 1/(K(N-1)) = {cap} for N = {n}",
                    self.p_floor
                )));
            }
        }
        if self.max_evaluations == Some(0) {
            return Err(Error::invalid("max_evaluations must be >= 1"));
        }
        if self.probe_slots == 0 || self.fp_max_iters == 0 || !(self.fp_tol > 0.0) {
            return Err(Error::invalid("probe_slots, fp_max_iters and fp_tol must be positive"));
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrStep {
    pub iter: usize,
    pub user: usize,
    pub p_new: f64,
    /// Objective after the update.
    pub objective: f64,
    pub fp_iters: usize,
    pub probe_slots_used: u64,
    /// Environment evaluations consumed up to and including this step.
    pub evaluations: u64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BrTrace {
    /// Objective at the initial policy.
    pub initial_objective: f64,
    pub steps: Vec<BrStep>,
}

impl BrTrace {
    /// Objective after each step, starting with the initial value.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.steps.iter().map(|s| s.objective))
            .collect()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.objectives().windows(2).all(|w| w[1] >= w[0])
    }

    /// Writes `iter,user,p_new,objective,fp_iters,probe_slots_used`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iter", "user", "p_new", "objective", "fp_iters", "probe_slots_used"])?;
        for s in &self.steps {
            wr.serialize((s.iter, s.user, s.p_new, s.objective, s.fp_iters, s.probe_slots_used))?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrOutcome {
    /// Best policy seen (the final one under exact rates with monotone steps).
    pub policy: Vec<f64>,
    pub objective: f64,
    pub final_policy: Vec<f64>,
    pub trace: BrTrace,
    /// Stopped because every user was probed without a significant change.
    pub converged: bool,
    pub evaluations: u64,
}

/// Sequential best responses. Stops once every user has been probed since
/// the last objective change larger than `termination_tol`, after
/// `max_outer_iters` updates, or when the evaluation budget is spent.
pub fn run_algorithm2(
    env: &mut dyn RateEnvironment,
    policy0: &[f64],
    config: &BrConfig,
    seed: u64,
) -> Result<BrOutcome> {
    let n = env.num_devices();
    config.validate(n)?;
    check_probabilities(policy0, n)?;
    if let Some((i, p)) = policy0.iter().enumerate().find(|(_, &p)| p < config.p_floor) {
        return Err(Error::invalid(format!("initial p[{i}] = {p} below the floor")));
    }
    let mut rng = rng_from_seed(seed);
    let mut p = policy0.to_vec();
    let mut current = env.estimate(&p)?;
    let mut obj = current.objective().value;
    let mut trace = BrTrace {
        initial_objective: obj,
        steps: Vec::new(),
    };
    let mut best = (obj, p.clone());
    let mut settled = vec![false; n];
    let mut converged = false;

    let step_cost = if env.is_exact() { 2 } else { 3 };
    for iter in 0..config.max_outer_iters {
        if config
            .max_evaluations
            .is_some_and(|cap| env.evaluations() + step_cost > cap)
        {
            break;
        }
        let user = match config.selection {
            Selection::Random => rng.random_range(0..n),
            Selection::RoundRobin => iter % n,
        };
        let slots_before = env.slots_used();
        let probe = probe_conditional_rates(env, user, &p, config.p_floor, Some(&current))?;
        let agg = compute_aggregator(&probe.v, &probe.u, user);
        let fp = fixed_point_best_response(&agg.j, p[user], config.fp_tol, config.fp_max_iters);
        let p_new = fp.p.clamp(config.p_floor, 1.0);

        let old = p[user];
        p[user] = p_new;
        let est = env.estimate(&p)?;
        let new_obj = est.objective().value;
        let accepted = !(config.reject_worse && env.is_exact() && new_obj < obj);
        let change;
        if accepted {
            change = (new_obj - obj).abs();
            current = est;
            obj = new_obj;
        } else {
            change = 0.0;
            p[user] = old;
        }
        trace.steps.push(BrStep {
            iter,
            user,
            p_new: p[user],
            objective: obj,
            fp_iters: fp.iterations,
            probe_slots_used: env.slots_used() - slots_before,
            evaluations: env.evaluations(),
            accepted,
        });
        if obj > best.0 {
            best = (obj, p.clone());
        }
        if change > config.termination_tol {
            settled.iter_mut().for_each(|s| *s = false);
        }
        settled[user] = true;
        if settled.iter().all(|&s| s) {
            converged = true;
            break;
        }
    }
    Ok(BrOutcome {
        policy: best.1,
        objective: best.0,
        final_policy: p,
        trace,
        converged,
        evaluations: env.evaluations(),
    })
}
