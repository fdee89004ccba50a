//! Sources of expected-rate estimates that optimizers query.

use crate::channel::{Network, RateEstimate};
use crate::error::{Error, Result};
use crate::oracle::ConditionalRateTable;
use crate::rng::{rng_from_seed, SimRng};

/// Something that returns expected per-device rates for a policy. Each call
/// that produces a rate vector counts as one evaluation.
pub trait RateEnvironment {
    fn num_devices(&self) -> usize;

    /// True when estimates carry no sampling noise.
    fn is_exact(&self) -> bool;

    fn estimate(&mut self, policy: &[f64]) -> Result<RateEstimate>;

    /// Rates at `policy` and with device `silent` forced to `p = 0`. An exact
    /// environment reuses `current` (the estimate at `policy`) when given.
    fn probe_pair(
        &mut self,
        policy: &[f64],
        silent: usize,
        current: Option<&RateEstimate>,
    ) -> Result<(RateEstimate, RateEstimate)>;

    fn evaluations(&self) -> u64;

    /// Simulated slots consumed so far (zero for exact sources).
    fn slots_used(&self) -> u64 {
        0
    }
}

/// Exact rates from a conditional rate table.
#[derive(Debug, Clone)]
pub struct OracleEnv {
    table: ConditionalRateTable,
    evaluations: u64,
}

impl OracleEnv {
    pub fn new(table: ConditionalRateTable) -> Self {
        OracleEnv { table, evaluations: 0 }
    }

    pub fn table(&self) -> &ConditionalRateTable {
        &self.table
    }

    fn check(&self, policy: &[f64]) -> Result<()> {
        crate::channel::check_probabilities(policy, self.table.num_devices())
    }
}

impl RateEnvironment for OracleEnv {
    fn num_devices(&self) -> usize {
        self.table.num_devices()
    }

    fn is_exact(&self) -> bool {
        true
    }

    fn estimate(&mut self, policy: &[f64]) -> Result<RateEstimate> {
        self.check(policy)?;
        self.evaluations += 1;
        Ok(RateEstimate::exact(self.table.expected_rates(policy)))
    }

    fn probe_pair(
        &mut self,
        policy: &[f64],
        silent: usize,
        current: Option<&RateEstimate>,
    ) -> Result<(RateEstimate, RateEstimate)> {
        self.check(policy)?;
        if silent >= self.num_devices() {
            return Err(Error::invalid(format!("no device {silent}")));
        }
        let with = match current {
            Some(c) => c.clone(),
            None => self.estimate(policy)?,
        };
        let mut q = policy.to_vec();
        q[silent] = 0.0;
        let without = self.estimate(&q)?;
        Ok((with, without))
    }

    fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

/// Monte Carlo rates from the slot simulator.
#[derive(Debug, Clone)]
pub struct MonteCarloEnv {
    network: Network,
    slots_per_estimate: u64,
    probe_slots: u64,
    rng: SimRng,
    evaluations: u64,
    slots_used: u64,
}

impl MonteCarloEnv {
    /// `slots_per_estimate` slots per objective estimate and `probe_slots`
    /// per probing half-window.
    pub fn new(network: Network, slots_per_estimate: u64, probe_slots: u64, seed: u64) -> Result<Self> {
        if slots_per_estimate == 0 || probe_slots == 0 {
            return Err(Error::invalid("slot counts must be >= 1"));
        }
        Ok(MonteCarloEnv {
            network,
            slots_per_estimate,
            probe_slots,
            rng: rng_from_seed(seed),
            evaluations: 0,
            slots_used: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }
}

impl RateEnvironment for MonteCarloEnv {
    fn num_devices(&self) -> usize {
        self.network.num_devices()
    }

    fn is_exact(&self) -> bool {
        false
    }

    fn estimate(&mut self, policy: &[f64]) -> Result<RateEstimate> {
        let est = self
            .network
            .estimate_expected_rates(policy, self.slots_per_estimate, &mut self.rng)?;
        self.evaluations += 1;
        self.slots_used += self.slots_per_estimate;
        Ok(est)
    }

    /// Both half-windows are simulated afresh from one random stream, so
    /// `current` is ignored.
    fn probe_pair(
        &mut self,
        policy: &[f64],
        silent: usize,
        _current: Option<&RateEstimate>,
    ) -> Result<(RateEstimate, RateEstimate)> {
        let pair = self
            .network
            .estimate_paired(policy, silent, self.probe_slots, &mut self.rng)?;
        self.evaluations += 2;
        self.slots_used += 2 * self.probe_slots;
        Ok(pair)
    }

    fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn slots_used(&self) -> u64 {
        self.slots_used
    }
}

/// Delta-method standard error of the log-geometric-mean objective,
/// treating per-device estimates as independent.
pub fn objective_std_error(est: &RateEstimate) -> f64 {
    let n = est.mean_rate.len() as f64;
    let var: f64 = est
        .mean_rate
        .iter()
        .zip(&est.std_error)
        .map(|(&r, &s)| {
            let r = r.max(crate::channel::RATE_FLOOR);
            (s / r).powi(2)
        })
        .sum();
    var.sqrt() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ConditionalRateTable {
        ConditionalRateTable::from_fn(2, |i, m| if m == 1 << i { 2.0 } else { 1.0 }).unwrap()
    }

    #[test]
    fn oracle_counts_evaluations() {
        let mut env = OracleEnv::new(table());
        let cur = env.estimate(&[0.5, 0.5]).unwrap();
        let (with, without) = env.probe_pair(&[0.5, 0.5], 0, Some(&cur)).unwrap();
        assert_eq!(env.evaluations(), 2);
        assert_eq!(with, cur);
        assert_eq!(without.mean_rate[0], 0.0);
        assert_eq!(without.mean_rate[1], 1.0);
        env.probe_pair(&[0.5, 0.5], 1, None).unwrap();
        assert_eq!(env.evaluations(), 4);
        assert!(env.estimate(&[0.5]).is_err());
    }

    #[test]
    fn objective_std_error_zero_when_exact() {
        let est = RateEstimate::exact(vec![1.0, 2.0]);
        assert_eq!(objective_std_error(&est), 0.0);
        let noisy = RateEstimate {
            mean_rate: vec![1.0, 2.0],
            std_error: vec![0.1, 0.2],
            slots: 10,
        };
        assert!((objective_std_error(&noisy) - (0.02f64).sqrt() / 2.0).abs() < 1e-15);
    }
}
