//! Exact evaluation for small networks by enumerating transmitter subsets.

mod concavity;

pub use concavity::{
    hessian_fd, leading_minors, sampled_midpoint_concavity, concavity_bounds, verify_concavity,
    ConcavityReport, MidpointCheck, PointCheck, ConcavityBounds, FD_STEP,
};

use std::collections::BTreeMap;

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{decode_into, objective_geomean, ChannelModel, Fading, LinkBudget, ObjectiveValue};
use crate::error::{Error, Result};
use crate::rng::child_rng;
use crate::topology::Topology;

/// Largest network the oracle will enumerate.
pub const MAX_ORACLE_DEVICES: usize = 12;

/// `E[rate_i | exactly S transmits]` for every subset `S` (as a bitmask) and
/// every `i in S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRateTable {
    n: usize,
    /// `rates[mask * n + i]`, zero when `i` is not in `mask`.
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    num_devices: usize,
    /// One map per device from subset bitmask to conditional rate.
    devices: Vec<BTreeMap<u32, f64>>,
}

impl ConditionalRateTable {
    /// Builds a table from `f(i, mask)` evaluated for every `i in mask`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, u32) -> f64) -> Result<Self> {
        check_capacity(n)?;
        let mut rates = vec![0.0; (1usize << n) * n];
        for mask in 1..(1u32 << n) {
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    let r = f(i, mask);
                    if !(r >= 0.0 && r.is_finite()) {
                        return Err(Error::invalid(format!("rate {r} for device {i} in subset {mask:#b}")));
                    }
                    rates[mask as usize * n + i] = r;
                }
            }
        }
        Ok(ConditionalRateTable { n, rates })
    }

    pub fn num_devices(&self) -> usize {
        self.n
    }

    /// Conditional rate of `device` when exactly `mask` transmits.
    #[inline]
    pub fn rate(&self, device: usize, mask: u32) -> f64 {
        self.rates[mask as usize * self.n + device]
    }

    pub fn to_json(&self) -> Result<String> {
        let devices = (0..self.n)
            .map(|i| {
                (1..(1u32 << self.n))
                    .filter(|m| m >> i & 1 == 1)
                    .map(|m| (m, self.rate(i, m)))
                    .collect()
            })
            .collect();
        Ok(serde_json::to_string_pretty(&TableFile {
            num_devices: self.n,
            devices,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(s)?;
        if file.devices.len() != file.num_devices {
            return Err(Error::invalid("device count mismatch"));
        }
        let n = file.num_devices;
        check_capacity(n)?;
        for (i, map) in file.devices.iter().enumerate() {
            if map.keys().any(|&m| m >> i & 1 == 0 || m >= 1 << n) {
                return Err(Error::invalid(format!("device {i} keyed by a subset not containing it")));
            }
        }
        Self::from_fn(n, |i, m| file.devices[i].get(&m).copied().unwrap_or(0.0))
    }

    /// Probability of each subset transmitting under `p`, indexed by bitmask.
    pub fn subset_probabilities(&self, p: &[f64]) -> Vec<f64> {
        subset_probabilities(p)
    }

    /// Expected rate of every device under `p`. Exact for the tabulated
    /// conditionals; the polynomial is evaluated for any real `p`.
    pub fn expected_rates(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.n, "policy dimension");
        let prob = subset_probabilities(p);
        let mut out = vec![0.0; self.n];
        for (mask, &w) in prob.iter().enumerate().skip(1) {
            let row = &self.rates[mask * self.n..(mask + 1) * self.n];
            for (o, &r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        out
    }

    /// `(V, U)`: expected rates of every device with device `j` forced to
    /// transmit and forced silent. `R = p_j V + (1 - p_j) U` exactly.
    pub fn conditional_split(&self, p: &[f64], j: usize) -> (Vec<f64>, Vec<f64>) {
        let mut q = p.to_vec();
        q[j] = 1.0;
        let v = self.expected_rates(&q);
        q[j] = 0.0;
        let u = self.expected_rates(&q);
        (v, u)
    }
}

fn check_capacity(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("oracle needs at least one device"));
    }
    if n > MAX_ORACLE_DEVICES {
        return Err(Error::CapacityExceeded {
            what: "oracle devices".into(),
            got: n,
            limit: MAX_ORACLE_DEVICES,
        });
    }
    Ok(())
}

/// Weights `prod_{j in S} p_j prod_{k not in S} (1 - p_k)` for every subset.
pub fn subset_probabilities(p: &[f64]) -> Vec<f64> {
    let mut prob = Vec::with_capacity(1 << p.len());
    prob.push(1.0);
    for (j, &pj) in p.iter().enumerate() {
        let half = 1usize << j;
        for m in 0..half {
            prob.push(prob[m] * pj);
            prob[m] *= 1.0 - pj;
        }
    }
    prob
}

/// Tabulates conditional rates by decoding every subset under
/// `fading_samples` fading draws. Every subset sees the same draws, so
/// sampling error is shared across entries. Deterministic fading uses one
/// pass regardless of `fading_samples`.
pub fn build_conditional_table(
    model: &ChannelModel,
    topology: &Topology,
    fading_samples: usize,
    seed: u64,
) -> Result<ConditionalRateTable> {
    model.validate()?;
    let n = topology.num_devices();
    check_capacity(n)?;
    let nb = topology.num_base_stations();
    let samples = match model.fading {
        Fading::None => 1,
        Fading::Rayleigh if fading_samples >= 2 => fading_samples,
        Fading::Rayleigh => {
            return Err(Error::invalid("Rayleigh fading needs at least 2 fading samples"));
        }
    };
    if fading_samples == 0 {
        return Err(Error::invalid("fading_samples must be >= 1"));
    }
    let link = LinkBudget::new(model, topology);
    let draws: Vec<f64> = match model.fading {
        Fading::None => vec![1.0; n * nb],
        Fading::Rayleigh => (0..samples)
            .flat_map(|s| {
                let mut rng = child_rng(seed, s as u64);
                (0..n * nb).map(move |_| Exp1.sample(&mut rng)).collect::<Vec<f64>>()
            })
            .collect(),
    };

    let rows: Vec<Vec<f64>> = (1..(1u32 << n))
        .into_par_iter()
        .map(|mask| {
            let tx: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let mut fading = vec![0.0; tx.len() * nb];
            let mut rates = vec![0.0; n];
            let mut sum = vec![0.0; n];
            for s in 0..samples {
                let base = &draws[s * n * nb..(s + 1) * n * nb];
                for (k, &dev) in tx.iter().enumerate() {
                    fading[k * nb..(k + 1) * nb].copy_from_slice(&base[dev * nb..(dev + 1) * nb]);
                }
                decode_into(model, &link, &tx, &fading, &mut rates, |_| {});
                for &dev in &tx {
                    sum[dev] += rates[dev];
                    rates[dev] = 0.0;
                }
            }
            sum.iter().map(|x| x / samples as f64).collect()
        })
        .collect();
    ConditionalRateTable::from_fn(n, |i, mask| rows[mask as usize - 1][i])
}

/// Expected per-device rates under `policy`.
pub fn exact_expected_rate(table: &ConditionalRateTable, policy: &[f64]) -> Result<Vec<f64>> {
    if policy.len() != table.num_devices() {
        return Err(Error::invalid(format!(
            "policy has {} entries, table has {} devices",
            policy.len(),
            table.num_devices()
        )));
    }
    Ok(table.expected_rates(policy))
}

pub fn exact_objective(table: &ConditionalRateTable, policy: &[f64]) -> Result<ObjectiveValue> {
    Ok(objective_geomean(&exact_expected_rate(table, policy)?))
}

/// Best point of a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub policy: Vec<f64>,
    pub objective: f64,
    pub evaluations: u64,
}

/// Largest grid [`grid_search`] will enumerate.
pub const MAX_GRID_POINTS: u64 = 50_000_000;

/// `points` evenly spaced values from `floor` to 1 inclusive.
pub fn grid_axis(floor: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![1.0];
    }
    (0..points)
        .map(|k| floor + (1.0 - floor) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Exhaustive search over `grid_axis(floor, points)^N`. Ties go to the first
/// point in row-major order (last coordinate fastest).
pub fn grid_search(table: &ConditionalRateTable, floor: f64, points: usize) -> Result<GridOptimum> {
    if points == 0 || !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::invalid("grid needs >= 1 point per axis and a floor in (0, 1]"));
    }
    let n = table.num_devices();
    let total = (points as u64).checked_pow(n as u32).filter(|&t| t <= MAX_GRID_POINTS);
    let Some(total) = total else {
        return Err(Error::CapacityExceeded {
            what: "grid points".into(),
            got: points.saturating_pow(n as u32),
            limit: MAX_GRID_POINTS as usize,
        });
    };
    let axis = grid_axis(floor, points);
    let chunk = (points as u64).pow(n.saturating_sub(1) as u32);
    let best = (0..points as u64)
        .into_par_iter()
        .map(|first| {
            let mut p = vec![0.0; n];
            let mut best = (f64::NEG_INFINITY, u64::MAX);
            for idx in first * chunk..(first + 1) * chunk {
                let mut rest = idx;
                for slot in p.iter_mut().rev() {
                    *slot = axis[(rest % points as u64) as usize];
                    rest /= points as u64;
                }
                let v = objective_geomean(&table.expected_rates(&p)).value;
                if v > best.0 {
                    best = (v, idx);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, u64::MAX),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    let mut rest = best.1;
    let mut policy = vec![0.0; n];
    for slot in policy.iter_mut().rev() {
        *slot = axis[(rest % points as u64) as usize];
        rest /= points as u64;
    }
    Ok(GridOptimum {
        policy,
        objective: best.0,
        evaluations: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::topology::{generate_uniform_deployment, place_bs_lloyd, Point2D};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_user(a: f64, b: f64) -> ConditionalRateTable {
        ConditionalRateTable::from_fn(2, |i, m| match (i, m) {
            (0, 0b01) => a,
            (0, 0b11) => b,
            (1, 0b10) => a,
            (1, 0b11) => b,
            _ => unreachable!(),
        })
        .unwrap()
    }

    fn random_topology(seed: u64, n: usize, m: usize) -> Topology {
        let d = generate_uniform_deployment(n, 500.0, seed).unwrap();
        let bs = place_bs_lloyd(&d, m, seed, 100).unwrap();
        Topology::new(d, bs).unwrap()
    }

    fn random_table(n: usize, seed: u64) -> ConditionalRateTable {
        let mut rng = rng_from_seed(seed);
        ConditionalRateTable::from_fn(n, |_, _| rng.random::<f64>() * 5.0).unwrap()
    }

    #[test]
    fn two_user_rates_by_hand() {
        let t = two_user(2.0, 1.0);
        let r = exact_expected_rate(&t, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(r[0], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn rate_linear_in_own_probability() {
        let t = random_table(3, 1);
        let r1 = t.expected_rates(&[1e-3, 0.4, 0.7])[0];
        let r2 = t.expected_rates(&[2e-3, 0.4, 0.7])[0];
        assert_relative_eq!(r2, 2.0 * r1, max_relative = 1e-12);
    }

    #[test]
    fn single_device_table_is_shannon_rate() {
        let model = ChannelModel::default().with_fading(Fading::None);
        let topo = Topology::new(vec![Point2D::new(100.0, 0.0)], vec![Point2D::ORIGIN]).unwrap();
        let t = build_conditional_table(&model, &topo, 1, 0).unwrap();
        let snir = model.path_gain(100.0) / model.noise_floor_w;
        assert_relative_eq!(t.rate(0, 1), (1.0 + snir).log2(), max_relative = 1e-12);
    }

    #[test]
    fn interference_never_helps_deterministic() {
        let model = ChannelModel::default().with_fading(Fading::None);
        for seed in 0..10 {
            let topo = random_topology(seed, 4, 1 + (seed as usize % 2));
            let t = build_conditional_table(&model, &topo, 1, 0).unwrap();
            for mask in 1u32..16 {
                for i in 0..4 {
                    if mask >> i & 1 == 0 {
                        continue;
                    }
                    for j in 0..4 {
                        if mask >> j & 1 == 0 {
                            assert!(t.rate(i, mask | 1 << j) <= t.rate(i, mask) + 1e-15);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn device_appears_in_half_the_subsets() {
        let t = random_table(3, 2);
        let json = t.to_json().unwrap();
        let file: TableFile = serde_json::from_str(&json).unwrap();
        assert!(file.devices.iter().all(|d| d.len() == 4));
        assert_eq!(ConditionalRateTable::from_json(&json).unwrap(), t);
    }

    #[test]
    fn capacity_guard() {
        let model = ChannelModel::default();
        let topo = random_topology(0, 13, 1);
        assert!(matches!(
            build_conditional_table(&model, &topo, 10, 0),
            Err(Error::CapacityExceeded { .. })
        ));
        assert!(build_conditional_table(&model, &random_topology(0, 3, 1), 1, 0).is_err());
    }

    #[test]
    fn symmetric_instance_objective_is_log_rate() {
        let t = two_user(3.0, 1.0);
        let r = t.expected_rates(&[0.3, 0.3]);
        assert_relative_eq!(r[0], r[1], epsilon = 1e-15);
        assert_relative_eq!(exact_objective(&t, &[0.3, 0.3]).unwrap().value, r[0].ln(), epsilon = 1e-15);
    }

    #[test]
    fn grid_matches_brute_force_and_beats_floor() {
        let t = random_table(2, 5);
        let g = grid_search(&t, 1e-3, 100).unwrap();
        assert_eq!(g.evaluations, 10_000);
        let axis = grid_axis(1e-3, 100);
        let mut best = f64::NEG_INFINITY;
        for &a in &axis {
            for &b in &axis {
                best = best.max(exact_objective(&t, &[a, b]).unwrap().value);
            }
        }
        assert_eq!(g.objective, best);
        assert!(exact_objective(&t, &[1e-3, 1e-3]).unwrap().value < g.objective);
    }

    #[test]
    fn split_matches_table_for_three_users() {
        let t = random_table(3, 7);
        let p = [0.2, 0.6, 0.9];
        let (v, u) = t.conditional_split(&p, 0);
        // device 1 conditional on device 0 transmitting
        let v1 = t.rate(1, 0b011) * (1.0 - p[2]) + t.rate(1, 0b111) * p[2];
        let u1 = t.rate(1, 0b010) * (1.0 - p[2]) + t.rate(1, 0b110) * p[2];
        assert_relative_eq!(v[1] / p[1], v1, max_relative = 1e-12);
        assert_relative_eq!(u[1] / p[1], u1, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn mixture_sums_to_one(p in proptest::collection::vec(0.0f64..=1.0, 1..10)) {
            let s: f64 = subset_probabilities(&p).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn conditional_split_identity(seed in 0u64..1000, p in proptest::collection::vec(0.0f64..=1.0, 4), j in 0usize..4) {
            let t = random_table(4, seed);
            let r = t.expected_rates(&p);
            let (v, u) = t.conditional_split(&p, j);
            for i in 0..4 {
                let rebuilt = p[j] * v[i] + (1.0 - p[j]) * u[i];
                prop_assert!((rebuilt - r[i]).abs() <= 1e-12 * (1.0 + r[i].abs()));
            }
        }
    }

    #[test]
    fn monte_carlo_within_four_standard_errors() {
        let model = ChannelModel::default().with_fading(Fading::None);
        let (mut inside, mut total) = (0, 0);
        for run in 0..60u64 {
            let n = 2 + (run % 3) as usize;
            let devices = generate_uniform_deployment(n, 500.0, run).unwrap();
            let bs = place_bs_lloyd(&devices, 1 + (run % 2) as usize, run, 100).unwrap();
            let topo = Topology::new(devices, bs).unwrap();
            let table = build_conditional_table(&model, &topo, 1, run).unwrap();
            let mut rng = rng_from_seed(run);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
            let exact = table.expected_rates(&p);
            let est = crate::channel::Network::new(model.clone(), topo)
                .unwrap()
                .estimate_expected_rates(&p, 20_000, &mut rng)
                .unwrap();
            for i in 0..n {
                total += 1;
                let dev = (est.mean_rate[i] - exact[i]).abs();
                if dev <= 4.0 * est.std_error[i] + 1e-12 {
                    inside += 1;
                }
            }
        }
        assert!(inside as f64 >= 0.99 * total as f64, "{inside}/{total}");
    }
}