//! Self-check suites behind the `verify` subcommand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::br::{best_response_map, fixed_point_best_response, AggregatorVector};
use crate::channel::{ChannelModel, Fading, Network};
use crate::error::{Error, Result};
use crate::oracle::{build_conditional_table, verify_concavity};
use crate::rng::{child_rng, derive_seed, rng_from_seed};
use crate::topology::{generate_uniform_deployment, Point2D, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Oracle,
    Concavity,
    Contraction,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Suite::Oracle),
            "concavity" => Ok(Suite::Concavity),
            "contraction" => Ok(Suite::Contraction),
            _ => Err(Error::invalid(format!("unknown suite '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub failures: usize,
    /// Largest deviation seen, in the suite's own units.
    pub worst: f64,
    pub pass: bool,
}

/// Monte Carlo against exact rates on three-device single-cell networks,
/// in units of standard errors.
fn oracle_suite(seed: u64, instances: usize, slots: u64) -> Result<SuiteReport> {
    let model = ChannelModel::default().with_fading(Fading::None);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for k in 0..instances {
        let s = derive_seed(seed, k as u64);
        let devices = generate_uniform_deployment(3, 500.0, s)?;
        let topo = Topology::new(devices, vec![Point2D::ORIGIN])?;
        let table = build_conditional_table(&model, &topo, 1, s)?;
        let mut rng = rng_from_seed(s);
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..=1.0)).collect();
        let exact = table.expected_rates(&p);
        let est = Network::new(model.clone(), topo)?.estimate_expected_rates(&p, slots, &mut rng)?;
        for i in 0..3 {
            let se = est.std_error[i];
            let dev = (est.mean_rate[i] - exact[i]).abs();
            let z = if se > 0.0 { dev / se } else if dev < 1e-12 { 0.0 } else { f64::INFINITY };
            worst = worst.max(z);
            if z > 4.0 {
                failures += 1;
            }
        }
    }
    Ok(SuiteReport {
        suite: Suite::Oracle,
        cases: instances * 3,
        failures,
        worst,
        pass: failures == 0,
    })
}

/// Alternating-minor test on two-device instances; `worst` counts failing
/// grid points.
fn concavity_suite(seed: u64, instances: usize, grid: usize) -> Result<SuiteReport> {
    let model = ChannelModel::default();
    let mut failures = 0;
    let mut cases = 0;
    for k in 0..instances {
        let s = derive_seed(seed, 100 + k as u64);
        let devices = generate_uniform_deployment(2, 500.0, s)?;
        let topo = Topology::new(devices, vec![Point2D::ORIGIN])?;
        let table = build_conditional_table(&model, &topo, 2000, s)?;
        let report = verify_concavity(&table, grid)?;
        cases += report.points_checked();
        failures += report.failures().count();
    }
    Ok(SuiteReport {
        suite: Suite::Concavity,
        cases,
        failures,
        worst: failures as f64,
        pass: failures == 0,
    })
}

/// Fixed-point convergence and slope of the best-response map on sampled
/// aggregators; `worst` is the largest slope found.
fn contraction_suite(seed: u64, samples: usize) -> Result<SuiteReport> {
    let mut rng = child_rng(seed, 0xC0);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let floor = 1e-3;
    for _ in 0..samples {
        let n = rng.random_range(3..=30);
        let q: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
        let j = AggregatorVector::from_q(&q).j;
        let fp = fixed_point_best_response(&j, rng.random_range(floor..=1.0), 1e-9, 200);
        let slope = (0..=400)
            .map(|k| {
                let x = floor + (1.0 - floor) * k as f64 / 400.0;
                let h = 1e-6;
                let (a, b) = ((x - h).max(floor), (x + h).min(1.0));
                ((best_response_map(&j, b) - best_response_map(&j, a)) / (b - a)).abs()
            })
            .fold(0.0, f64::max);
        worst = worst.max(slope);
        if fp.hit_cap || slope >= 1.0 {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        suite: Suite::Contraction,
        cases: samples,
        failures,
        worst,
        pass: failures == 0,
    })
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Oracle => oracle_suite(seed, 5, 100_000),
        Suite::Concavity => concavity_suite(seed, 5, 25),
        Suite::Contraction => contraction_suite(seed, 1000),
    }
}
