//! Fairness, approximation-ratio and NOMA-gain metrics.

use serde::{Deserialize, Serialize};

use crate::env::RateEnvironment;
use crate::error::{Error, Result};

/// `(sum r)^2 / (N sum r^2)`.
pub fn jain_fairness(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::UndefinedMetric("Jain index of an empty rate vector".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::invalid(format!("rate {r} must be finite and nonnegative")));
    }
    let s: f64 = rates.iter().sum();
    let s2: f64 = rates.iter().map(|r| r * r).sum();
    if s2 == 0.0 {
        return Err(Error::UndefinedMetric("Jain index of all-zero rates".into()));
    }
    Ok((s * s / (rates.len() as f64 * s2)).min(1.0))
}

/// Running best of a log-objective trace divided by the reference, both on
/// the geometric-mean-rate scale: `exp(best_so_far[t] - reference)`.
pub fn approximation_ratio(objectives: &[f64], reference: f64) -> Result<Vec<f64>> {
    if !reference.is_finite() {
        return Err(Error::invalid("reference objective must be finite"));
    }
    let mut best = f64::NEG_INFINITY;
    Ok(objectives
        .iter()
        .map(|&o| {
            best = best.max(o);
            (best - reference).exp()
        })
        .collect())
}

/// Geometric-mean rate gain `exp(O_with - O_without) - 1`.
pub fn noma_gain_from_objectives(with_noma: f64, without_noma: f64) -> f64 {
    (with_noma - without_noma).exp_m1()
}

/// Evaluates each policy in its own decoding mode and returns the gain.
pub fn noma_gain(
    env_with: &mut dyn RateEnvironment,
    env_without: &mut dyn RateEnvironment,
    policy_with: &[f64],
    policy_without: &[f64],
) -> Result<f64> {
    let a = env_with.estimate(policy_with)?.objective().value;
    let b = env_without.estimate(policy_without)?.objective().value;
    Ok(noma_gain_from_objectives(a, b))
}

/// Metrics for one optimized policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objective: f64,
    pub geometric_mean_rate: f64,
    pub jain_index: f64,
    pub rates: Vec<f64>,
    pub approximation_ratio: Vec<f64>,
    pub noma_gain: Option<f64>,
}

impl MetricsReport {
    pub fn from_rates(rates: Vec<f64>, trace: &[f64], reference: f64) -> Result<Self> {
        let objective = crate::channel::objective_geomean(&rates).value;
        Ok(MetricsReport {
            objective,
            geometric_mean_rate: objective.exp(),
            jain_index: jain_fairness(&rates)?,
            approximation_ratio: approximation_ratio(trace, reference)?,
            rates,
            noma_gain: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, Fading};
    use crate::env::OracleEnv;
    use crate::oracle::build_conditional_table;
    use crate::topology::{generate_uniform_deployment, Point2D, Topology};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn jain_examples() {
        assert_relative_eq!(jain_fairness(&[2.0; 5]).unwrap(), 1.0);
        assert_relative_eq!(jain_fairness(&[0.0, 0.0, 7.0, 0.0]).unwrap(), 0.25);
        assert_relative_eq!(jain_fairness(&[3.0, 1.0]).unwrap(), 0.8);
        assert!(matches!(jain_fairness(&[0.0, 0.0]), Err(Error::UndefinedMetric(_))));
        assert!(jain_fairness(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn ratio_reaches_one_and_is_monotone() {
        let r = approximation_ratio(&[-1.0, -0.5, -0.7, 0.2], 0.2).unwrap();
        assert_eq!(*r.last().unwrap(), 1.0);
        assert!(r.windows(2).all(|w| w[1] >= w[0]));
        assert_relative_eq!(r[0], (-1.2f64).exp());
    }

    #[test]
    fn same_mode_has_zero_gain() {
        assert_eq!(noma_gain_from_objectives(1.3, 1.3), 0.0);
        assert_relative_eq!(noma_gain_from_objectives(2f64.ln(), 0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn noma_gain_nonnegative_at_matched_policy() {
        for seed in 0..4 {
            let devices = generate_uniform_deployment(5, 300.0, seed).unwrap();
            let topo = Topology::new(devices, vec![Point2D::ORIGIN]).unwrap();
            let on = ChannelModel::default().with_fading(Fading::Rayleigh);
            let off = on.clone().with_noma(false);
            let mut e_on = OracleEnv::new(build_conditional_table(&on, &topo, 500, seed).unwrap());
            let mut e_off = OracleEnv::new(build_conditional_table(&off, &topo, 500, seed).unwrap());
            let p = [0.3, 0.6, 0.2, 0.9, 0.5];
            assert!(noma_gain(&mut e_on, &mut e_off, &p, &p).unwrap() >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn jain_scale_invariant_and_bounded(
            r in proptest::collection::vec(0.0f64..100.0, 1..30),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(r.iter().any(|&x| x > 0.0));
            let j = jain_fairness(&r).unwrap();
            let n = r.len() as f64;
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0);
            let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
            prop_assert!((jain_fairness(&scaled).unwrap() - j).abs() < 1e-12);
        }
    }
}
