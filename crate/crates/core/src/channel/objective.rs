/// Floor applied to expected rates before taking logs.
pub const RATE_FLOOR: f64 = 1e-12;

/// Log of the geometric mean of expected rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Number of devices whose rate was below the floor (starved).
    pub floored: usize,
}

impl ObjectiveValue {
    pub fn starved(&self) -> bool {
        self.floored > 0
    }

    /// Geometric-mean rate, `exp(value)`.
    pub fn geometric_mean(&self) -> f64 {
        self.value.exp()
    }
}

/// `(1/N) sum_i log(max(R_i, RATE_FLOOR))`.
pub fn objective_geomean(rates: &[f64]) -> ObjectiveValue {
    assert!(!rates.is_empty(), "objective of an empty rate vector");
    let mut floored = 0;
    let total: f64 = rates
        .iter()
        .map(|&r| {
            if r < RATE_FLOOR {
                floored += 1;
                RATE_FLOOR.ln()
            } else {
                r.ln()
            }
        })
        .sum();
    ObjectiveValue {
        value: total / rates.len() as f64,
        floored,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_rates() {
        let o = objective_geomean(&[2.0, 2.0, 2.0]);
        assert_relative_eq!(o.value, 2f64.ln(), epsilon = 1e-15);
        assert!(!o.starved());
    }

    #[test]
    fn four_and_one() {
        assert_relative_eq!(objective_geomean(&[4.0, 1.0]).value, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn zero_rate_is_floored_and_flagged() {
        let o = objective_geomean(&[0.0, 3.0]);
        assert!(o.starved());
        assert_eq!(o.floored, 1);
        assert!(o.value <= (RATE_FLOOR.ln() + 3f64.ln()) / 2.0 + 1e-12);
    }

    proptest! {
        #[test]
        fn am_gm(rates in proptest::collection::vec(1e-6f64..100.0, 1..20)) {
            let gm = objective_geomean(&rates).geometric_mean();
            let am = rates.iter().sum::<f64>() / rates.len() as f64;
            prop_assert!(gm <= am * (1.0 + 1e-12));
        }

        #[test]
        fn monotone_in_each_rate(
            rates in proptest::collection::vec(1e-3f64..100.0, 1..10),
            idx in 0usize..10,
            bump in 1e-3f64..10.0,
        ) {
            let i = idx % rates.len();
            let mut up = rates.clone();
            up[i] += bump;
            prop_assert!(objective_geomean(&up).value > objective_geomean(&rates).value);
        }
    }
}
