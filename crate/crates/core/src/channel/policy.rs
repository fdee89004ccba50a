use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on any transmission probability.
pub const DEFAULT_P_FLOOR: f64 = 1e-3;

/// Per-device transmission probabilities, each in `[floor, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransmissionPolicy {
    probabilities: Vec<f64>,
}

impl TransmissionPolicy {
    pub fn new(probabilities: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(Error::invalid(format!("probability floor {floor} not in (0, 1]")));
        }
        if probabilities.is_empty() {
            return Err(Error::invalid("empty policy"));
        }
        if let Some((i, p)) = probabilities
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p >= floor && p <= 1.0))
        {
            return Err(Error::invalid(format!("p[{i}] = {p} outside [{floor}, 1]")));
        }
        Ok(TransmissionPolicy { probabilities })
    }

    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n], p.min(DEFAULT_P_FLOOR))
    }

    /// Clamps every entry into `[floor, 1]`.
    pub fn clamped(probabilities: Vec<f64>, floor: f64) -> Self {
        TransmissionPolicy {
            probabilities: probabilities.into_iter().map(|p| p.clamp(floor, 1.0)).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

pub(crate) fn check_probabilities(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::invalid(format!("policy has {} entries for {n} devices", p.len())));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!("p[{i}] = {v} is not a probability")));
    }
    Ok(())
}
