use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light used to derive the carrier wavelength, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Small-scale fading law applied per (device, BS, slot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fading {
    /// Unit-mean exponential power gain.
    Rayleigh,
    /// `h = 1` always.
    None,
}

/// Physical-layer constants plus the decoder mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub tx_power_w: f64,
    pub noise_floor_w: f64,
    pub path_loss_exponent: f64,
    pub carrier_frequency_hz: f64,
    pub reference_distance_m: f64,
    pub bandwidth_hz: f64,
    pub snir_threshold: f64,
    pub fading: Fading,
    pub noma: bool,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            tx_power_w: dbm_to_watts(30.0),
            noise_floor_w: dbm_to_watts(-100.0),
            path_loss_exponent: 2.0,
            carrier_frequency_hz: 900e6,
            reference_distance_m: 1.0,
            bandwidth_hz: 1.0,
            snir_threshold: db_to_linear(-5.1),
            fading: Fading::Rayleigh,
            noma: true,
        }
    }
}

impl ChannelModel {
    pub fn with_noma(mut self, noma: bool) -> Self {
        self.noma = noma;
        self
    }

    pub fn with_fading(mut self, fading: Fading) -> Self {
        self.fading = fading;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tx_power_w", self.tx_power_w),
            ("noise_floor_w", self.noise_floor_w),
            ("path_loss_exponent", self.path_loss_exponent),
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("reference_distance_m", self.reference_distance_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("snir_threshold", self.snir_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Mean received power at `distance` before fading, `(lambda/4pi)^alpha P_TX d^-alpha`
    /// with `d` clamped below at the reference distance.
    pub fn path_gain(&self, distance: f64) -> f64 {
        let c0 = (self.wavelength_m() / (4.0 * std::f64::consts::PI)).powf(self.path_loss_exponent);
        let d = distance.max(self.reference_distance_m);
        c0 * self.tx_power_w * d.powf(-self.path_loss_exponent)
    }

    pub fn rate(&self, snir: f64) -> f64 {
        self.bandwidth_hz * (1.0 + snir).log2()
    }
}

/// Received power at a BS `distance` meters away under power gain `fading`.
pub fn received_power(model: &ChannelModel, distance: f64, fading: f64) -> f64 {
    fading * model.path_gain(distance)
}
