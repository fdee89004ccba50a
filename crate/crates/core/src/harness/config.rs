//! Flat experiment configuration. Physical keys carry their unit in the
//! name; dBm and dB values are converted when the channel model is built.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::br::{BrConfig, Selection};
use crate::channel::{db_to_linear, dbm_to_watts, ChannelModel, Fading};
use crate::error::{Error, Result};
use crate::icnn::{AcquisitionConfig, CentralizedConfig, OptimizerKind, TrainConfig};
use crate::oracle::MAX_ORACLE_DEVICES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeploymentKind {
    Uniform,
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BsPlacement {
    Lloyd,
    /// A single base station at the origin.
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorKind {
    Oracle,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Br,
    Icnn,
    NelderMead,
    Random,
    HomogeneousGrid,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Br => "br",
            Method::Icnn => "icnn",
            Method::NelderMead => "nelder-mead",
            Method::Random => "random",
            Method::HomogeneousGrid => "homogeneous-grid",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Br, Method::Icnn, Method::NelderMead, Method::Random, Method::HomogeneousGrid]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer '{s}'")))
    }
}

/// How each run's starting policy is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Uniform on `[p_floor, 1]^N`.
    Random,
    /// `1 / (devices in the cell)` for every device.
    InverseCellSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub out_dir: String,

    pub deployment: DeploymentKind,
    pub num_devices: usize,
    pub area_half_side_m: f64,
    pub num_base_stations: usize,
    pub bs_placement: BsPlacement,
    pub lloyd_max_iters: usize,

    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    pub path_loss_exponent: f64,
    /// When non-empty, every deployment is run once per exponent listed here
    /// and `path_loss_exponent` is ignored.
    pub path_loss_sweep: Vec<f64>,
    pub carrier_frequency_hz: f64,
    pub reference_distance_m: f64,
    pub bandwidth_hz: f64,
    pub snir_threshold_db: f64,
    pub fading: Fading,
    pub noma: bool,
    /// Also run every job with the opposite decoding mode and report the gain.
    pub compare_noma: bool,

    pub evaluator: EvaluatorKind,
    pub oracle_fading_samples: usize,
    pub slots_per_evaluation: u64,
    pub probe_slots: u64,
    /// Slots used to re-evaluate each returned policy (Monte Carlo only).
    pub final_evaluation_slots: u64,

    pub deployments: usize,
    pub initializations: usize,
    pub init_mode: InitMode,

    pub optimizers: Vec<Method>,
    pub max_evaluations: u64,
    pub p_floor: f64,

    pub br_termination_tol: f64,
    pub br_selection: Selection,
    pub br_max_outer_iters: usize,

    pub icnn_ensemble_size: usize,
    pub icnn_rounds: usize,
    pub icnn_samples_per_round: usize,
    pub icnn_initial_samples: usize,
    pub icnn_hidden_layers: usize,
    pub icnn_hidden_width: usize,
    pub icnn_gamma: f64,
    pub icnn_optimizer: OptimizerKind,
    pub icnn_learning_rate: f64,
    pub icnn_batch_size: usize,
    pub icnn_epochs: usize,
    /// 0 means no cap beyond `icnn_epochs`.
    pub icnn_max_steps: usize,
    pub icnn_acquisition_steps: usize,

    pub homogeneous_points: usize,
    pub homogeneous_criterion: crate::baselines::MeanKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ChannelModel::default();
        let br = BrConfig::default();
        let icnn = CentralizedConfig::default();
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            out_dir: "out".into(),
            deployment: DeploymentKind::Uniform,
            num_devices: 8,
            area_half_side_m: 500.0,
            num_base_stations: 2,
            bs_placement: BsPlacement::Lloyd,
            lloyd_max_iters: 100,
            tx_power_dbm: 30.0,
            noise_floor_dbm: -100.0,
            path_loss_exponent: model.path_loss_exponent,
            path_loss_sweep: Vec::new(),
            carrier_frequency_hz: model.carrier_frequency_hz,
            reference_distance_m: model.reference_distance_m,
            bandwidth_hz: model.bandwidth_hz,
            snir_threshold_db: -5.1,
            fading: model.fading,
            noma: true,
            compare_noma: false,
            evaluator: EvaluatorKind::Oracle,
            oracle_fading_samples: 4000,
            slots_per_evaluation: 20_000,
            probe_slots: br.probe_slots,
            final_evaluation_slots: 200_000,
            deployments: 1,
            initializations: 1,
            init_mode: InitMode::Random,
            optimizers: vec![Method::Br],
            max_evaluations: 1000,
            p_floor: br.p_floor,
            br_termination_tol: br.termination_tol,
            br_selection: br.selection,
            br_max_outer_iters: br.max_outer_iters,
            icnn_ensemble_size: icnn.ensemble_size,
            icnn_rounds: icnn.rounds,
            icnn_samples_per_round: icnn.samples_per_round,
            icnn_initial_samples: icnn.initial_samples,
            icnn_hidden_layers: icnn.hidden.len(),
            icnn_hidden_width: icnn.hidden[0],
            icnn_gamma: icnn.gamma,
            icnn_optimizer: icnn.train.optimizer,
            icnn_learning_rate: icnn.train.learning_rate,
            icnn_batch_size: icnn.train.batch_size,
            icnn_epochs: icnn.train.epochs,
            icnn_max_steps: icnn.train.max_steps.unwrap_or(0),
            icnn_acquisition_steps: icnn.acquisition.steps,
            homogeneous_points: 100,
            homogeneous_criterion: crate::baselines::MeanKind::Arithmetic,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.optimizers.is_empty() {
            return bad("optimizer list is empty".into());
        }
        for (name, v) in [
            ("num_devices", self.num_devices),
            ("num_base_stations", self.num_base_stations),
            ("deployments", self.deployments),
            ("initializations", self.initializations),
            ("oracle_fading_samples", self.oracle_fading_samples),
            ("icnn_ensemble_size", self.icnn_ensemble_size),
            ("icnn_initial_samples", self.icnn_initial_samples),
            ("icnn_hidden_layers", self.icnn_hidden_layers),
            ("icnn_hidden_width", self.icnn_hidden_width),
            ("homogeneous_points", self.homogeneous_points),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [
            ("max_evaluations", self.max_evaluations),
            ("slots_per_evaluation", self.slots_per_evaluation),
            ("probe_slots", self.probe_slots),
            ("final_evaluation_slots", self.final_evaluation_slots),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.area_half_side_m > 0.0) {
            return bad("area_half_side_m must be positive".into());
        }
        if self.bs_placement == BsPlacement::Origin && self.num_base_stations != 1 {
            return bad("bs_placement = origin needs num_base_stations = 1".into());
        }
        if self.deployment == DeploymentKind::Mesh {
            let side = (self.num_devices as f64).sqrt().round() as usize;
            if side * side != self.num_devices {
                return bad(format!("mesh deployment needs a square device count, got {}", self.num_devices));
            }
        }
        if self.evaluator == EvaluatorKind::Oracle && self.num_devices > MAX_ORACLE_DEVICES {
            return bad(format!(
                "oracle evaluator supports at most {MAX_ORACLE_DEVICES} devices, got {}",
                self.num_devices
            ));
        }
        for alpha in self.path_loss_exponents() {
            let mut m = self.channel_model()?;
            m.path_loss_exponent = alpha;
            m.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.br_config().validate(self.num_devices).map_err(|e| Error::Config(e.to_string()))?;
        self.icnn_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn path_loss_exponents(&self) -> Vec<f64> {
        if self.path_loss_sweep.is_empty() {
            vec![self.path_loss_exponent]
        } else {
            self.path_loss_sweep.clone()
        }
    }

    /// Channel model with the configured NOMA flag and base path-loss exponent.
    pub fn channel_model(&self) -> Result<ChannelModel> {
        Ok(ChannelModel {
            tx_power_w: dbm_to_watts(self.tx_power_dbm),
            noise_floor_w: dbm_to_watts(self.noise_floor_dbm),
            path_loss_exponent: self.path_loss_exponent,
            carrier_frequency_hz: self.carrier_frequency_hz,
            reference_distance_m: self.reference_distance_m,
            bandwidth_hz: self.bandwidth_hz,
            snir_threshold: db_to_linear(self.snir_threshold_db),
            fading: self.fading,
            noma: self.noma,
        })
    }

    pub fn br_config(&self) -> BrConfig {
        BrConfig {
            termination_tol: self.br_termination_tol,
            p_floor: self.p_floor,
            probe_slots: self.probe_slots,
            max_outer_iters: self.br_max_outer_iters,
            selection: self.br_selection,
            max_evaluations: Some(self.max_evaluations),
            ..BrConfig::default()
        }
    }

    pub fn icnn_config(&self) -> CentralizedConfig {
        CentralizedConfig {
            ensemble_size: self.icnn_ensemble_size,
            rounds: self.icnn_rounds,
            samples_per_round: self.icnn_samples_per_round,
            initial_samples: self.icnn_initial_samples,
            hidden: vec![self.icnn_hidden_width; self.icnn_hidden_layers],
            gamma: self.icnn_gamma,
            p_floor: self.p_floor,
            beta_max: 1.0,
            train: TrainConfig {
                optimizer: self.icnn_optimizer,
                learning_rate: self.icnn_learning_rate,
                batch_size: self.icnn_batch_size,
                epochs: self.icnn_epochs,
                max_steps: (self.icnn_max_steps > 0).then_some(self.icnn_max_steps),
                ..TrainConfig::default()
            },
            acquisition: AcquisitionConfig {
                steps: self.icnn_acquisition_steps,
                ..AcquisitionConfig::default()
            },
        }
    }
}
