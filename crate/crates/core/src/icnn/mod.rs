//! Centralized optimization with an ensemble of input-concave networks and
//! an upper-confidence-bound acquisition.

mod ensemble;
mod net;
mod train;

pub use ensemble::{mixture, ucb_maximize, uniform_policies, AcquisitionConfig, Ensemble, Prediction, Surrogate};
pub use net::{elu, input_gradients, nll_loss, IcnnParams, InputGradients, Layer};
pub use train::{train_network, OptimizerKind, OptimizerState, TrainConfig, TrainLog};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::DEFAULT_P_FLOOR;
use crate::env::{objective_std_error, RateEnvironment};
use crate::error::{Error, Result};
use crate::rng::{child_rng, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentralizedConfig {
    pub ensemble_size: usize,
    pub rounds: usize,
    pub samples_per_round: usize,
    pub initial_samples: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub p_floor: f64,
    /// Exploration weight in round 1; it falls linearly to 0 in the last round.
    pub beta_max: f64,
    pub train: TrainConfig,
    pub acquisition: AcquisitionConfig,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        CentralizedConfig {
            ensemble_size: 10,
            rounds: 10,
            samples_per_round: 100,
            initial_samples: 100,
            hidden: vec![128; 3],
            gamma: 1.0,
            p_floor: DEFAULT_P_FLOOR,
            beta_max: 1.0,
            train: TrainConfig::default(),
            acquisition: AcquisitionConfig::default(),
        }
    }
}

impl CentralizedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 || self.initial_samples == 0 {
            return Err(Error::invalid("ensemble_size and initial_samples must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be nonempty and positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must be in (0, 1]"));
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1.0) || !(self.beta_max >= 0.0) {
            return Err(Error::invalid("p_floor must be in (0, 1] and beta_max nonnegative"));
        }
        self.train.validate()
    }

    /// Exploration weight of round `t` (1-based).
    pub fn beta(&self, t: usize) -> f64 {
        if self.rounds <= 1 {
            return 0.0;
        }
        self.beta_max * (self.rounds - t) as f64 / (self.rounds - 1) as f64
    }

    /// Objective evaluations one run makes.
    pub fn total_evaluations(&self) -> usize {
        self.initial_samples + self.rounds * self.samples_per_round
    }
}

/// One evaluated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// 0 for the initial design.
    pub round: usize,
    pub policy: Vec<f64>,
    pub objective: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub round: usize,
    pub member: usize,
    /// `None` once the member has failed.
    pub log: Option<TrainLog>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedOutcome {
    /// Best policy in the sample history.
    pub policy: Vec<f64>,
    pub objective: f64,
    pub history: Vec<Sample>,
    pub training: Vec<MemberRecord>,
    /// Surviving members after the last round.
    pub ensemble: Ensemble,
    pub evaluations: u64,
}

impl CentralizedOutcome {
    /// Writes `round,policy,objective,std_error`; the policy is a JSON array.
    pub fn write_history_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["round", "policy", "objective", "std_error"])?;
        for s in &self.history {
            let policy = serde_json::to_string(&s.policy)?;
            wr.write_record([
                s.round.to_string(),
                policy,
                s.objective.to_string(),
                s.std_error.to_string(),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// One `member_MM.json` checkpoint per surviving network.
    pub fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (m, params) in self.ensemble.members.iter().enumerate() {
            let path = dir.join(format!("member_{m:02}.json"));
            std::fs::write(&path, params.to_checkpoint_json()?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn evaluate(env: &mut dyn RateEnvironment, policy: Vec<f64>, round: usize) -> Result<Sample> {
    let est = env.estimate(&policy)?;
    Ok(Sample {
        round,
        objective: est.objective().value,
        std_error: objective_std_error(&est),
        policy,
    })
}

/// Sample mean and standard deviation used to put targets on a unit scale.
fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Runs the sample, train, acquire loop. Members that fail to train are
/// dropped; the run fails only when none remain.
pub fn run_algorithm1(env: &mut dyn RateEnvironment, config: &CentralizedConfig, seed: u64) -> Result<CentralizedOutcome> {
    config.validate()?;
    let n = env.num_devices();
    let start_evals = env.evaluations();
    let mut sample_rng = child_rng(seed, 0);
    let mut history = Vec::with_capacity(config.total_evaluations());
    let initial = uniform_policies(config.initial_samples, n, config.p_floor, &mut sample_rng);
    for row in initial.rows() {
        history.push(evaluate(env, row.to_vec(), 0)?);
    }

    let y0: Vec<f64> = history.iter().map(|s| s.objective).collect();
    let (shift, scale) = standardization(&y0);
    let mut members: Vec<Option<IcnnParams>> = Vec::with_capacity(config.ensemble_size);
    let mut train_rngs = Vec::with_capacity(config.ensemble_size);
    for m in 0..config.ensemble_size {
        let member_seed = derive_seed(seed, 1 + m as u64);
        let mut rng = child_rng(member_seed, 0);
        let mut p = IcnnParams::init(n, &config.hidden, config.gamma, &mut rng)?;
        p.output_shift = shift;
        p.output_scale = scale;
        members.push(Some(p));
        train_rngs.push((child_rng(member_seed, 1), OptimizerState::default()));
    }

    let mut training = Vec::new();
    for t in 1..=config.rounds {
        let x = Array2::from_shape_fn((history.len(), n), |(r, c)| history[r].policy[c]);
        let y: Vec<f64> = history.iter().map(|s| s.objective).collect();
        for (m, slot) in members.iter_mut().enumerate() {
            let Some(params) = slot.as_mut() else { continue };
            let (rng, state) = &mut train_rngs[m];
            match train_network(params, state, x.view(), &y, &config.train, rng) {
                Ok(log) => training.push(MemberRecord {
                    round: t,
                    member: m,
                    log: Some(log),
                    error: None,
                }),
                Err(Error::TrainingFailed(msg)) => {
                    training.push(MemberRecord {
                        round: t,
                        member: m,
                        log: None,
                        error: Some(msg),
                    });
                    *slot = None;
                }
                Err(e) => return Err(e),
            }
        }
        let alive: Vec<IcnnParams> = members.iter().flatten().cloned().collect();
        if alive.is_empty() {
            return Err(Error::TrainingFailed(format!("every ensemble member failed by round {t}")));
        }
        let ensemble = Ensemble::new(alive)?;
        let mut round_rng = child_rng(seed, 1_000 + t as u64);
        let starts = uniform_policies(config.samples_per_round, n, config.p_floor, &mut round_rng);
        let found = ucb_maximize(&ensemble, config.beta(t), starts.view(), config.p_floor, &config.acquisition)?;
        let mut batch: Vec<Vec<f64>> = found
            .into_iter()
            .take(config.samples_per_round)
            .map(|(p, _)| p)
            .collect();
        let fill = config.samples_per_round - batch.len();
        batch.extend(
            uniform_policies(fill, n, config.p_floor, &mut round_rng)
                .rows()
                .into_iter()
                .map(|r| r.to_vec()),
        );
        for p in batch {
            history.push(evaluate(env, p, t)?);
        }
    }

    let best = history
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.objective.total_cmp(&b.objective).then(ib.cmp(ia)))
        .map(|(_, s)| s.clone())
        .unwrap();
    let ensemble = Ensemble::new(members.into_iter().flatten().collect())?;
    Ok(CentralizedOutcome {
        policy: best.policy,
        objective: best.objective,
        history,
        training,
        ensemble,
        evaluations: env.evaluations() - start_evals,
    })
}
