//! Experiment driver: builds deployments and environments, runs the
//! optimizer matrix in parallel and writes traces, heatmaps and a summary.

mod config;
pub mod verify;

pub use config::{BsPlacement, DeploymentKind, EvaluatorKind, ExperimentConfig, InitMode, Method};

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{homogeneous_grid_search, nelder_mead_maximize, random_search_maximize, OptimizerBudget, OptimizerTrace};
use crate::br::{run_algorithm2, BrOutcome};
use crate::channel::{ChannelModel, Network, RateEstimate};
use crate::env::{MonteCarloEnv, OracleEnv, RateEnvironment};
use crate::error::{Error, Result};
use crate::icnn::run_algorithm1;
use crate::metrics::{approximation_ratio, jain_fairness, noma_gain_from_objectives};
use crate::oracle::{build_conditional_table, ConditionalRateTable};
use crate::rng::{child_rng, derive_seed, rng_from_seed};
use crate::topology::{generate_mesh_deployment, generate_uniform_deployment, place_bs_lloyd, Point2D, Topology};

/// Builds deployment `index` of the experiment.
pub fn build_topology(cfg: &ExperimentConfig, index: usize) -> Result<Topology> {
    let seed = derive_seed(cfg.seed, 0x7090 + index as u64);
    let devices = match cfg.deployment {
        DeploymentKind::Uniform => generate_uniform_deployment(cfg.num_devices, cfg.area_half_side_m, seed)?,
        DeploymentKind::Mesh => generate_mesh_deployment(cfg.num_devices, cfg.area_half_side_m)?,
    };
    let bs = match cfg.bs_placement {
        BsPlacement::Origin => vec![Point2D::ORIGIN],
        BsPlacement::Lloyd => place_bs_lloyd(&devices, cfg.num_base_stations, seed, cfg.lloyd_max_iters)?,
    };
    Topology::new(devices, bs)
}

/// Starting policy for `(deployment, init)`; shared by every optimizer and
/// decoding mode.
pub fn initial_policy(cfg: &ExperimentConfig, topology: &Topology, deployment: usize, init: usize) -> Vec<f64> {
    match cfg.init_mode {
        InitMode::Random => {
            let mut rng = child_rng(derive_seed(cfg.seed, 0x1417 + deployment as u64), init as u64);
            (0..topology.num_devices())
                .map(|_| rng.random_range(cfg.p_floor..=1.0))
                .collect()
        }
        InitMode::InverseCellSize => {
            let cells = topology.cells();
            topology
                .association()
                .iter()
                .map(|&m| (1.0 / cells[m].len() as f64).max(cfg.p_floor))
                .collect()
        }
    }
}

/// Deployment, path-loss exponent and decoding mode shared by a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupKey {
    pub path_loss_exponent: f64,
    pub deployment: usize,
    pub noma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub group: usize,
    pub init: usize,
    pub optimizer: Method,
    /// Best objective seen in the optimizer's own evaluations.
    pub objective: f64,
    /// Objective of the returned policy, exact or re-estimated.
    pub final_objective: f64,
    pub evaluations: u64,
    pub policy: Vec<f64>,
    pub rates: Vec<f64>,
    pub jain_index: Option<f64>,
    pub final_approximation_ratio: f64,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: GroupKey,
    /// Best objective any evaluation reached in this group.
    pub reference_objective: f64,
    pub best_run: usize,
    pub heatmap_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub optimizer: Method,
    pub noma: bool,
    pub path_loss_exponent: f64,
    pub runs: usize,
    pub mean_final_ratio: f64,
    pub mean_final_objective: f64,
    pub mean_jain_index: Option<f64>,
    /// Mean over runs of the approximation ratio at each evaluation index.
    pub mean_ratio_curve: Vec<f64>,
    /// First evaluation index (1-based) where the mean curve reaches 0.99.
    pub evaluations_to_099: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NomaGain {
    pub path_loss_exponent: f64,
    pub deployment: usize,
    pub optimizer: Method,
    pub objective_with: f64,
    pub objective_without: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub seed: u64,
    pub groups: Vec<GroupSummary>,
    pub runs: Vec<RunRecord>,
    pub optimizers: Vec<OptimizerSummary>,
    pub noma_gains: Vec<NomaGain>,
}

impl ExperimentSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Group {
    key: GroupKey,
    model: ChannelModel,
    topology: Topology,
    table: Option<ConditionalRateTable>,
}

struct Job {
    run_id: usize,
    group: usize,
    init: usize,
    method: Method,
    seed: u64,
}

struct JobResult {
    objective: f64,
    final_objective: f64,
    evaluations: u64,
    policy: Vec<f64>,
    rates: Vec<f64>,
    trace: OptimizerTrace,
}

/// Objective after every evaluation of a BR run (the incumbent objective
/// is repeated through probing evaluations).
fn br_trace(out: &BrOutcome) -> OptimizerTrace {
    let mut values = vec![out.trace.initial_objective];
    let mut current = out.trace.initial_objective;
    for s in &out.trace.steps {
        while (values.len() as u64) < s.evaluations.saturating_sub(1) {
            values.push(current);
        }
        current = s.objective;
        while (values.len() as u64) < s.evaluations {
            values.push(current);
        }
    }
    OptimizerTrace::from_objectives(values)
}

fn make_env(cfg: &ExperimentConfig, g: &Group, seed: u64) -> Result<Box<dyn RateEnvironment>> {
    Ok(match &g.table {
        Some(t) => Box::new(OracleEnv::new(t.clone())),
        None => Box::new(MonteCarloEnv::new(
            Network::new(g.model.clone(), g.topology.clone())?,
            cfg.slots_per_evaluation,
            cfg.probe_slots,
            seed,
        )?),
    })
}

fn final_estimate(cfg: &ExperimentConfig, g: &Group, policy: &[f64], seed: u64) -> Result<RateEstimate> {
    match &g.table {
        Some(t) => Ok(RateEstimate::exact(t.expected_rates(policy))),
        None => Network::new(g.model.clone(), g.topology.clone())?.estimate_expected_rates(
            policy,
            cfg.final_evaluation_slots,
            &mut rng_from_seed(derive_seed(seed, 0xF1)),
        ),
    }
}

fn run_job(cfg: &ExperimentConfig, g: &Group, job: &Job) -> Result<JobResult> {
    let mut env = make_env(cfg, g, job.seed)?;
    let init = initial_policy(cfg, &g.topology, g.key.deployment, job.init);
    let (policy, objective, trace) = match job.method {
        Method::Br => {
            let out = run_algorithm2(env.as_mut(), &init, &cfg.br_config(), job.seed)?;
            let trace = br_trace(&out);
            (out.policy, out.objective, trace)
        }
        Method::Icnn => {
            let mut icnn = cfg.icnn_config();
            let budget = cfg.max_evaluations as usize;
            if icnn.total_evaluations() > budget {
                // keep the exploration schedule, drop whole rounds
                let rounds = budget.saturating_sub(icnn.initial_samples) / icnn.samples_per_round.max(1);
                icnn.rounds = rounds;
            }
            let out = run_algorithm1(env.as_mut(), &icnn, job.seed)?;
            let trace = OptimizerTrace::from_objectives(out.history.iter().map(|s| s.objective));
            (out.policy, out.objective, trace)
        }
        Method::NelderMead | Method::Random => {
            let budget = OptimizerBudget {
                max_evaluations: cfg.max_evaluations,
                seed: job.seed,
                initial_policy: Some(init),
                p_floor: cfg.p_floor,
            };
            let out = if job.method == Method::NelderMead {
                nelder_mead_maximize(env.as_mut(), &budget)?
            } else {
                random_search_maximize(env.as_mut(), &budget)?
            };
            (out.policy, out.objective, out.trace)
        }
        Method::HomogeneousGrid => {
            let out = homogeneous_grid_search(env.as_mut(), cfg.homogeneous_points, cfg.p_floor, cfg.homogeneous_criterion)?;
            let n = g.topology.num_devices();
            (vec![out.p; n], out.objective, out.trace)
        }
    };
    let est = final_estimate(cfg, g, &policy, job.seed)?;
    Ok(JobResult {
        objective,
        final_objective: est.objective().value,
        evaluations: env.evaluations(),
        policy,
        rates: est.mean_rate,
        trace,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn build_groups(cfg: &ExperimentConfig) -> Result<Vec<Group>> {
    let base = cfg.channel_model()?;
    let modes: Vec<bool> = if cfg.compare_noma { vec![cfg.noma, !cfg.noma] } else { vec![cfg.noma] };
    let mut specs = Vec::new();
    for alpha in cfg.path_loss_exponents() {
        for d in 0..cfg.deployments {
            for &noma in &modes {
                specs.push(GroupKey {
                    path_loss_exponent: alpha,
                    deployment: d,
                    noma,
                });
            }
        }
    }
    specs
        .into_par_iter()
        .map(|key| {
            let mut model = base.clone().with_noma(key.noma);
            model.path_loss_exponent = key.path_loss_exponent;
            let topology = build_topology(cfg, key.deployment)?;
            let table = match cfg.evaluator {
                EvaluatorKind::Oracle => Some(build_conditional_table(
                    &model,
                    &topology,
                    cfg.oracle_fading_samples,
                    derive_seed(cfg.seed, 0x7AB + key.deployment as u64),
                )?),
                EvaluatorKind::MonteCarlo => None,
            };
            Ok(Group {
                key,
                model,
                topology,
                table,
            })
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs the configured matrix and writes `runs/NNN.csv`, one heatmap per
/// group, `config.toml` and `summary.json` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    write_file(&out_dir.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;

    let groups = build_groups(cfg)?;
    let mut jobs = Vec::new();
    for (gi, _) in groups.iter().enumerate() {
        for init in 0..cfg.initializations {
            for (mi, &method) in cfg.optimizers.iter().enumerate() {
                let run_id = jobs.len();
                jobs.push(Job {
                    run_id,
                    group: gi,
                    init,
                    method,
                    seed: derive_seed(derive_seed(cfg.seed, 0x5EED), (init * 64 + mi) as u64 + 4096 * gi as u64),
                });
            }
        }
    }

    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|job| {
            let r = run_job(cfg, &groups[job.group], job)?;
            let path = runs_dir.join(format!("{:03}.csv", job.run_id));
            let mut buf = Vec::new();
            r.trace.write_csv(&mut buf)?;
            write_file(&path, &buf)?;
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let mut group_summaries = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        let (best_run, _) = jobs
            .iter()
            .zip(&results)
            .filter(|(j, _)| j.group == gi)
            .map(|(j, r)| (j.run_id, r.objective))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let reference = jobs
            .iter()
            .zip(&results)
            .filter(|(j, _)| j.group == gi)
            .flat_map(|(_, r)| r.trace.rows.last().map(|t| t.best_so_far))
            .fold(f64::NEG_INFINITY, f64::max);
        let heatmap_file = format!("heatmap_{gi:03}.csv");
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(["device_id", "x", "y", "p"])?;
        for (i, (pt, p)) in g.topology.devices().iter().zip(&results[best_run].policy).enumerate() {
            wr.serialize((i, pt.x, pt.y, p))?;
        }
        let bytes = wr.into_inner().map_err(|e| Error::io(&heatmap_file, e.into_error()))?;
        write_file(&out_dir.join(&heatmap_file), &bytes)?;
        group_summaries.push(GroupSummary {
            key: g.key.clone(),
            reference_objective: reference,
            best_run,
            heatmap_file,
        });
    }

    let mut runs = Vec::with_capacity(jobs.len());
    let mut curves = Vec::with_capacity(jobs.len());
    for (job, r) in jobs.iter().zip(&results) {
        let reference = group_summaries[job.group].reference_objective;
        let curve = approximation_ratio(&r.trace.rows.iter().map(|t| t.objective).collect::<Vec<_>>(), reference)?;
        runs.push(RunRecord {
            run_id: job.run_id,
            group: job.group,
            init: job.init,
            optimizer: job.method,
            objective: r.objective,
            final_objective: r.final_objective,
            evaluations: r.evaluations,
            policy: r.policy.clone(),
            rates: r.rates.clone(),
            jain_index: jain_fairness(&r.rates).ok(),
            final_approximation_ratio: *curve.last().unwrap_or(&0.0),
            trace_file: format!("runs/{:03}.csv", job.run_id),
        });
        curves.push(curve);
    }

    let mut optimizers = Vec::new();
    for alpha in cfg.path_loss_exponents() {
        let modes: Vec<bool> = if cfg.compare_noma { vec![cfg.noma, !cfg.noma] } else { vec![cfg.noma] };
        for noma in modes {
            for &method in &cfg.optimizers {
                let idx: Vec<usize> = jobs
                    .iter()
                    .filter(|j| {
                        let k = &groups[j.group].key;
                        j.method == method && k.noma == noma && k.path_loss_exponent == alpha
                    })
                    .map(|j| j.run_id)
                    .collect();
                let len = idx.iter().map(|&i| curves[i].len()).max().unwrap_or(0);
                let mean_ratio_curve: Vec<f64> = (0..len)
                    .map(|t| mean(idx.iter().map(|&i| curves[i][t.min(curves[i].len() - 1)])))
                    .collect();
                let jains: Vec<f64> = idx.iter().filter_map(|&i| runs[i].jain_index).collect();
                optimizers.push(OptimizerSummary {
                    optimizer: method,
                    noma,
                    path_loss_exponent: alpha,
                    runs: idx.len(),
                    mean_final_ratio: mean(idx.iter().map(|&i| runs[i].final_approximation_ratio)),
                    mean_final_objective: mean(idx.iter().map(|&i| runs[i].final_objective)),
                    mean_jain_index: (!jains.is_empty()).then(|| mean(jains.iter().copied())),
                    evaluations_to_099: mean_ratio_curve.iter().position(|&r| r >= 0.99).map(|t| t as u64 + 1),
                    mean_ratio_curve,
                });
            }
        }
    }

    let mut noma_gains = Vec::new();
    if cfg.compare_noma {
        for alpha in cfg.path_loss_exponents() {
            for d in 0..cfg.deployments {
                for &method in &cfg.optimizers {
                    let best = |noma: bool| {
                        runs.iter()
                            .filter(|r| {
                                let k = &groups[r.group].key;
                                r.optimizer == method && k.noma == noma && k.deployment == d && k.path_loss_exponent == alpha
                            })
                            .map(|r| r.final_objective)
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    let (with, without) = (best(true), best(false));
                    noma_gains.push(NomaGain {
                        path_loss_exponent: alpha,
                        deployment: d,
                        optimizer: method,
                        objective_with: with,
                        objective_without: without,
                        gain: noma_gain_from_objectives(with, without),
                    });
                }
            }
        }
    }

    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        groups: group_summaries,
        runs,
        optimizers,
        noma_gains,
    };
    write_file(&out_dir.join("summary.json"), summary.to_json()?.as_bytes())?;
    Ok(summary)
}

/// `out_dir` from the config, relative to the current directory.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(&cfg.out_dir)
}
