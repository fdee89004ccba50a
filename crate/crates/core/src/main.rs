use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use noma_aloha::baselines::{homogeneous_grid_search, nelder_mead_maximize, random_search_maximize, OptimizerBudget};
use noma_aloha::br::run_algorithm2;
use noma_aloha::channel::{Fading, Network};
use noma_aloha::env::{MonteCarloEnv, OracleEnv, RateEnvironment};
use noma_aloha::harness::verify::{run_suite, Suite};
use noma_aloha::harness::{
    build_topology, run_experiment, BsPlacement, DeploymentKind, ExperimentConfig, Method,
};
use noma_aloha::icnn::run_algorithm1;
use noma_aloha::metrics::jain_fairness;
use noma_aloha::oracle::build_conditional_table;
use noma_aloha::rng::{derive_seed, rng_from_seed};
use noma_aloha::topology::Topology;
use noma_aloha::{Error, Result};

#[derive(Parser)]
#[command(name = "noma-aloha", version, about = "Slotted-Aloha NOMA network simulator and optimizers")]
struct Cli {
    /// Master seed (0 when omitted; an experiment falls back to its config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (all cores when omitted).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeploymentArg {
    Uniform,
    Mesh,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorArg {
    Oracle,
    MonteCarlo,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Br,
    Icnn,
    NelderMead,
    Random,
    HomogeneousGrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Oracle,
    Concavity,
    Contraction,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deployment and write it as topology.json.
    Topology {
        /// Experiment config supplying defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        deployment: Option<DeploymentArg>,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        base_stations: Option<usize>,
        #[arg(long)]
        half_side_m: Option<f64>,
        /// Single base station at the origin instead of Lloyd placement.
        #[arg(long)]
        bs_at_origin: bool,
    },
    /// Estimate expected rates for a policy and write rates.csv.
    Simulate {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated per-device probabilities.
        #[arg(long, conflicts_with = "p")]
        policy: Option<String>,
        /// One probability shared by every device.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        slots: u64,
        #[arg(long)]
        no_noma: bool,
        #[arg(long)]
        no_fading: bool,
    },
    /// Optimize the policy of one deployment.
    Optimize {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "oracle")]
        evaluator: EvaluatorArg,
        /// Objective evaluations allowed.
        #[arg(long)]
        budget: Option<u64>,
        /// Comma-separated starting policy (random when omitted).
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        no_noma: bool,
    },
    /// Run an experiment config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run self-check suites.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("'{t}': {e}")))
        })
        .collect()
}

fn read_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Topology::from_json(&text)
}

fn write(out: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let path = out.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::Io { path, source: e })
}

fn write_summary<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    write(out, "summary.json", serde_json::to_string_pretty(value)?.as_bytes())
}

#[derive(Serialize)]
struct OptimizeSummary {
    method: &'static str,
    objective: f64,
    evaluations: u64,
    policy: Vec<f64>,
    rates: Vec<f64>,
    jain_index: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_path();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Topology {
            config,
            deployment,
            devices,
            base_stations,
            half_side_m,
            bs_at_origin,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.seed = seed;
            if let Some(d) = deployment {
                cfg.deployment = match d {
                    DeploymentArg::Uniform => DeploymentKind::Uniform,
                    DeploymentArg::Mesh => DeploymentKind::Mesh,
                };
            }
            cfg.num_devices = devices.unwrap_or(cfg.num_devices);
            cfg.num_base_stations = base_stations.unwrap_or(cfg.num_base_stations);
            cfg.area_half_side_m = half_side_m.unwrap_or(cfg.area_half_side_m);
            if bs_at_origin {
                cfg.bs_placement = BsPlacement::Origin;
                cfg.num_base_stations = 1;
            }
            let topo = build_topology(&cfg, 0)?;
            let json = topo.to_json()?;
            write(out, "topology.json", json.as_bytes())?;
            let cells: Vec<usize> = topo.cells().iter().map(Vec::len).collect();
            println!("{} devices, {} base stations, cell sizes {cells:?}", topo.num_devices(), topo.num_base_stations());
            write_summary(out, &topo)?;
        }
        Command::Simulate {
            topology,
            config,
            policy,
            p,
            slots,
            no_noma,
            no_fading,
        } => {
            let cfg = load_config(&config)?;
            let topo = read_topology(&topology)?;
            let n = topo.num_devices();
            let probs = match (policy, p) {
                (Some(s), _) => parse_list(&s)?,
                (None, Some(v)) => vec![v; n],
                (None, None) => return Err(Error::InvalidArgument("give --policy or --p".into())),
            };
            let mut model = cfg.channel_model()?.with_noma(cfg.noma && !no_noma);
            if no_fading {
                model = model.with_fading(Fading::None);
            }
            let net = Network::new(model, topo)?;
            let est = net.estimate_expected_rates(&probs, slots, &mut rng_from_seed(seed))?;
            let mut buf = Vec::new();
            est.write_csv(&mut buf)?;
            write(out, "rates.csv", &buf)?;
            let obj = est.objective();
            println!("objective {:.6} (geometric mean rate {:.6})", obj.value, obj.geometric_mean());
            write_summary(out, &est)?;
        }
        Command::Optimize {
            topology,
            config,
            method,
            evaluator,
            budget,
            init,
            no_noma,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(b) = budget {
                cfg.max_evaluations = b;
            }
            let topo = read_topology(&topology)?;
            let n = topo.num_devices();
            let model = cfg.channel_model()?.with_noma(cfg.noma && !no_noma);
            let mut env: Box<dyn RateEnvironment> = match evaluator {
                EvaluatorArg::Oracle => Box::new(OracleEnv::new(build_conditional_table(
                    &model,
                    &topo,
                    cfg.oracle_fading_samples,
                    derive_seed(seed, 1),
                )?)),
                EvaluatorArg::MonteCarlo => Box::new(MonteCarloEnv::new(
                    Network::new(model.clone(), topo.clone())?,
                    cfg.slots_per_evaluation,
                    cfg.probe_slots,
                    derive_seed(seed, 2),
                )?),
            };
            let init = match init {
                Some(s) => parse_list(&s)?,
                None => {
                    use rand::Rng;
                    let mut rng = rng_from_seed(derive_seed(seed, 3));
                    (0..n).map(|_| rng.random_range(cfg.p_floor..=1.0)).collect()
                }
            };
            let m = match method {
                MethodArg::Br => Method::Br,
                MethodArg::Icnn => Method::Icnn,
                MethodArg::NelderMead => Method::NelderMead,
                MethodArg::Random => Method::Random,
                MethodArg::HomogeneousGrid => Method::HomogeneousGrid,
            };
            let budget = OptimizerBudget {
                max_evaluations: cfg.max_evaluations,
                seed: seed,
                initial_policy: Some(init.clone()),
                p_floor: cfg.p_floor,
            };
            let (policy, objective, trace_csv) = match m {
                Method::Br => {
                    let r = run_algorithm2(env.as_mut(), &init, &cfg.br_config(), seed)?;
                    let mut buf = Vec::new();
                    r.trace.write_csv(&mut buf)?;
                    (r.policy, r.objective, buf)
                }
                Method::Icnn => {
                    let r = run_algorithm1(env.as_mut(), &cfg.icnn_config(), seed)?;
                    let mut buf = Vec::new();
                    r.write_history_csv(&mut buf)?;
                    r.write_checkpoints(&out.join("checkpoints"))?;
                    (r.policy, r.objective, buf)
                }
                Method::NelderMead | Method::Random => {
                    let r = if m == Method::NelderMead {
                        nelder_mead_maximize(env.as_mut(), &budget)?
                    } else {
                        random_search_maximize(env.as_mut(), &budget)?
                    };
                    let mut buf = Vec::new();
                    r.trace.write_csv(&mut buf)?;
                    (r.policy, r.objective, buf)
                }
                Method::HomogeneousGrid => {
                    let r = homogeneous_grid_search(env.as_mut(), cfg.homogeneous_points, cfg.p_floor, cfg.homogeneous_criterion)?;
                    let mut buf = Vec::new();
                    r.trace.write_csv(&mut buf)?;
                    (vec![r.p; n], r.objective, buf)
                }
            };
            let evaluations = env.evaluations();
            let rates = env.estimate(&policy)?.mean_rate;
            write(out, "trace.csv", &trace_csv)?;
            println!("{}: objective {objective:.6} after {evaluations} evaluations", m.name());
            write_summary(
                out,
                &OptimizeSummary {
                    method: m.name(),
                    objective,
                    evaluations,
                    jain_index: jain_fairness(&rates).ok(),
                    policy,
                    rates,
                },
            )?;
        }
        Command::Experiment { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if cli.out != Path::new(".") {
                cfg.out_dir = cli.out.to_string_lossy().into_owned();
            }
            let summary = run_experiment(&cfg, Path::new(&cfg.out_dir))?;
            for o in &summary.optimizers {
                println!(
                    "{:<17} noma={:<5} alpha={} runs={} mean ratio {:.4} mean objective {:.6}",
                    o.optimizer.name(),
                    o.noma,
                    o.path_loss_exponent,
                    o.runs,
                    o.mean_final_ratio,
                    o.mean_final_objective
                );
            }
        }
        Command::Verify { suite } => {
            let suites = match suite {
                SuiteArg::Oracle => vec![Suite::Oracle],
                SuiteArg::Concavity => vec![Suite::Concavity],
                SuiteArg::Contraction => vec![Suite::Contraction],
                SuiteArg::All => vec![Suite::Oracle, Suite::Concavity, Suite::Contraction],
            };
            let reports = suites
                .into_iter()
                .map(|s| run_suite(s, seed))
                .collect::<Result<Vec<_>>>()?;
            for r in &reports {
                println!(
                    "{:?}: {} cases, {} failures, worst {:.4} -> {}",
                    r.suite,
                    r.cases,
                    r.failures,
                    r.worst,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            write_summary(out, &reports)?;
            if reports.iter().any(|r| !r.pass) {
                return Err(Error::InvalidArgument("verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
