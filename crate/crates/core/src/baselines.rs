//! Derivative-free baseline maximizers over `[p_floor, 1]^N`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{check_probabilities, DEFAULT_P_FLOOR};
use crate::env::RateEnvironment;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerBudget {
    pub max_evaluations: u64,
    pub seed: u64,
    /// Starting point; the box center when absent.
    pub initial_policy: Option<Vec<f64>>,
    pub p_floor: f64,
}

impl OptimizerBudget {
    pub fn new(max_evaluations: u64, seed: u64) -> Self {
        OptimizerBudget {
            max_evaluations,
            seed,
            initial_policy: None,
            p_floor: DEFAULT_P_FLOOR,
        }
    }

    pub fn with_initial(mut self, p: Vec<f64>) -> Self {
        self.initial_policy = Some(p);
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if self.max_evaluations == 0 {
            return Err(Error::invalid("max_evaluations must be >= 1"));
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1.0) {
            return Err(Error::invalid("p_floor must be in (0, 1]"));
        }
        if let Some(p) = &self.initial_policy {
            check_probabilities(p, n)?;
        }
        Ok(())
    }

    fn start(&self, n: usize) -> Vec<f64> {
        match &self.initial_policy {
            Some(p) => p.iter().map(|x| x.clamp(self.p_floor, 1.0)).collect(),
            None => vec![0.5 * (self.p_floor + 1.0); n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based.
    pub evaluation_index: u64,
    pub objective: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
}

impl OptimizerTrace {
    fn push(&mut self, objective: f64) {
        let prev = self.rows.last().map_or(f64::NEG_INFINITY, |r| r.best_so_far);
        self.rows.push(TraceRow {
            evaluation_index: self.rows.len() as u64 + 1,
            objective,
            best_so_far: prev.max(objective),
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best_so_far).collect()
    }

    /// Builds a trace from raw objective values in evaluation order.
    pub fn from_objectives(values: impl IntoIterator<Item = f64>) -> Self {
        let mut t = OptimizerTrace::default();
        values.into_iter().for_each(|v| t.push(v));
        t
    }

    /// Writes `evaluation_index,objective,best_so_far`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(OptimizerTrace { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub policy: Vec<f64>,
    pub objective: f64,
    pub trace: OptimizerTrace,
}

/// Budgeted objective calls that record the trace and the incumbent.
struct Counter<F> {
    f: F,
    limit: u64,
    trace: OptimizerTrace,
    best: Option<(f64, Vec<f64>)>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counter<F> {
    fn exhausted(&self) -> bool {
        self.trace.len() as u64 >= self.limit
    }

    /// `None` once the budget is spent.
    fn eval(&mut self, x: &[f64]) -> Result<Option<f64>> {
        if self.exhausted() {
            return Ok(None);
        }
        let v = (self.f)(x)?;
        self.trace.push(v);
        if self.best.as_ref().is_none_or(|(b, _)| v > *b) {
            self.best = Some((v, x.to_vec()));
        }
        Ok(Some(v))
    }

    fn finish(self) -> BaselineOutcome {
        let (objective, policy) = self.best.expect("at least one evaluation");
        BaselineOutcome {
            policy,
            objective,
            trace: self.trace,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
const MIN_DIAMETER: f64 = 1e-9;
const INITIAL_STEP: f64 = 0.1;

fn objective_of(env: &mut dyn RateEnvironment) -> impl FnMut(&[f64]) -> Result<f64> + '_ {
    move |p| Ok(env.estimate(p)?.objective().value)
}

/// Nelder-Mead on the environment's objective.
pub fn nelder_mead_maximize(env: &mut dyn RateEnvironment, budget: &OptimizerBudget) -> Result<BaselineOutcome> {
    let n = env.num_devices();
    nelder_mead_maximize_fn(objective_of(env), n, budget)
}

/// Nelder-Mead maximization of `f` with every trial point projected onto
/// the box.
pub fn nelder_mead_maximize_fn(
    f: impl FnMut(&[f64]) -> Result<f64>,
    n: usize,
    budget: &OptimizerBudget,
) -> Result<BaselineOutcome> {
    budget.validate(n)?;
    let lo = budget.p_floor;
    let project = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.clamp(lo, 1.0)).collect() };
    let mut c = Counter {
        f,
        limit: budget.max_evaluations,
        trace: OptimizerTrace::default(),
        best: None,
    };

    let x0 = budget.start(n);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let Some(f0) = c.eval(&x0)? else { unreachable!() };
    simplex.push((x0.clone(), f0));
    for k in 0..n {
        let mut v = x0.clone();
        // step back from the upper face so the simplex stays full-dimensional
        v[k] = if x0[k] + INITIAL_STEP <= 1.0 { x0[k] + INITIAL_STEP } else { x0[k] - INITIAL_STEP };
        let v = project(v);
        let Some(fv) = c.eval(&v)? else { return Ok(c.finish()) };
        simplex.push((v, fv));
    }

    loop {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < MIN_DIAMETER || c.exhausted() {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let toward = |t: f64, x: &[f64]| -> Vec<f64> {
            project(centroid.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect())
        };
        let xr = toward(-REFLECT, &worst.0);
        let Some(fr) = c.eval(&xr)? else { break };
        let (f_best, f_second) = (simplex[0].1, simplex[n - 1].1);

        if fr > f_best {
            let xe = toward(-EXPAND, &worst.0);
            let Some(fe) = c.eval(&xe)? else { break };
            simplex[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > f_second {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc, accept) = if fr > worst.1 {
            let xc = toward(-CONTRACT, &worst.0);
            let Some(fc) = c.eval(&xc)? else { break };
            (xc, fc, fc >= fr)
        } else {
            let xc = toward(CONTRACT, &worst.0);
            let Some(fc) = c.eval(&xc)? else { break };
            (xc, fc, fc > worst.1)
        };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = project(best.iter().zip(&vertex.0).map(|(b, v)| b + SHRINK * (v - b)).collect());
            let Some(fx) = c.eval(&x)? else { return Ok(c.finish()) };
            *vertex = (x, fx);
        }
    }
    Ok(c.finish())
}

/// Best of `max_evaluations` uniform samples.
pub fn random_search_maximize(env: &mut dyn RateEnvironment, budget: &OptimizerBudget) -> Result<BaselineOutcome> {
    let n = env.num_devices();
    random_search_maximize_fn(objective_of(env), n, budget)
}

pub fn random_search_maximize_fn(
    f: impl FnMut(&[f64]) -> Result<f64>,
    n: usize,
    budget: &OptimizerBudget,
) -> Result<BaselineOutcome> {
    budget.validate(n)?;
    let mut rng = rng_from_seed(budget.seed);
    let mut c = Counter {
        f,
        limit: budget.max_evaluations,
        trace: OptimizerTrace::default(),
        best: None,
    };
    while !c.exhausted() {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(budget.p_floor..=1.0)).collect();
        c.eval(&x)?;
    }
    Ok(c.finish())
}

/// Criterion maximized by the shared-probability sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanKind {
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousOptimum {
    /// The shared probability.
    pub p: f64,
    /// Criterion value at `p`.
    pub value: f64,
    /// Log-geometric-mean objective at `p`.
    pub objective: f64,
    /// Criterion value at every grid point.
    pub values: Vec<f64>,
    /// Log-geometric-mean objective at every grid point.
    pub trace: OptimizerTrace,
}

/// Sweeps one probability shared by every device over `points` values
/// evenly spaced on `[p_floor, 1]`.
pub fn homogeneous_grid_search(
    env: &mut dyn RateEnvironment,
    points: usize,
    p_floor: f64,
    criterion: MeanKind,
) -> Result<HomogeneousOptimum> {
    if points == 0 || !(p_floor > 0.0 && p_floor <= 1.0) {
        return Err(Error::invalid("need >= 1 grid point and p_floor in (0, 1]"));
    }
    let n = env.num_devices();
    let mut values = Vec::with_capacity(points);
    let mut objectives = Vec::with_capacity(points);
    let mut best: Option<(f64, f64, f64)> = None;
    for k in 0..points {
        let p = if points == 1 {
            1.0
        } else {
            p_floor + (1.0 - p_floor) * k as f64 / (points - 1) as f64
        };
        let est = env.estimate(&vec![p; n])?;
        let objective = est.objective().value;
        let value = match criterion {
            MeanKind::Arithmetic => est.mean_rate.iter().sum::<f64>() / n as f64,
            MeanKind::Geometric => objective,
        };
        values.push(value);
        objectives.push(objective);
        if best.is_none_or(|(_, v, _)| value > v) {
            best = Some((p, value, objective));
        }
    }
    let (p, value, objective) = best.unwrap();
    Ok(HomogeneousOptimum {
        p,
        value,
        objective,
        values,
        trace: OptimizerTrace::from_objectives(objectives),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, Fading};
    use crate::env::OracleEnv;
    use crate::oracle::{build_conditional_table, grid_search, ConditionalRateTable};
    use crate::topology::{Point2D, Topology};
    use proptest::prelude::*;

    fn bowl(p: &[f64]) -> Result<f64> {
        Ok(-p.iter().map(|x| (x - 0.5).powi(2)).sum::<f64>())
    }

    #[test]
    fn nelder_mead_quadratic() {
        let budget = OptimizerBudget::new(1000, 0).with_initial(vec![0.9, 0.2]);
        let out = nelder_mead_maximize_fn(bowl, 2, &budget).unwrap();
        for x in &out.policy {
            assert!((x - 0.5).abs() < 1e-3);
        }
        assert!(out.trace.len() as u64 <= 1000);
    }

    #[test]
    fn nelder_mead_respects_budget() {
        for limit in [1, 2, 3, 7, 50] {
            let budget = OptimizerBudget::new(limit, 0);
            let out = nelder_mead_maximize_fn(bowl, 4, &budget).unwrap();
            assert!(out.trace.len() as u64 <= limit);
        }
    }

    #[test]
    fn nelder_mead_maximum_on_the_boundary() {
        let f = |p: &[f64]| Ok(p[0] - (p[1] - 0.3).powi(2));
        let out = nelder_mead_maximize_fn(f, 2, &OptimizerBudget::new(1000, 0)).unwrap();
        assert!((out.policy[0] - 1.0).abs() < 1e-6 && (out.policy[1] - 0.3).abs() < 1e-3, "{:?}", out.policy);
    }

    #[test]
    fn nelder_mead_two_user_network() {
        let model = ChannelModel::default().with_fading(Fading::Rayleigh);
        for seed in 0..3u64 {
            let devices = crate::topology::generate_uniform_deployment(2, 500.0, seed).unwrap();
            let topo = Topology::new(devices, vec![Point2D::ORIGIN]).unwrap();
            let table = build_conditional_table(&model, &topo, 2000, seed).unwrap();
            let grid = grid_search(&table, 1e-3, 100).unwrap();
            let mut env = OracleEnv::new(table);
            let budget = OptimizerBudget::new(1000, seed).with_initial(vec![0.3, 0.3]);
            let out = nelder_mead_maximize(&mut env, &budget).unwrap();
            assert!((out.objective - grid.objective).exp() >= 0.99, "{} vs {}", out.objective, grid.objective);
        }
    }

    #[test]
    fn random_search_single_sample() {
        let mut seen = Vec::new();
        let f = |p: &[f64]| {
            seen.push(p.to_vec());
            bowl(p)
        };
        let out = random_search_maximize_fn(f, 3, &OptimizerBudget::new(1, 5)).unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(out.policy, seen[0]);
    }

    #[test]
    fn random_search_reproducible() {
        let a = random_search_maximize_fn(bowl, 3, &OptimizerBudget::new(50, 5)).unwrap();
        let b = random_search_maximize_fn(bowl, 3, &OptimizerBudget::new(50, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_csv_round_trip() {
        let out = random_search_maximize_fn(bowl, 2, &OptimizerBudget::new(20, 1)).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"evaluation_index,objective,best_so_far\n"));
        assert_eq!(OptimizerTrace::read_csv(&buf[..]).unwrap(), out.trace);
    }

    #[test]
    fn homogeneous_sweep() {
        // two devices that destroy each other's packets
        let table = ConditionalRateTable::from_fn(2, |i, m| if m == 1 << i { 1.0 } else { 0.0 }).unwrap();
        let mut env = OracleEnv::new(table);
        let out = homogeneous_grid_search(&mut env, 1001, 1e-3, MeanKind::Arithmetic).unwrap();
        // mean rate p(1-p) peaks at 1/2
        assert!((out.p - 0.5).abs() < 1e-3);
        assert!((out.value - 0.25).abs() < 1e-6);
        assert_eq!(out.trace.len(), 1001);
        assert_eq!(env.evaluations(), 1001);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn evaluated_points_stay_in_box(
            c in proptest::collection::vec(-0.5f64..1.5, 1..5),
            start in 0.0f64..=1.0,
            limit in 1u64..300,
        ) {
            let n = c.len();
            let mut pts = Vec::new();
            let f = |p: &[f64]| {
                pts.push(p.to_vec());
                Ok(-p.iter().zip(&c).map(|(x, ci)| (x - ci).powi(2)).sum::<f64>())
            };
            let budget = OptimizerBudget::new(limit, 0).with_initial(vec![start; n]);
            let out = nelder_mead_maximize_fn(f, n, &budget).unwrap();
            prop_assert!(pts.len() as u64 <= limit);
            for p in &pts {
                prop_assert!(p.iter().all(|&x| (1e-3..=1.0).contains(&x)));
            }
            let best = out.trace.best_so_far();
            prop_assert!(best.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn random_search_best_so_far_monotone(seed in 0u64..1000, limit in 1u64..100) {
            let out = random_search_maximize_fn(bowl, 3, &OptimizerBudget::new(limit, seed)).unwrap();
            let best = out.trace.best_so_far();
            prop_assert_eq!(best.len() as u64, limit);
            prop_assert!(best.windows(2).all(|w| w[1] >= w[0]));
            prop_assert_eq!(*best.last().unwrap(), out.objective);
        }
    }
}
