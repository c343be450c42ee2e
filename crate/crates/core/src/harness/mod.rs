//! Monte Carlo study: per-realization design, identification and
//! validation, aggregation and report files.

mod config;
mod report;
mod svg;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    compute_gamma, evaluate_design, solve_classical, solve_least_costly, DesignMode, DesignOutcome, DesignProblem,
};
use crate::error::{Error, Result};
use crate::gp::Points;
use crate::ident::{noe_simulate_from_rest, rmse, train_lm, TrainOutcome, TrainStop};
use crate::plant::{integrate_rk4, linearize_msd_at, simulate_dataset, Dataset, IoModel};
use crate::seed::{derive_seed, rng_from_seed};
use crate::signals::SignalParams;
use crate::spacefill::{build_anchor_grid, covering_radius};

pub use config::{DesignModelChoice, Profile, StudyConfig};
pub use report::{read_study, write_report, ReportFiles};

/// One validation input and the noise-free plant response from rest.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDataset {
    pub label: String,
    pub seed: u64,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub label: String,
    pub seed: u64,
    pub samples: usize,
    pub input_power: f64,
    pub output_min: f64,
    pub output_max: f64,
}

impl TestDataset {
    pub fn summary(&self) -> TestSummary {
        TestSummary {
            label: self.label.clone(),
            seed: self.seed,
            samples: self.u.len(),
            input_power: self.u.iter().map(|v| v * v).sum::<f64>() / self.u.len() as f64,
            output_min: self.y.iter().copied().fold(f64::INFINITY, f64::min),
            output_max: self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Simulates every configured test family on the nonlinear plant from rest.
/// Family `j` draws its randomness from `derive_seed(master, j, "test-suite")`.
pub fn generate_test_suite(config: &StudyConfig) -> Result<Vec<TestDataset>> {
    config.validate()?;
    let plant = IoModel::nonlinear(config.plant, config.signal.fs)?;
    config
        .tests
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let seed = spec.effective_seed(derive_seed(config.master_seed, j as u64, "test-suite"));
            let u = spec.generate(&config.signal, config.n_test, seed)?;
            let traj = integrate_rk4(&plant, [0.0, 0.0], &u, plant.dt())?;
            let y = traj[..u.len()].iter().map(|x| x[0]).collect();
            Ok(TestDataset { label: spec.label(), seed, u, y })
        })
        .collect()
}

/// Metrics of one signal evaluated on the design model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub theta: SignalParams,
    pub power: f64,
    pub v_cost: f64,
    pub covering_radius: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop: String,
}

impl DesignRecord {
    fn from_outcome(o: &DesignOutcome) -> Self {
        Self {
            theta: o.theta.clone(),
            power: o.power,
            v_cost: o.v_cost,
            covering_radius: o.covering_radius.radius,
            iterations: o.iterations,
            evaluations: o.evaluations,
            converged: o.converged,
            stop: o.stop.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub stop: TrainStop,
    /// Accepted-iterate costs never increased.
    pub monotone: bool,
    pub restart_costs: Vec<f64>,
}

impl TrainRecord {
    fn from_outcome(o: &TrainOutcome) -> Self {
        let acc = o.accepted_costs();
        Self {
            cost: o.cost,
            initial_cost: o.initial_cost,
            iterations: o.iterations,
            stop: o.stop,
            monotone: acc.windows(2).all(|w| w[1] <= w[0]),
            restart_costs: o.restart_costs.clone(),
        }
    }
}

/// The three designs of a realization, in the order initial, classical,
/// least-costly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDesign<T> {
    pub initial: T,
    pub classical: T,
    pub least_costly: T,
}

impl<T> PerDesign<T> {
    pub fn as_array(&self) -> [&T; 3] {
        [&self.initial, &self.classical, &self.least_costly]
    }

    fn try_map<U>(self, mut f: impl FnMut(T) -> Result<U>) -> Result<PerDesign<U>> {
        Ok(PerDesign { initial: f(self.initial)?, classical: f(self.classical)?, least_costly: f(self.least_costly)? })
    }
}

pub const DESIGN_NAMES: [&str; 3] = ["initial", "classical", "least_costly"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    pub linearization_point: f64,
    pub gamma0: f64,
    pub gamma: f64,
    pub designs: PerDesign<DesignRecord>,
    pub training: PerDesign<TrainRecord>,
    /// Simulation RMSE (m) per test family, in configuration order.
    pub rmse: PerDesign<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationFailure {
    pub index: usize,
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

fn stage<T>(index: usize, seed: u64, name: &str, r: Result<T>) -> std::result::Result<T, RealizationFailure> {
    r.map_err(|e| RealizationFailure { index, seed, stage: name.to_string(), message: e.to_string() })
}

/// Design model of realization `index`: the linearization point is drawn
/// from `derive_seed(master, index, "linearization")`.
pub fn design_model(config: &StudyConfig, index: usize) -> Result<(IoModel, f64)> {
    match config.design_model {
        DesignModelChoice::Nonlinear => Ok((IoModel::nonlinear(config.plant, config.signal.fs)?, 0.0)),
        DesignModelChoice::Linear => {
            let x1 = if config.linearization_jitter > 0.0 {
                let mut rng = rng_from_seed(derive_seed(config.master_seed, index as u64, "linearization"));
                rng.gen_range(-config.linearization_jitter..=config.linearization_jitter)
            } else {
                0.0
            };
            Ok((IoModel::linear(linearize_msd_at(&config.plant, x1), config.signal.fs)?, x1))
        }
    }
}

/// Initial random-phase multisine of realization `index`.
pub fn initial_signal(config: &StudyConfig, index: usize) -> SignalParams {
    let mut rng = rng_from_seed(derive_seed(config.master_seed, index as u64, "phases"));
    SignalParams::random_phase(config.signal.num_lines(), config.initial_amplitude, &mut rng)
}

/// Nonlinear-plant dataset generated by `theta`.
pub fn plant_dataset(config: &StudyConfig, theta: &SignalParams, warmup: usize) -> Result<Dataset> {
    let plant = IoModel::nonlinear(config.plant, config.signal.fs)?;
    simulate_dataset(&plant, theta, &config.signal, config.x0, warmup)
}

pub fn design_problem(config: &StudyConfig, model: IoModel, theta0: SignalParams) -> Result<DesignProblem> {
    Ok(DesignProblem {
        model,
        signal: config.signal.clone(),
        gp: config.gp.clone(),
        region: config.region.clone(),
        anchors: build_anchor_grid(&config.region, &config.anchor_counts)?,
        eval_counts: config.eval_counts.clone(),
        theta0,
        x0: config.x0,
        mode: DesignMode::Classical,
        gamma: None,
        settings: config.classical.clone(),
    })
}

/// Runs one realization end to end. Deterministic in `(config, index, suite)`.
pub fn run_realization(
    config: &StudyConfig,
    index: usize,
    suite: &[TestDataset],
) -> std::result::Result<RealizationRecord, RealizationFailure> {
    let seed = derive_seed(config.master_seed, index as u64, "realization");
    let fail = |name: &str, e: Error| RealizationFailure { index, seed, stage: name.into(), message: e.to_string() };
    let theta_ini = initial_signal(config, index);
    let (model, x_lin) = stage(index, seed, "design_model", design_model(config, index))?;
    let mut problem = stage(index, seed, "design_model", design_problem(config, model, theta_ini.clone()))?;

    let initial = stage(index, seed, "initial", initial_record(&problem))?;
    let classical = stage(index, seed, "classical", solve_classical(&problem))?;
    let gamma = stage(index, seed, "gamma", compute_gamma(&classical, config.least_costly.margin))?;
    problem.mode = DesignMode::LeastCostly;
    problem.gamma = Some(gamma);
    problem.theta0 = classical.theta.clone();
    problem.settings = config.least_costly.clone();
    let lc = stage(index, seed, "least_costly", solve_least_costly(&problem))?;
    if lc.v_cost > gamma * (1.0 + config.least_costly.constraint_tol) {
        return Err(fail(
            "least_costly",
            Error::Contract(format!("least-costly V-cost {} exceeds gamma {gamma}", lc.v_cost)),
        ));
    }
    let designs = PerDesign {
        initial,
        classical: DesignRecord::from_outcome(&classical),
        least_costly: DesignRecord::from_outcome(&lc),
    };

    let thetas = PerDesign {
        initial: designs.initial.theta.clone(),
        classical: designs.classical.theta.clone(),
        least_costly: designs.least_costly.theta.clone(),
    };
    let warmup = config.classical.warmup_periods;
    let datasets = stage(index, seed, "simulate", thetas.try_map(|t| plant_dataset(config, &t, warmup)))?;
    let tags = ["train-initial", "train-classical", "train-least-costly"];
    let mut k = 0;
    let fits = stage(
        index,
        seed,
        "identify",
        datasets.try_map(|ds| {
            let s = derive_seed(config.master_seed, index as u64, tags[k]);
            k += 1;
            train_lm(&ds.u, &ds.y, &config.train, s)
        }),
    )?;
    let training = PerDesign {
        initial: TrainRecord::from_outcome(&fits.initial),
        classical: TrainRecord::from_outcome(&fits.classical),
        least_costly: TrainRecord::from_outcome(&fits.least_costly),
    };
    let rmse = stage(
        index,
        seed,
        "evaluate",
        fits.try_map(|fit| {
            suite.iter().map(|t| rmse(&t.y, &noe_simulate_from_rest(&fit.model, &t.u)?)).collect::<Result<Vec<f64>>>()
        }),
    )?;
    Ok(RealizationRecord {
        index,
        seed,
        linearization_point: x_lin,
        gamma0: classical.v_cost,
        gamma,
        designs,
        training,
        rmse,
    })
}

fn initial_record(problem: &DesignProblem) -> Result<DesignRecord> {
    let e = evaluate_design(&problem.theta0, problem)?;
    let cr = covering_radius(&e.features, &problem.region, &problem.eval_counts)?;
    Ok(DesignRecord {
        theta: problem.theta0.clone(),
        power: e.power,
        v_cost: e.v_cost,
        covering_radius: cr.radius,
        iterations: 0,
        evaluations: 1,
        converged: true,
        stop: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        Self { mean: mean(values), median: median(values) }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Study-level statistics, always recomputed from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub successful: usize,
    pub power: PerDesign<Stats>,
    pub v_cost: PerDesign<Stats>,
    pub covering_radius: PerDesign<Stats>,
    /// Per test family.
    pub rmse_median: PerDesign<Vec<f64>>,
    pub rmse_mean: PerDesign<Vec<f64>>,
    /// `mean P_Cl / mean P_LC`.
    pub power_ratio: f64,
    /// Mean over realizations of `|V_LC - V_Cl| / V_Cl`.
    pub v_gap: f64,
    /// `|mean ρ_LC - mean ρ_Cl| / mean ρ_Cl`.
    pub rho_gap: f64,
    /// Sum over families of the initial-design median RMSE divided by the
    /// same sum for the classical and least-costly designs.
    pub error_reduction_classical: f64,
    pub error_reduction_least_costly: f64,
}

pub fn aggregate(records: &[RealizationRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Precondition("no successful realization to aggregate".into()));
    }
    let families = records[0].rmse.initial.len();
    if records.iter().any(|r| r.rmse.as_array().iter().any(|v| v.len() != families)) {
        return Err(Error::Contract("records disagree on the number of test families".into()));
    }
    let per = |f: &dyn Fn(&RealizationRecord) -> [f64; 3]| -> PerDesign<Stats> {
        let cols: Vec<[f64; 3]> = records.iter().map(f).collect();
        let col = |i: usize| Stats::of(&cols.iter().map(|c| c[i]).collect::<Vec<_>>());
        PerDesign { initial: col(0), classical: col(1), least_costly: col(2) }
    };
    let power = per(&|r| r.designs.as_array().map(|d| d.power));
    let v_cost = per(&|r| r.designs.as_array().map(|d| d.v_cost));
    let rho = per(&|r| r.designs.as_array().map(|d| d.covering_radius));
    let rmse_stat = |g: fn(&[f64]) -> f64| -> PerDesign<Vec<f64>> {
        let by = |d: usize| -> Vec<f64> {
            (0..families).map(|j| g(&records.iter().map(|r| r.rmse.as_array()[d][j]).collect::<Vec<_>>())).collect()
        };
        PerDesign { initial: by(0), classical: by(1), least_costly: by(2) }
    };
    let rmse_median = rmse_stat(median);
    let rmse_mean = rmse_stat(mean);
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let v_gap = mean(
        &records
            .iter()
            .map(|r| (r.designs.least_costly.v_cost - r.designs.classical.v_cost).abs() / r.designs.classical.v_cost)
            .collect::<Vec<_>>(),
    );
    Ok(Aggregate {
        successful: records.len(),
        power_ratio: power.classical.mean / power.least_costly.mean,
        v_gap,
        rho_gap: (rho.least_costly.mean - rho.classical.mean).abs() / rho.classical.mean,
        error_reduction_classical: sum(&rmse_median.initial) / sum(&rmse_median.classical),
        error_reduction_least_costly: sum(&rmse_median.initial) / sum(&rmse_median.least_costly),
        power,
        v_cost,
        covering_radius: rho,
        rmse_median,
        rmse_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub version: String,
    pub config: StudyConfig,
    pub tests: Vec<TestSummary>,
    pub realizations: Vec<RealizationRecord>,
    pub failures: Vec<RealizationFailure>,
    /// `None` when every realization failed.
    pub aggregate: Option<Aggregate>,
    pub notes: Vec<String>,
}

impl StudyResult {
    pub fn test_labels(&self) -> Vec<String> {
        self.tests.iter().map(|t| t.label.clone()).collect()
    }

    /// Aggregate recomputed from the stored records.
    pub fn recompute_aggregate(&self) -> Option<Aggregate> {
        aggregate(&self.realizations).ok()
    }
}

fn study_notes() -> Vec<String> {
    vec![
        "realization seed = first 8 bytes (little endian) of SHA-256(master_seed LE || index LE || tag); \
         tags: realization, phases, linearization, train-initial, train-classical, train-least-costly, test-suite"
            .into(),
        "test RMSE: every model is simulated in free run from rest (zero past inputs and outputs) and compared \
         with the noise-free plant response from rest"
            .into(),
        "design metrics (power, V-cost, covering radius) are evaluated on the design model".into(),
    ]
}

/// Runs all realizations (in parallel) and collects records and failures in
/// index order.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let suite = generate_test_suite(config)?;
    let outcomes: Vec<_> =
        (0..config.realizations).into_par_iter().map(|i| run_realization(config, i, &suite)).collect();
    let mut realizations = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => realizations.push(r),
            Err(f) => failures.push(f),
        }
    }
    let aggregate = aggregate(&realizations).ok();
    Ok(StudyResult {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        tests: suite.iter().map(TestDataset::summary).collect(),
        realizations,
        failures,
        aggregate,
        notes: study_notes(),
    })
}

/// Feature points of a plant dataset in the design's feature units.
pub fn plant_features(config: &StudyConfig, theta: &SignalParams) -> Result<Points> {
    let ds = plant_dataset(config, theta, config.classical.warmup_periods)?;
    Ok(ds.feature_points(config.classical.increment_scale_for(config.signal.fs)))
}
