//! Classical space-filling design (minimize the V-cost) and least-costly
//! design (minimize the experiment cost subject to `V ≤ γ`).
//!
//! Both problems are solved over the multisine decision vector
//! `[A_1..A_L, φ_1..φ_L]` with amplitudes boxed and phases free. The
//! least-costly solve is an augmented-Lagrangian outer loop around the same
//! projected quasi-Newton inner solver used for the classical problem.

pub mod fd;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::gp::{v_cost, GpConfig, Points};
use crate::plant::{simulate_dataset, Dataset, IoModel};
use crate::signals::{experiment_cost, multisine_sequence, AmplitudeBounds, CostKind, MultisineConfig, SignalParams};
use crate::spacefill::{covering_radius, AnchorGrid, CoveringRadius, RegionOfInterest};

pub use fd::fd_gradient;
pub use optim::{minimize_box, BoxBounds, EvalBudget, MinimizeOutput, QuasiNewtonOptions, StopReason};

/// Solver and problem settings shared by both design modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSettings {
    pub bounds: AmplitudeBounds,
    pub inner: QuasiNewtonOptions,
    /// Hard cap on objective evaluations per solve.
    pub max_evaluations: usize,
    /// Relative slack of γ above the classical optimum.
    pub margin: f64,
    /// Relative tolerance on `V ≤ γ`.
    pub constraint_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub max_outer_iterations: usize,
    /// Keep the multiplier at zero and only escalate the penalty.
    pub penalty_only: bool,
    pub cost: CostKind,
    /// Scale (N) applied to amplitudes inside the solver; phases use 1 rad.
    pub amplitude_scale: f64,
    pub warmup_periods: usize,
    /// Factor applied to the output increment in feature space. `None` uses
    /// the sampling frequency, which expresses increments in m/s.
    pub increment_scale: Option<f64>,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            bounds: AmplitudeBounds::default(),
            inner: QuasiNewtonOptions::default(),
            max_evaluations: 50_000,
            margin: 0.05,
            constraint_tol: 1e-4,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            max_outer_iterations: 20,
            penalty_only: false,
            cost: CostKind::Power,
            amplitude_scale: 10.0,
            warmup_periods: 2,
            increment_scale: None,
        }
    }
}

impl DesignSettings {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.margin > 0.0) {
            return config_err("gamma margin must be positive");
        }
        if !(self.constraint_tol >= 0.0) {
            return config_err("constraint tolerance must be non-negative");
        }
        if !(self.penalty_init > 0.0 && self.penalty_growth > 1.0 && self.penalty_max >= self.penalty_init) {
            return config_err("penalty schedule must start positive and grow");
        }
        if !(self.amplitude_scale > 0.0) {
            return config_err("amplitude scale must be positive");
        }
        if self.max_evaluations == 0 {
            return config_err("evaluation budget must be positive");
        }
        if let Some(s) = self.increment_scale {
            if !(s > 0.0 && s.is_finite()) {
                return config_err("increment scale must be positive");
            }
        }
        Ok(())
    }

    pub fn increment_scale_for(&self, fs: f64) -> f64 {
        self.increment_scale.unwrap_or(fs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    Classical,
    LeastCostly,
}

/// Everything needed to evaluate and optimize a design.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub model: IoModel,
    pub signal: MultisineConfig,
    pub gp: GpConfig,
    pub region: RegionOfInterest,
    pub anchors: AnchorGrid,
    /// Evaluation grid used for the covering radius.
    pub eval_counts: Vec<usize>,
    pub theta0: SignalParams,
    pub x0: [f64; 2],
    pub mode: DesignMode,
    pub gamma: Option<f64>,
    pub settings: DesignSettings,
}

impl DesignProblem {
    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.gp.validate()?;
        self.region.validate()?;
        self.settings.validate()?;
        self.theta0.check_against(&self.signal)?;
        if self.gp.dim() != 2 || self.region.dim() != 2 || self.anchors.points.dim() != 2 {
            return config_err("design features are two-dimensional (y, dy)");
        }
        if self.anchors.is_empty() {
            return config_err("anchor grid is empty");
        }
        if (self.model.fs - self.signal.fs).abs() > 1e-12 * self.signal.fs {
            return config_err("model and signal sampling frequencies differ");
        }
        if self.mode == DesignMode::LeastCostly && !self.gamma.is_some_and(|g| g > 0.0) {
            return config_err("least-costly design needs a positive gamma");
        }
        Ok(())
    }

    fn increment_scale(&self) -> f64 {
        self.settings.increment_scale_for(self.signal.fs)
    }

    fn solver_bounds(&self) -> BoxBounds {
        let l = self.signal.num_lines();
        let mut lower = vec![self.settings.bounds.min; l];
        let mut upper = vec![self.settings.bounds.max; l];
        lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, l));
        upper.extend(std::iter::repeat_n(f64::INFINITY, l));
        BoxBounds { lower, upper }
    }

    fn solver_scale(&self) -> Vec<f64> {
        let l = self.signal.num_lines();
        let mut s = vec![self.settings.amplitude_scale; l];
        s.extend(std::iter::repeat_n(1.0, l));
        s
    }
}

/// V-cost, experiment cost and dataset of one candidate signal.
#[derive(Debug, Clone)]
pub struct DesignEvaluation {
    pub v_cost: f64,
    pub power: f64,
    /// Value of the configured cost functional (equals `power` for
    /// [`CostKind::Power`]).
    pub cost: f64,
    pub dataset: Dataset,
    pub features: Points,
}

/// Simulates the design model under `theta` and scores the resulting dataset.
pub fn evaluate_design(theta: &SignalParams, problem: &DesignProblem) -> Result<DesignEvaluation> {
    let dataset =
        simulate_dataset(&problem.model, theta, &problem.signal, problem.x0, problem.settings.warmup_periods)?;
    let features = dataset.feature_points(problem.increment_scale());
    let v = v_cost(&features, &problem.anchors.points, &problem.gp)?;
    let period = multisine_sequence(theta, &problem.signal, problem.signal.n)?;
    let power = crate::signals::signal_power(&period)?;
    let cost = match problem.settings.cost {
        CostKind::Power => power,
        kind => experiment_cost(kind, &period)?,
    };
    Ok(DesignEvaluation { v_cost: v, power, cost, dataset, features })
}

fn evaluate_vector(x: &[f64], problem: &DesignProblem) -> Result<DesignEvaluation> {
    evaluate_design(&SignalParams::from_vector(x)?, problem)
}

/// Result of a design solve. All metrics are recomputed from `theta` by a
/// fresh simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub mode: DesignMode,
    pub theta: SignalParams,
    pub v_cost: f64,
    pub power: f64,
    pub cost: f64,
    pub covering_radius: CoveringRadius,
    pub gamma: Option<f64>,
    /// `max(0, V/γ - 1)`; zero for classical designs.
    pub constraint_violation: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop: String,
    /// Objective of every accepted iterate (V for classical, cost for
    /// least-costly).
    pub trace: Vec<f64>,
}

fn finish(
    problem: &DesignProblem,
    theta: SignalParams,
    counters: (usize, usize, usize),
    converged: bool,
    stop: String,
    trace: Vec<f64>,
) -> Result<DesignOutcome> {
    let eval = evaluate_design(&theta, problem)?;
    let cr = covering_radius(&eval.features, &problem.region, &problem.eval_counts)?;
    let violation = match (problem.mode, problem.gamma) {
        (DesignMode::LeastCostly, Some(g)) => (eval.v_cost / g - 1.0).max(0.0),
        _ => 0.0,
    };
    Ok(DesignOutcome {
        mode: problem.mode,
        theta,
        v_cost: eval.v_cost,
        power: eval.power,
        cost: eval.cost,
        covering_radius: cr,
        gamma: problem.gamma,
        constraint_violation: violation,
        iterations: counters.0,
        outer_iterations: counters.1,
        evaluations: counters.2,
        converged,
        stop,
        trace,
    })
}

fn stop_label(stop: StopReason) -> String {
    serde_json::to_value(stop).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Locally minimizes the V-cost over the amplitude box.
pub fn solve_classical(problem: &DesignProblem) -> Result<DesignOutcome> {
    problem.validate()?;
    if problem.mode != DesignMode::Classical {
        return Err(Error::Precondition("solve_classical called on a least-costly problem".into()));
    }
    let mut budget = EvalBudget::new(problem.settings.max_evaluations);
    let out = minimize_box(
        |x| evaluate_vector(x, problem).map(|e| e.v_cost),
        &problem.theta0.to_vector(),
        &problem.solver_bounds(),
        &problem.solver_scale(),
        &problem.settings.inner,
        &mut budget,
        None,
    )?;
    let theta = SignalParams::from_vector(&out.x)?;
    finish(problem, theta, (out.iterations, 0, budget.used()), out.converged(), stop_label(out.stop), out.trace)
}

/// `γ = (1 + margin) γ_0` with `γ_0` the V-cost of the classical design.
///
/// The classical outcome does not have to carry the convergence flag: any
/// classical iterate is a valid feasibility certificate for its own V-cost.
pub fn compute_gamma(classical: &DesignOutcome, margin: f64) -> Result<f64> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return config_err(format!("gamma margin must be non-negative, got {margin}"));
    }
    if !(classical.v_cost > 0.0 && classical.v_cost.is_finite()) {
        return Err(Error::Precondition(format!("classical V-cost {} is not positive", classical.v_cost)));
    }
    Ok((1.0 + margin) * classical.v_cost)
}

/// Powell-Hestenes-Rockafellar term for an inequality `c ≤ 0`.
fn phr_penalty(c: f64, lambda: f64, mu: f64) -> f64 {
    let shifted = lambda + mu * c;
    if shifted > 0.0 {
        lambda * c + 0.5 * mu * c * c
    } else {
        -lambda * lambda / (2.0 * mu)
    }
}

struct Iterate {
    x: Vec<f64>,
    cost: f64,
}

/// Minimizes the experiment cost subject to `V ≤ γ`, starting from the
/// feasible `theta0` of the problem.
pub fn solve_least_costly(problem: &DesignProblem) -> Result<DesignOutcome> {
    problem.validate()?;
    if problem.mode != DesignMode::LeastCostly {
        return Err(Error::Precondition("solve_least_costly called on a classical problem".into()));
    }
    let gamma = problem.gamma.expect("validated");
    let s = &problem.settings;
    let feasible_v = gamma * (1.0 + s.constraint_tol);
    let x0 = problem.theta0.to_vector();
    let start = evaluate_vector(&x0, problem)?;
    if start.v_cost > feasible_v {
        return Err(Error::Precondition(format!(
            "starting design is infeasible: V = {} > gamma = {gamma}",
            start.v_cost
        )));
    }
    let cost_ref = if start.cost > 0.0 { start.cost } else { 1.0 };
    let bounds = problem.solver_bounds();
    let scale = problem.solver_scale();
    let mut budget = EvalBudget::new(s.max_evaluations);
    budget.take(1);

    let mut best = Iterate { x: x0.clone(), cost: start.cost };
    let mut trace = vec![start.cost];
    let mut x = x0;
    let mut lambda = 0.0;
    let mut mu = s.penalty_init;
    let mut prev_violation = f64::INFINITY;
    let mut prev_cost = start.cost;
    let mut warm: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut stop = StopReason::IterationLimit;

    while outer < s.max_outer_iterations {
        outer += 1;
        let (lam, pen) = (lambda, mu);
        let inner = minimize_box(
            |z| {
                let e = evaluate_vector(z, problem)?;
                Ok(e.cost / cost_ref + phr_penalty((e.v_cost - gamma) / gamma, lam, pen))
            },
            &x,
            &bounds,
            &scale,
            &s.inner,
            &mut budget,
            warm.as_deref(),
        );
        let inner = match inner {
            Ok(out) => out,
            Err(_) => {
                stop = StopReason::EvaluationBudget;
                break;
            }
        };
        iterations += inner.iterations;
        x = inner.x.clone();
        warm = Some(inner.inverse_hessian.clone());
        if !budget.take(1) {
            stop = StopReason::EvaluationBudget;
            break;
        }
        let eval = evaluate_vector(&x, problem)?;
        let c = (eval.v_cost - gamma) / gamma;

        if eval.v_cost <= feasible_v {
            if eval.cost <= best.cost {
                best = Iterate { x: x.clone(), cost: eval.cost };
                trace.push(eval.cost);
            }
        } else if let Some(candidate) = restore_feasibility(problem, &best.x, &x, feasible_v, &mut budget)? {
            if candidate.cost < best.cost {
                trace.push(candidate.cost);
                best = candidate;
            }
        }

        if inner.stop == StopReason::EvaluationBudget || budget.exhausted() {
            stop = StopReason::EvaluationBudget;
            break;
        }

        let violation = if s.penalty_only { c.max(0.0) } else { c.max(-lambda / mu).abs() };
        let stalled = (prev_cost - eval.cost).abs() <= s.inner.cost_rel_tol.max(1e-9) * prev_cost.abs().max(1e-300);
        if c <= s.constraint_tol && inner.converged() && (stalled || eval.cost == 0.0) {
            converged = true;
            stop = inner.stop;
            break;
        }
        prev_cost = eval.cost;

        if !s.penalty_only {
            lambda = (lambda + mu * c).max(0.0);
        }
        if violation > 0.25 * prev_violation || (s.penalty_only && c > s.constraint_tol) {
            if mu >= s.penalty_max {
                stop = StopReason::LineSearchExhausted;
                break;
            }
            mu = (mu * s.penalty_growth).min(s.penalty_max);
        }
        prev_violation = violation;
    }

    let theta = SignalParams::from_vector(&best.x)?;
    finish(problem, theta, (iterations, outer, budget.used()), converged, stop_label(stop), trace)
}

/// Largest step from the feasible `from` towards the infeasible `to` that
/// stays feasible, found by bisection.
fn restore_feasibility(
    problem: &DesignProblem,
    from: &[f64],
    to: &[f64],
    feasible_v: f64,
    budget: &mut EvalBudget,
) -> Result<Option<Iterate>> {
    let mix = |t: f64| -> Vec<f64> { from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut found: Option<Iterate> = None;
    for _ in 0..12 {
        if !budget.take(1) {
            break;
        }
        let t = 0.5 * (lo + hi);
        let x = mix(t);
        match evaluate_vector(&x, problem) {
            Ok(e) if e.v_cost <= feasible_v => {
                lo = t;
                found = Some(Iterate { x, cost: e.cost });
            }
            _ => hi = t,
        }
    }
    Ok(found)
}
