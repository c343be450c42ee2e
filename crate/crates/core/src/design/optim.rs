//! Box-constrained quasi-Newton descent (projected BFGS with backtracking)
//! driven by finite-difference gradients.

use serde::{Deserialize, Serialize};

use super::fd::fd_gradient;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| v >= lo && v <= hi)
    }
}

/// Inner-solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiNewtonOptions {
    pub max_iterations: usize,
    /// Stop when the cost drops by less than this fraction over `stall_window`
    /// accepted iterations.
    pub cost_rel_tol: f64,
    pub stall_window: usize,
    /// Accepted steps shorter than this (scaled ∞-norm) end the solve.
    pub step_tol: f64,
    /// Projected-gradient ∞-norm (scaled, relative to `max(1, |f|)`) treated as stationary.
    pub grad_tol: f64,
    /// Consecutive rejected iterations before giving up.
    pub max_rejections: usize,
    pub max_backtracks: usize,
    pub fd_step: f64,
    /// Initial maximum scaled step length.
    pub initial_trust: f64,
    pub max_trust: f64,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_rel_tol: 1e-6,
            stall_window: 5,
            step_tol: 1e-8,
            grad_tol: 1e-8,
            max_rejections: 10,
            max_backtracks: 12,
            fd_step: super::fd::DEFAULT_FD_STEP,
            initial_trust: 1.0,
            max_trust: 16.0,
        }
    }
}

/// Shared counter of objective evaluations with a hard cap.
#[derive(Debug, Clone)]
pub struct EvalBudget {
    used: usize,
    cap: usize,
}

impl EvalBudget {
    pub fn new(cap: usize) -> Self {
        Self { used: 0, cap }
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.cap.saturating_sub(self.used)
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.cap
    }

    pub fn take(&mut self, n: usize) -> bool {
        if self.used + n > self.cap {
            return false;
        }
        self.used += n;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stationary,
    CostStalled,
    StepTolerance,
    LineSearchExhausted,
    IterationLimit,
    EvaluationBudget,
    GradientFailure,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::Stationary | StopReason::CostStalled | StopReason::StepTolerance)
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeOutput {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Objective after each accepted iteration, starting with `f(x0)`.
    pub trace: Vec<f64>,
    /// Final inverse-Hessian approximation in scaled coordinates (row-major).
    pub inverse_hessian: Vec<f64>,
}

impl MinimizeOutput {
    pub fn converged(&self) -> bool {
        self.stop.converged()
    }
}

enum Eval {
    Value(f64),
    Failed,
    OutOfBudget,
}

fn evaluate<F: FnMut(&[f64]) -> Result<f64>>(f: &mut F, x: &[f64], budget: &mut EvalBudget) -> Eval {
    if !budget.take(1) {
        return Eval::OutOfBudget;
    }
    match f(x) {
        Ok(v) if v.is_finite() => Eval::Value(v),
        _ => Eval::Failed,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// Inverse BFGS update `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], first: bool) {
    let n = s.len();
    let sy = dot(s, y);
    let yy = dot(y, y);
    if !(sy > 1e-12 * (dot(s, s) * yy).sqrt()) {
        return;
    }
    if first {
        let gamma = sy / yy;
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = gamma;
        }
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Minimizes `f` over `bounds` starting from `x0`. Internally works on
/// `z = x / scale` so that differently sized coordinates get comparable
/// steps. Gradients are central differences in the original coordinates.
///
/// Fails only if `f(x0)` cannot be evaluated; every later failure ends the
/// solve with the best accepted iterate.
pub fn minimize_box<F>(
    mut f: F,
    x0: &[f64],
    bounds: &BoxBounds,
    scale: &[f64],
    opts: &QuasiNewtonOptions,
    budget: &mut EvalBudget,
    warm_start: Option<&[f64]>,
) -> Result<MinimizeOutput>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    assert_eq!(scale.len(), n, "scale length");
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let fx0 = match evaluate(&mut f, &x, budget) {
        Eval::Value(v) => v,
        Eval::Failed => return Err(Error::Precondition("objective not finite at the starting point".into())),
        Eval::OutOfBudget => return Err(Error::Precondition("evaluation budget exhausted before start".into())),
    };
    let mut out = MinimizeOutput {
        x: x.clone(),
        f: fx0,
        iterations: 0,
        stop: StopReason::IterationLimit,
        trace: vec![fx0],
        inverse_hessian: warm_start.map(<[f64]>::to_vec).unwrap_or_else(|| identity(n)),
    };

    let gradient = |f: &mut F, x: &[f64], budget: &mut EvalBudget| -> std::result::Result<Vec<f64>, StopReason> {
        if budget.remaining() < 2 * n {
            return Err(StopReason::EvaluationBudget);
        }
        budget.take(2 * n);
        let g = fd_gradient(|p| f(p), x, opts.fd_step).map_err(|_| StopReason::GradientFailure)?;
        Ok(g.iter().zip(scale).map(|(gi, si)| gi * si).collect())
    };

    let mut g = match gradient(&mut f, &x, budget) {
        Ok(g) => g,
        Err(stop) => {
            out.stop = stop;
            return Ok(out);
        }
    };
    let mut h = out.inverse_hessian.clone();
    let mut fresh_h = warm_start.is_none();
    let mut trust = opts.initial_trust;
    let mut rejections = 0usize;
    let zl: Vec<f64> = bounds.lower.iter().zip(scale).map(|(l, s)| l / s).collect();
    let zu: Vec<f64> = bounds.upper.iter().zip(scale).map(|(u, s)| u / s).collect();
    let mut z: Vec<f64> = x.iter().zip(scale).map(|(v, s)| v / s).collect();
    let mut fx = fx0;

    for _ in 0..opts.max_iterations {
        let active: Vec<bool> =
            (0..n).map(|i| (z[i] <= zl[i] && g[i] > 0.0) || (z[i] >= zu[i] && g[i] < 0.0)).collect();
        let pg: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { g[i] }).collect();
        if inf_norm(&pg) <= opts.grad_tol * fx.abs().max(1.0) {
            out.stop = StopReason::Stationary;
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { -dot(&h[i * n..(i + 1) * n], &g) }).collect();
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            fresh_h = true;
            d = pg.iter().map(|v| -v).collect();
        }
        let dn = inf_norm(&d);
        let mut alpha = (trust / dn).min(1.0);
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut zt: Vec<f64> = z.iter().zip(&d).map(|(zi, di)| zi + alpha * di).collect();
            for i in 0..n {
                zt[i] = zt[i].clamp(zl[i], zu[i]);
            }
            let s: Vec<f64> = zt.iter().zip(&z).map(|(a, b)| a - b).collect();
            if inf_norm(&s) < opts.step_tol {
                break;
            }
            let xt: Vec<f64> = zt.iter().zip(scale).map(|(v, sc)| v * sc).collect();
            match evaluate(&mut f, &xt, budget) {
                Eval::Value(ft) if ft <= fx + 1e-4 * dot(&g, &s) => {
                    accepted = Some((zt, xt, ft, s));
                    break;
                }
                Eval::OutOfBudget => {
                    out.stop = StopReason::EvaluationBudget;
                    out.inverse_hessian = h;
                    return Ok(out);
                }
                _ => alpha *= 0.5,
            }
        }
        out.iterations += 1;
        let Some((zt, xt, ft, s)) = accepted else {
            rejections += 1;
            trust *= 0.5;
            h = identity(n);
            fresh_h = true;
            if rejections >= opts.max_rejections {
                out.stop = StopReason::LineSearchExhausted;
                break;
            }
            continue;
        };
        rejections = 0;
        if alpha * dn >= 0.99 * trust {
            trust = (2.0 * trust).min(opts.max_trust);
        }
        z = zt;
        fx = ft;
        out.x = xt;
        out.f = ft;
        out.trace.push(ft);
        let g_new = match gradient(&mut f, &out.x, budget) {
            Ok(g) => g,
            Err(stop) => {
                out.stop = stop;
                break;
            }
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        bfgs_update(&mut h, &s, &y, fresh_h);
        fresh_h = false;
        g = g_new;
        if inf_norm(&s) < opts.step_tol {
            out.stop = StopReason::StepTolerance;
            break;
        }
        let k = out.trace.len();
        if k > opts.stall_window {
            let old = out.trace[k - 1 - opts.stall_window];
            if (old - fx) <= opts.cost_rel_tol * old.abs().max(f64::MIN_POSITIVE) {
                out.stop = StopReason::CostStalled;
                break;
            }
        }
    }
    out.inverse_hessian = h;
    Ok(out)
}
