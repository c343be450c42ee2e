//! Nonlinear output-error (NOE) identification: a one-hidden-layer sigmoid
//! network simulated in free run and fitted by Levenberg–Marquardt on the
//! simulation error.
//!
//! The network maps the regressor
//! `x(k) = (ŷ(k-1), …, ŷ(k-m_y), u(k-1), …, u(k-m_u))` to
//! `ŷ(k) = W_x σ(W_fx x(k) + b_f) + b_x`. Signals are standardized with the
//! constants stored in [`Scaling`] before they enter the network.

use std::io::Write;
use std::path::Path;

use faer::{prelude::*, Mat, Side};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, domain_err, Error, Result};
use crate::seed::{derive_seed, rng_from_seed, StudyRng};

/// Affine standardization of the input and output channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub u_mean: f64,
    pub u_std: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self { u_mean: 0.0, u_std: 1.0, y_mean: 0.0, y_std: 1.0 }
    }
}

impl Scaling {
    /// Zero mean and unit variance per channel; constant channels keep unit scale.
    pub fn fit(u: &[f64], y: &[f64]) -> Self {
        let stats = |v: &[f64]| {
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 * mean.abs().max(1e-300) && std > 0.0 { std } else { 1.0 })
        };
        let (u_mean, u_std) = stats(u);
        let (y_mean, y_std) = stats(y);
        Self { u_mean, u_std, y_mean, y_std }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.u_mean, self.u_std, self.y_mean, self.y_std];
        if all.iter().any(|v| !v.is_finite()) || self.u_std <= 0.0 || self.y_std <= 0.0 {
            return config_err("scaling constants must be finite with positive deviations");
        }
        Ok(())
    }
}

/// Sigmoid network in NOE configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoeModel {
    pub m_y: usize,
    pub m_u: usize,
    pub hidden: usize,
    /// `hidden × (m_y + m_u)`, row-major.
    pub w_fx: Vec<f64>,
    pub b_f: Vec<f64>,
    pub w_x: Vec<f64>,
    pub b_x: f64,
    pub scaling: Scaling,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

impl NoeModel {
    pub fn zeros(m_y: usize, m_u: usize, hidden: usize) -> Self {
        let n_x = m_y + m_u;
        Self {
            m_y,
            m_u,
            hidden,
            w_fx: vec![0.0; hidden * n_x],
            b_f: vec![0.0; hidden],
            w_x: vec![0.0; hidden],
            b_x: 0.0,
            scaling: Scaling::default(),
        }
    }

    /// Uniform weights in `±scale/sqrt(fan-in)`, zero output bias.
    pub fn random(m_y: usize, m_u: usize, hidden: usize, scale: f64, rng: &mut StudyRng) -> Self {
        let mut m = Self::zeros(m_y, m_u, hidden);
        let bound_in = scale / (m.n_x() as f64).sqrt();
        let bound_out = scale / (hidden as f64).sqrt();
        for w in m.w_fx.iter_mut().chain(m.b_f.iter_mut()) {
            *w = rng.gen_range(-bound_in..=bound_in);
        }
        for w in m.w_x.iter_mut() {
            *w = rng.gen_range(-bound_out..=bound_out);
        }
        m
    }

    pub fn n_x(&self) -> usize {
        self.m_y + self.m_u
    }

    /// Number of samples consumed before the first prediction.
    pub fn lag(&self) -> usize {
        self.m_y.max(self.m_u)
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.n_x() + 2 * self.hidden + 1
    }

    /// `η = (W_fx row-major, b_f, W_x, b_x)`.
    pub fn params(&self) -> Vec<f64> {
        let mut eta = Vec::with_capacity(self.num_params());
        eta.extend_from_slice(&self.w_fx);
        eta.extend_from_slice(&self.b_f);
        eta.extend_from_slice(&self.w_x);
        eta.push(self.b_x);
        eta
    }

    pub fn set_params(&mut self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.num_params() {
            return config_err(format!("{} parameters for a network with {}", eta.len(), self.num_params()));
        }
        let (a, rest) = eta.split_at(self.w_fx.len());
        let (b, rest) = rest.split_at(self.hidden);
        let (c, rest) = rest.split_at(self.hidden);
        self.w_fx.copy_from_slice(a);
        self.b_f.copy_from_slice(b);
        self.w_x.copy_from_slice(c);
        self.b_x = rest[0];
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_y == 0 || self.hidden == 0 {
            return config_err("network needs at least one output lag and one hidden unit");
        }
        if self.w_fx.len() != self.hidden * self.n_x() || self.b_f.len() != self.hidden || self.w_x.len() != self.hidden
        {
            return config_err("weight array sizes do not match the architecture");
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return config_err("non-finite network weight");
        }
        self.scaling.validate()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        m.validate()?;
        Ok(m)
    }
}

/// Free-run simulation in standardized units. Returns predictions for
/// samples `lag..v.len()` and, if requested, their parameter sensitivities
/// (row-major, one row per prediction). With `measured` the regressor uses
/// the measured outputs instead (one-step-ahead prediction).
fn run_standardized(
    model: &NoeModel,
    v: &[f64],
    z_init: &[f64],
    sensitivities: bool,
    measured: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = model.lag();
    let (n_x, h, np) = (model.n_x(), model.hidden, model.num_params());
    let mut z = vec![0.0; v.len()];
    z[p - model.m_y..p].copy_from_slice(z_init);
    let mut sens = if sensitivities { vec![0.0; v.len() * np] } else { Vec::new() };
    let mut x = vec![0.0; n_x];
    let mut s = vec![0.0; h];
    let mut g = vec![0.0; h];
    let (off_bf, off_wx, off_bx) = (h * n_x, h * n_x + h, h * n_x + 2 * h);
    for k in p..v.len() {
        let past = measured.unwrap_or(&z);
        for i in 0..model.m_y {
            x[i] = past[k - 1 - i];
        }
        for i in 0..model.m_u {
            x[model.m_y + i] = v[k - 1 - i];
        }
        let mut out = model.b_x;
        for j in 0..h {
            let row = &model.w_fx[j * n_x..(j + 1) * n_x];
            let a = model.b_f[j] + row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
            s[j] = sigmoid(a);
            g[j] = model.w_x[j] * s[j] * (1.0 - s[j]);
            out += model.w_x[j] * s[j];
        }
        if !out.is_finite() {
            return Err(Error::Divergence { step: k, context: "NOE simulation produced a non-finite output".into() });
        }
        z[k] = out;
        if sensitivities {
            let (past, cur) = sens.split_at_mut(k * np);
            let row = &mut cur[..np];
            for j in 0..h {
                for (i, xi) in x.iter().enumerate() {
                    row[j * n_x + i] = g[j] * xi;
                }
                row[off_bf + j] = g[j];
                row[off_wx + j] = s[j];
            }
            row[off_bx] = 1.0;
            for i in (0..model.m_y).filter(|_| measured.is_none()) {
                let dfdx: f64 = (0..h).map(|j| g[j] * model.w_fx[j * n_x + i]).sum();
                if dfdx != 0.0 && k - 1 - i >= p {
                    let prev = &past[(k - 1 - i) * np..(k - i) * np];
                    for (r, q) in row.iter_mut().zip(prev) {
                        *r += dfdx * q;
                    }
                }
            }
        }
    }
    z.drain(..p);
    if sensitivities {
        sens.drain(..p * np);
    }
    Ok((z, sens))
}

fn check_inputs(model: &NoeModel, u: &[f64], y_init: &[f64]) -> Result<()> {
    model.validate()?;
    if y_init.len() != model.m_y {
        return config_err(format!("{} initial outputs for {} output lags", y_init.len(), model.m_y));
    }
    if u.len() < model.lag() {
        return domain_err(format!("input of length {} shorter than the model lag {}", u.len(), model.lag()));
    }
    Ok(())
}

fn standardize(model: &NoeModel, u: &[f64], y_init: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let sc = &model.scaling;
    (
        u.iter().map(|x| (x - sc.u_mean) / sc.u_std).collect(),
        y_init.iter().map(|y| (y - sc.y_mean) / sc.y_std).collect(),
    )
}

/// Free-run simulation. `y_init` holds the outputs at samples
/// `lag-m_y..lag`; the result covers samples `lag..u.len()`, so its length
/// is `u.len() - lag`.
pub fn noe_simulate(model: &NoeModel, u: &[f64], y_init: &[f64]) -> Result<Vec<f64>> {
    check_inputs(model, u, y_init)?;
    let (v, z0) = standardize(model, u, y_init);
    let (z, _) = run_standardized(model, &v, &z0, false, None)?;
    let sc = &model.scaling;
    Ok(z.into_iter().map(|z| sc.y_mean + sc.y_std * z).collect())
}

/// Simulation from rest: input and output are zero before sample 0, and the
/// result has the same length as `u`.
pub fn noe_simulate_from_rest(model: &NoeModel, u: &[f64]) -> Result<Vec<f64>> {
    let p = model.lag();
    let mut padded = vec![0.0; p];
    padded.extend_from_slice(u);
    noe_simulate(model, &padded, &vec![0.0; model.m_y])
}

/// Free-run prediction with its Jacobian `∂ŷ/∂η`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoeSensitivity {
    pub prediction: Vec<f64>,
    /// Row-major, `prediction.len() × num_params`.
    pub jacobian: Vec<f64>,
    pub cols: usize,
}

impl NoeSensitivity {
    pub fn rows(&self) -> usize {
        self.prediction.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.jacobian[row * self.cols + col]
    }
}

/// Jacobian of the free-run prediction by forward sensitivity propagation.
pub fn noe_jacobian(model: &NoeModel, u: &[f64], y_init: &[f64]) -> Result<NoeSensitivity> {
    check_inputs(model, u, y_init)?;
    let (v, z0) = standardize(model, u, y_init);
    let (z, mut jac) = run_standardized(model, &v, &z0, true, None)?;
    let sc = model.scaling;
    jac.iter_mut().for_each(|j| *j *= sc.y_std);
    Ok(NoeSensitivity {
        prediction: z.into_iter().map(|z| sc.y_mean + sc.y_std * z).collect(),
        jacobian: jac,
        cols: model.num_params(),
    })
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return domain_err(format!("length mismatch: {} vs {}", y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return domain_err("RMSE of empty sequences");
    }
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub m_y: usize,
    pub m_u: usize,
    pub hidden: usize,
    pub max_iterations: usize,
    pub lambda_init: f64,
    pub lambda_increase: f64,
    pub lambda_decrease: f64,
    pub lambda_max: f64,
    pub cost_rel_tol: f64,
    pub grad_tol: f64,
    pub restarts: usize,
    /// Levenberg–Marquardt iterations on the one-step-ahead error before the
    /// simulation-error fit; zero disables the prefit.
    pub prefit_iterations: usize,
    /// Multiplier on the `1/sqrt(fan-in)` initialization bound.
    pub init_scale: f64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_y: 2,
            m_u: 2,
            hidden: 8,
            max_iterations: 300,
            lambda_init: 1e-2,
            lambda_increase: 10.0,
            lambda_decrease: 10.0,
            lambda_max: 1e12,
            cost_rel_tol: 1e-9,
            grad_tol: 1e-8,
            restarts: 3,
            prefit_iterations: 100,
            init_scale: 1.0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_y == 0 || self.hidden == 0 || self.restarts == 0 || self.max_iterations == 0 {
            return config_err("lags, hidden width, restarts and iterations must be positive");
        }
        let pos = [self.lambda_init, self.lambda_max, self.init_scale, self.cost_rel_tol, self.grad_tol];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return config_err("training tolerances and damping must be positive");
        }
        if !(self.lambda_increase > 1.0 && self.lambda_decrease > 1.0) {
            return config_err("damping adaptation factors must exceed one");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStop {
    Stationary,
    CostConverged,
    DampingLimit,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Mean squared standardized simulation error of the trial point.
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: NoeModel,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub stop: TrainStop,
    pub trace: Vec<TraceEntry>,
    /// Final cost of every restart, in restart order.
    pub restart_costs: Vec<f64>,
}

impl TrainOutcome {
    /// Costs of the accepted iterates, starting with the initial cost.
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.trace.iter().filter(|t| t.accepted).map(|t| t.cost).collect()
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for t in &self.trace {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_training_data(u: &[f64], y: &[f64], model: &NoeModel) -> Result<()> {
    if u.len() != y.len() {
        return domain_err(format!("training input and output lengths differ: {} vs {}", u.len(), y.len()));
    }
    if u.len() <= model.lag() + 1 {
        return domain_err("training data shorter than the model lag");
    }
    if u.iter().chain(y).any(|v| !v.is_finite()) {
        return domain_err("non-finite training sample");
    }
    Ok(())
}

fn sq_cost(target: &[f64], pred: &[f64]) -> f64 {
    target.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / target.len() as f64
}

/// Levenberg–Marquardt from a given network; the scaling of `init` is kept.
///
/// With `prefit_iterations > 0` the network is first fitted on the
/// one-step-ahead error; the simulation-error fit then starts from whichever
/// of the two networks simulates better.
pub fn train_from(init: &NoeModel, u: &[f64], y: &[f64], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    init.validate()?;
    check_training_data(u, y, init)?;
    let sc = init.scaling;
    let v: Vec<f64> = u.iter().map(|x| (x - sc.u_mean) / sc.u_std).collect();
    let z_all: Vec<f64> = y.iter().map(|x| (x - sc.y_mean) / sc.y_std).collect();
    let mut start = init.clone();
    if config.prefit_iterations > 0 {
        let pre = lm_fit(init, &v, &z_all, config, config.prefit_iterations, true)?;
        let free = |m: &NoeModel| -> f64 {
            let p = m.lag();
            run_standardized(m, &v, &z_all[p - m.m_y..p], false, None)
                .map_or(f64::INFINITY, |(pr, _)| sq_cost(&z_all[p..], &pr))
        };
        if free(&pre.model) <= free(init) {
            start = pre.model;
        }
    }
    lm_fit(&start, &v, &z_all, config, config.max_iterations, false)
}

fn lm_fit(
    init: &NoeModel,
    v: &[f64],
    z_all: &[f64],
    config: &TrainConfig,
    max_iterations: usize,
    one_step: bool,
) -> Result<TrainOutcome> {
    let mut model = init.clone();
    let p = model.lag();
    let z_init = &z_all[p - model.m_y..p];
    let measured = one_step.then_some(z_all);
    let target = &z_all[p..];
    let n = target.len() as f64;
    let np = model.num_params();

    let mut eta = model.params();
    let (mut pred, mut jac) = run_standardized(&model, v, z_init, true, measured)?;
    let mut cost = sq_cost(target, &pred);
    let initial_cost = cost;
    let mut lambda = config.lambda_init;
    let mut trace = vec![TraceEntry { iteration: 0, cost, lambda, accepted: true }];
    let mut stop = TrainStop::IterationLimit;
    let mut iterations = 0;

    'outer: while iterations < max_iterations {
        let resid: Vec<f64> = target.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let jm = Mat::<f64>::from_fn(resid.len(), np, |i, j| jac[i * np + j]);
        let rc = Col::<f64>::from_fn(resid.len(), |i| resid[i]);
        let jtj = jm.transpose() * &jm;
        let jtr = jm.transpose() * &rc;
        let grad_norm = (0..np).map(|i| jtr.read(i).powi(2)).sum::<f64>().sqrt() / n;
        if grad_norm <= config.grad_tol || cost == 0.0 {
            stop = TrainStop::Stationary;
            break;
        }
        loop {
            if iterations >= max_iterations {
                break 'outer;
            }
            iterations += 1;
            let mut a = jtj.clone();
            for i in 0..np {
                a.write(i, i, a.read(i, i) + lambda);
            }
            let trial_cost = match a.cholesky(Side::Lower) {
                Ok(ch) => {
                    let delta = ch.solve(&jtr);
                    let cand: Vec<f64> = eta.iter().enumerate().map(|(i, e)| e + delta.read(i)).collect();
                    let mut m = model.clone();
                    m.set_params(&cand)?;
                    match run_standardized(&m, v, z_init, false, measured) {
                        Ok((pr, _)) => {
                            let c = sq_cost(target, &pr);
                            if c.is_finite() && c < cost {
                                Some((c, cand, m))
                            } else {
                                trace.push(TraceEntry { iteration: iterations, cost: c, lambda, accepted: false });
                                None
                            }
                        }
                        Err(_) => None,
                    }
                }
                Err(_) => None,
            };
            match trial_cost {
                Some((c, cand, m)) => {
                    trace.push(TraceEntry { iteration: iterations, cost: c, lambda, accepted: true });
                    let rel = (cost - c) / cost;
                    model = m;
                    eta = cand;
                    cost = c;
                    lambda = (lambda / config.lambda_decrease).max(1e-300);
                    let (pr, jc) = run_standardized(&model, v, z_init, true, measured)?;
                    pred = pr;
                    jac = jc;
                    if rel < config.cost_rel_tol {
                        stop = TrainStop::CostConverged;
                        break 'outer;
                    }
                    break;
                }
                None => {
                    lambda *= config.lambda_increase;
                    if lambda > config.lambda_max {
                        stop = TrainStop::DampingLimit;
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(TrainOutcome { model, cost, initial_cost, iterations, stop, trace, restart_costs: vec![cost] })
}

/// Multi-start training: restart `r` is initialized from
/// `derive_seed(seed, r, "restart")` and the lowest final cost wins (ties go
/// to the earliest restart).
pub fn train_lm(u: &[f64], y: &[f64], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let scaling = if config.standardize { Scaling::fit(u, y) } else { Scaling::default() };
    let fits: Vec<Result<TrainOutcome>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, r as u64, "restart"));
            let mut init = NoeModel::random(config.m_y, config.m_u, config.hidden, config.init_scale, &mut rng);
            init.scaling = scaling;
            train_from(&init, u, y, config)
        })
        .collect();
    let costs: Vec<f64> = fits.iter().map(|f| f.as_ref().map_or(f64::INFINITY, |o| o.cost)).collect();
    let mut best: Option<TrainOutcome> = None;
    let mut first_err = None;
    for fit in fits {
        match fit {
            Ok(o) if best.as_ref().is_none_or(|b| o.cost < b.cost) => best = Some(o),
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(mut b) => {
            b.restart_costs = costs;
            Ok(b)
        }
        None => Err(first_err.unwrap_or_else(|| Error::Precondition("no training restarts ran".into()))),
    }
}
