//! Nonlinear mass-spring-damper benchmark, its linearization, fixed-step RK4
//! integration and the conversion of trajectories into feature/output
//! datasets `(y(k-1), dy(k-1)) -> y(k)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::gp::Points;
use crate::signals::{multisine_sequence, MultisineConfig, SignalParams};

/// Physical constants of the oscillator. The spring is mounted transversally:
/// `a` is its tensionless length and `l` its length when compressed to the
/// centre line, so the restoring force hardens with displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsdParams {
    /// Mass (kg).
    pub m: f64,
    /// Spring stiffness (N/m).
    pub s: f64,
    /// Damping (N s/m).
    pub c: f64,
    /// Compressed length (m).
    pub l: f64,
    /// Tensionless geometry constant (m).
    pub a: f64,
}

impl Default for MsdParams {
    fn default() -> Self {
        Self { m: 5.0, s: 800.0, c: 10.0, l: 0.17, a: 0.25 }
    }
}

impl MsdParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.s, self.c, self.l, self.a];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return config_err(format!("mass-spring-damper constants must be positive: {self:?}"));
        }
        if self.a <= self.l {
            return config_err(format!("geometry requires a > l, got a = {}, l = {}", self.a, self.l));
        }
        Ok(())
    }

    /// Restoring force `s x (sqrt(x² + a²) - l) / sqrt(x² + a²)`.
    pub fn spring_force(&self, x1: f64) -> f64 {
        let r = (x1 * x1 + self.a * self.a).sqrt();
        self.s * (x1 / r) * (r - self.l)
    }

    /// Tangent stiffness `d spring_force / d x1 = s (1 - l a² / r³)`.
    pub fn tangent_stiffness(&self, x1: f64) -> f64 {
        let r = (x1 * x1 + self.a * self.a).sqrt();
        self.s * (1.0 - self.l * self.a * self.a / (r * r * r))
    }
}

/// Right-hand side of the nonlinear oscillator for state `(position, velocity)`.
pub fn msd_derivative(state: [f64; 2], force: f64, params: &MsdParams) -> [f64; 2] {
    let [x1, x2] = state;
    let r = (x1 * x1 + params.a * params.a).sqrt();
    let spring = params.s * (x1 / r) * (r - params.l);
    [x2, (force - spring - params.c * x2) / params.m]
}

/// Continuous-time linear model `ẋ = A x + B F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    /// Position at which the spring was linearized.
    pub x1_lin: f64,
}

impl LinearModel {
    pub fn derivative(&self, state: [f64; 2], force: f64) -> [f64; 2] {
        [
            self.a[0][0] * state[0] + self.a[0][1] * state[1] + self.b[0] * force,
            self.a[1][0] * state[0] + self.a[1][1] * state[1] + self.b[1] * force,
        ]
    }

    /// Eigenvalues of `A` as `(re, im)` pairs.
    pub fn eigenvalues(&self) -> [(f64, f64); 2] {
        let tr = self.a[0][0] + self.a[1][1];
        let det = self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0];
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [(tr / 2.0 + s, 0.0), (tr / 2.0 - s, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [(tr / 2.0, s), (tr / 2.0, -s)]
        }
    }

    pub fn is_hurwitz(&self) -> bool {
        self.eigenvalues().iter().all(|(re, _)| *re < 0.0)
    }
}

/// Jacobian linearization at the unforced equilibrium.
pub fn linearize_msd(params: &MsdParams) -> LinearModel {
    linearize_msd_at(params, 0.0)
}

/// Linearization of the spring about position `x1`, written as a linear
/// model about the origin: the stiffness is the tangent stiffness at `x1`.
pub fn linearize_msd_at(params: &MsdParams, x1: f64) -> LinearModel {
    let k_lin = params.tangent_stiffness(x1);
    LinearModel { a: [[0.0, 1.0], [-k_lin / params.m, -params.c / params.m]], b: [0.0, 1.0 / params.m], x1_lin: x1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NonlinearMsd,
    LinearApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Nonlinear(MsdParams),
    Linear(LinearModel),
}

/// Discrete-time input/output view of a continuous model sampled at `fs`.
/// The output is the position; the state is `(position, velocity)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoModel {
    pub dynamics: Dynamics,
    pub fs: f64,
}

impl IoModel {
    pub fn nonlinear(params: MsdParams, fs: f64) -> Result<Self> {
        params.validate()?;
        Self::checked(Dynamics::Nonlinear(params), fs)
    }

    pub fn linear(model: LinearModel, fs: f64) -> Result<Self> {
        Self::checked(Dynamics::Linear(model), fs)
    }

    fn checked(dynamics: Dynamics, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return config_err(format!("sampling frequency must be positive, got {fs}"));
        }
        Ok(Self { dynamics, fs })
    }

    pub fn kind(&self) -> ModelKind {
        match self.dynamics {
            Dynamics::Nonlinear(_) => ModelKind::NonlinearMsd,
            Dynamics::Linear(_) => ModelKind::LinearApprox,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    #[inline]
    pub fn derivative(&self, state: [f64; 2], force: f64) -> [f64; 2] {
        match &self.dynamics {
            Dynamics::Nonlinear(p) => msd_derivative(state, force, p),
            Dynamics::Linear(m) => m.derivative(state, force),
        }
    }
}

#[inline]
fn axpy(x: [f64; 2], h: f64, d: [f64; 2]) -> [f64; 2] {
    [x[0] + h * d[0], x[1] + h * d[1]]
}

/// One classical RK4 step with the force evaluated at the stage times.
#[inline]
fn rk4_step<F: Fn(f64) -> f64>(model: &IoModel, x: [f64; 2], t: f64, dt: f64, force: &F) -> [f64; 2] {
    let half = 0.5 * dt;
    let f_mid = force(t + half);
    let k1 = model.derivative(x, force(t));
    let k2 = model.derivative(axpy(x, half, k1), f_mid);
    let k3 = model.derivative(axpy(x, half, k2), f_mid);
    let k4 = model.derivative(axpy(x, dt, k3), force(t + dt));
    [
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates with the input sequence held constant over each step.
/// Returns `u.len() + 1` states, the first one being `x0`.
pub fn integrate_rk4(model: &IoModel, x0: [f64; 2], u: &[f64], dt: f64) -> Result<Vec<[f64; 2]>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return config_err(format!("step size must be positive, got {dt}"));
    }
    let mut traj = Vec::with_capacity(u.len() + 1);
    let mut x = x0;
    traj.push(x);
    for (step, &f) in u.iter().enumerate() {
        x = rk4_step(model, x, 0.0, dt, &|_| f);
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::Divergence { step, context: format!("state {x:?}") });
        }
        traj.push(x);
    }
    Ok(traj)
}

/// Integrates `steps` steps of a continuous-time force `force(t)`.
pub fn integrate_rk4_continuous<F: Fn(f64) -> f64>(
    model: &IoModel,
    x0: [f64; 2],
    force: F,
    dt: f64,
    steps: usize,
) -> Result<Vec<[f64; 2]>> {
    let mut traj = Vec::with_capacity(steps + 1);
    let mut x = x0;
    traj.push(x);
    for step in 0..steps {
        x = rk4_step(model, x, step as f64 * dt, dt, &force);
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::Divergence { step, context: format!("state {x:?}") });
        }
        traj.push(x);
    }
    Ok(traj)
}

/// Output sequence `y(k) = position at sample k`, `k = 0..u.len()`, from `x0`.
pub fn simulate_output(model: &IoModel, x0: [f64; 2], u: &[f64]) -> Result<Vec<f64>> {
    let traj = integrate_rk4(model, x0, u, model.dt())?;
    Ok(traj[..u.len()].iter().map(|x| x[0]).collect())
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<SignalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub warmup_periods: usize,
}

/// One window of input/output samples plus the sample that precedes it.
///
/// Index 0 of each column is the sample just before the window; rows
/// `1..=len()` are the data pairs with feature `(y[i-1], dy[i-1])` and
/// output `y[i]`, where `dy[i] = y[i] - y[i-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset from raw sequences; `y_before` is the output one
    /// sample before `y[0]`.
    pub fn from_sequences(u: Vec<f64>, y: Vec<f64>, y_before: f64, provenance: Provenance) -> Result<Self> {
        if u.len() != y.len() || y.is_empty() {
            return config_err(format!("input/output length mismatch ({} vs {})", u.len(), y.len()));
        }
        let dy = y
            .iter()
            .scan(y_before, |prev, &v| {
                let d = v - *prev;
                *prev = v;
                Some(d)
            })
            .collect();
        Ok(Self { u, y, dy, provenance })
    }

    /// Number of feature/output rows.
    pub fn len(&self) -> usize {
        self.y.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outputs(&self) -> &[f64] {
        &self.y[1..]
    }

    /// Feature rows `(y(k-1), scale * dy(k-1))`.
    pub fn feature_points(&self, increment_scale: f64) -> Points {
        let mut data = Vec::with_capacity(2 * self.len());
        for i in 0..self.len() {
            data.push(self.y[i]);
            data.push(increment_scale * self.dy[i]);
        }
        Points::from_flat(2, data).expect("two columns")
    }

    pub fn features(&self) -> Points {
        self.feature_points(1.0)
    }

    /// Largest deviation from `dy[i] = y[i] - y[i-1]`.
    pub fn increment_residual(&self) -> f64 {
        (1..self.y.len()).map(|i| (self.dy[i] - (self.y[i] - self.y[i - 1])).abs()).fold(0.0, f64::max)
    }

    /// Writes `k,u,y,dy` rows and a JSON provenance sidecar next to `path`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "u", "y", "dy"])?;
        for i in 0..self.y.len() {
            w.write_record([
                i.to_string(),
                format!("{:e}", self.u[i]),
                format!("{:e}", self.y[i]),
                format!("{:e}", self.dy[i]),
            ])?;
        }
        w.flush()?;
        let sidecar = path.with_extension("json");
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.provenance)?)?;
        Ok(())
    }

    /// Reads a `k,u,y,dy` CSV (the sidecar is optional).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("{} has no '{name}' column", path.display())))
        };
        let (cu, cy) = (col("u")?, col("y")?);
        let cdy = col("dy").ok();
        let (mut u, mut y, mut dy) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let get = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("unparsable value in {}", path.display())))
            };
            u.push(get(cu)?);
            y.push(get(cy)?);
            if let Some(c) = cdy {
                dy.push(get(c)?);
            }
        }
        if y.len() < 2 {
            return config_err(format!("{} holds fewer than two samples", path.display()));
        }
        if cdy.is_none() {
            let y_before = y[0];
            return Self::from_sequences(u, y, y_before, Provenance::default());
        }
        let sidecar = path.with_extension("json");
        let provenance = match std::fs::read_to_string(&sidecar) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(_) => Provenance::default(),
        };
        let ds = Self { u, y, dy, provenance };
        let res = ds.increment_residual();
        if res > 1e-12 {
            return config_err(format!("dy column inconsistent with y (max deviation {res:e})"));
        }
        Ok(ds)
    }
}

/// Simulates `warmup_periods + 1` periods of the multisine and keeps the
/// last period as a dataset.
pub fn simulate_dataset(
    model: &IoModel,
    params: &SignalParams,
    config: &MultisineConfig,
    x0: [f64; 2],
    warmup_periods: usize,
) -> Result<Dataset> {
    if !(x0[0].is_finite() && x0[1].is_finite()) {
        return config_err("initial state must be finite");
    }
    let n = config.n;
    let total = (warmup_periods + 1) * n;
    let u = multisine_sequence(params, config, total)?;
    let traj = integrate_rk4(model, x0, &u, model.dt()).map_err(|e| match e {
        Error::Divergence { step, context } => {
            Error::Divergence { step, context: format!("{context}; theta = {:?}", params.to_vector()) }
        }
        other => other,
    })?;
    let start = warmup_periods * n;
    // Samples start-1 ..= start+n-1; before t = 0 the state is held at x0.
    let pos = |k: isize| if k < 0 { x0[0] } else { traj[k as usize][0] };
    let y: Vec<f64> = (start as isize - 1..(start + n) as isize).map(pos).collect();
    let u_win: Vec<f64> =
        (start as isize - 1..(start + n) as isize).map(|k| if k < 0 { 0.0 } else { u[k as usize] }).collect();
    let y_before = pos(start as isize - 2);
    Dataset::from_sequences(
        u_win,
        y,
        y_before,
        Provenance { model: Some(model.kind()), theta: Some(params.clone()), seed: None, warmup_periods },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use std::f64::consts::PI;

    fn defaults() -> MsdParams {
        MsdParams::default()
    }

    #[test]
    fn derivative_examples() {
        let p = defaults();
        assert_eq!(msd_derivative([0.0, 0.0], 0.0, &p), [0.0, 0.0]);
        assert_eq!(msd_derivative([0.0, 1.0], 0.0, &p), [1.0, -2.0]);
        assert_eq!(msd_derivative([0.0, 0.0], 5.0, &p), [0.0, 1.0]);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = defaults();
        p.a = 0.1;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = defaults();
        p.m = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn linearization_at_origin() {
        let p = defaults();
        let lin = linearize_msd(&p);
        let k_lin = -lin.a[1][0] * p.m;
        assert!((k_lin - 256.0).abs() < 1e-9);
        assert!(lin.is_hurwitz());
        let tr = lin.a[0][0] + lin.a[1][1];
        let det = lin.a[0][0] * lin.a[1][1] - lin.a[0][1] * lin.a[1][0];
        assert!((tr + 2.0).abs() < 1e-12 && (det - 51.2).abs() < 1e-9);
        let mut heavy = p;
        heavy.m *= 2.0;
        let lin2 = linearize_msd(&heavy);
        assert!((lin2.b[1] - lin.b[1] / 2.0).abs() < 1e-15);
        assert!((lin2.a[1][0] - lin.a[1][0] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_stiffness_matches_finite_difference_of_spring() {
        let p = defaults();
        for x in [-0.3, -0.02, 0.0, 0.01, 0.2] {
            let h = 1e-6;
            let fd = (p.spring_force(x + h) - p.spring_force(x - h)) / (2.0 * h);
            assert!((fd - p.tangent_stiffness(x)).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_input_from_rest_stays_at_rest() {
        let model = IoModel::nonlinear(defaults(), 100.0).unwrap();
        let traj = integrate_rk4(&model, [0.0, 0.0], &[0.0; 500], 0.01).unwrap();
        assert_eq!(traj.len(), 501);
        assert!(traj.iter().all(|x| *x == [0.0, 0.0]));
    }

    #[test]
    fn divergence_reports_step() {
        let unstable = LinearModel { a: [[0.0, 1.0], [1e6, 0.0]], b: [0.0, 1.0], x1_lin: 0.0 };
        let model = IoModel::linear(unstable, 100.0).unwrap();
        let err = integrate_rk4(&model, [1.0, 0.0], &vec![0.0; 100_000], 0.01).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn free_response_dissipates_energy() {
        let model = IoModel::nonlinear(defaults(), 100.0).unwrap();
        for x0 in [[0.05, 0.0], [-0.3, 1.0], [0.0, -2.0]] {
            let traj = integrate_rk4(&model, x0, &[0.0; 1000], 0.01).unwrap();
            let norm = |x: [f64; 2]| (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert!(norm(traj[1000]) < norm(x0));
        }
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        let model = IoModel::nonlinear(defaults(), 100.0).unwrap();
        let force = |t: f64| 20.0 * (2.0 * PI * t).sin();
        let end = |dt: f64| {
            let steps = (2.0 / dt).round() as usize;
            *integrate_rk4_continuous(&model, [0.01, 0.0], force, dt, steps).unwrap().last().unwrap()
        };
        let reference = end(0.04 / 256.0);
        let err = |x: [f64; 2]| ((x[0] - reference[0]).powi(2) + (x[1] - reference[1]).powi(2)).sqrt();
        let pts: Vec<(f64, f64)> =
            [0.04, 0.02, 0.01, 0.005].iter().map(|&dt| (f64::ln(dt), err(end(dt)).ln())).collect();
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / 4.0, b + y / 4.0));
        let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum::<f64>();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn small_signal_agreement_between_linear_and_nonlinear() {
        let cfg = MultisineConfig::desk();
        let mut rng = rng_from_seed(4);
        let params = SignalParams::random_phase(cfg.num_lines(), 0.1, &mut rng);
        let p = defaults();
        let nl = simulate_dataset(&IoModel::nonlinear(p, cfg.fs).unwrap(), &params, &cfg, [0.0; 2], 2).unwrap();
        let li =
            simulate_dataset(&IoModel::linear(linearize_msd(&p), cfg.fs).unwrap(), &params, &cfg, [0.0; 2], 2).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let diff: Vec<f64> = nl.outputs().iter().zip(li.outputs()).map(|(a, b)| a - b).collect();
        assert!(rms(&diff) / rms(li.outputs()) < 0.02);
    }

    #[test]
    fn dataset_from_zero_signal_is_zero() {
        let cfg = MultisineConfig::desk();
        let model = IoModel::linear(linearize_msd(&defaults()), cfg.fs).unwrap();
        let ds = simulate_dataset(&model, &SignalParams::zeros(cfg.num_lines()), &cfg, [0.0; 2], 2).unwrap();
        assert_eq!(ds.len(), cfg.n);
        assert!(ds.y.iter().chain(&ds.dy).all(|v| *v == 0.0));
    }

    #[test]
    fn linear_model_reaches_periodic_steady_state() {
        let cfg = MultisineConfig::desk();
        let model = IoModel::linear(linearize_msd(&defaults()), cfg.fs).unwrap();
        let mut rng = rng_from_seed(8);
        let params = SignalParams::random_phase(cfg.num_lines(), 8.0, &mut rng);
        let u = multisine_sequence(&params, &cfg, 5 * cfg.n).unwrap();
        let traj = integrate_rk4(&model, [0.0; 2], &u, model.dt()).unwrap();
        for k in 0..cfg.n {
            let (a, b) = (traj[3 * cfg.n + k][0], traj[4 * cfg.n + k][0]);
            assert!((a - b).abs() < 1e-6 * a.abs().max(0.01), "{k} {a} {b}");
        }
        let ds = simulate_dataset(&model, &params, &cfg, [0.0; 2], 2).unwrap();
        assert!(ds.increment_residual() < 1e-12);
        assert_eq!(ds.y[1..], traj[2 * cfg.n..3 * cfg.n].iter().map(|x| x[0]).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let cfg = MultisineConfig { fs: 100.0, n: 64, l_min: 2, l_max: 8, stride: 3 };
        let model = IoModel::nonlinear(defaults(), cfg.fs).unwrap();
        let mut rng = rng_from_seed(1);
        let params = SignalParams::random_phase(cfg.num_lines(), 8.0, &mut rng);
        let ds = simulate_dataset(&model, &params, &cfg, [0.0; 2], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        assert_eq!(Dataset::read_csv(&path).unwrap(), ds);
    }
}
