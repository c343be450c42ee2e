//! Parametrized excitation signals and the experiment-cost functional.
//!
//! The design signal is a multisine on a discrete frequency grid,
//! `u(k) = Σ_l A_l sin(2π l k / N + φ_l)`, whose amplitudes and phases form
//! the decision vector of the design problem. Three further families
//! (random-phase multisine, logarithmic sweep, uniform white noise) are used
//! as validation inputs.

use std::f64::consts::PI;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, domain_err, Error, Result};
use crate::seed::rng_from_seed;

/// Frequency grid of a periodic multisine: sampling frequency, period length
/// and the set of excited harmonic indices `l_min, l_min + stride, ..., ≤ l_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultisineConfig {
    /// Sampling frequency in Hz.
    pub fs: f64,
    /// Samples per period.
    pub n: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub stride: usize,
}

impl Default for MultisineConfig {
    /// 100 Hz, 1024 samples, every 7th line from 12 to 103 (14 lines, 1.2 to 10 Hz).
    fn default() -> Self {
        Self { fs: 100.0, n: 1024, l_min: 12, l_max: 103, stride: 7 }
    }
}

impl MultisineConfig {
    /// Reduced-length grid with the same excited band: 512 samples at 100 Hz,
    /// every 3rd line from 6 to 51 (16 lines, 1.2 to 10 Hz).
    pub fn desk() -> Self {
        Self { fs: 100.0, n: 512, l_min: 6, l_max: 51, stride: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return config_err(format!("sampling frequency must be positive, got {}", self.fs));
        }
        if self.n < 2 {
            return config_err("a multisine period needs at least 2 samples");
        }
        if self.stride == 0 {
            return config_err("line stride must be at least 1");
        }
        if self.l_min == 0 || self.l_min > self.l_max {
            return config_err(format!("invalid line range {}..={}", self.l_min, self.l_max));
        }
        // l * f0 <= fs/2  <=>  2 l <= N
        if 2 * self.lines().last().copied().unwrap_or(0) > self.n {
            return config_err("excited lines must lie at or below the Nyquist frequency");
        }
        Ok(())
    }

    /// Excited harmonic indices in increasing order.
    pub fn lines(&self) -> Vec<usize> {
        if self.stride == 0 {
            return Vec::new();
        }
        (self.l_min..=self.l_max).step_by(self.stride).collect()
    }

    pub fn num_lines(&self) -> usize {
        self.lines().len()
    }

    /// Frequency resolution `fs / N`.
    pub fn f0(&self) -> f64 {
        self.fs / self.n as f64
    }

    pub fn period_seconds(&self) -> f64 {
        self.n as f64 / self.fs
    }
}

/// Box bounds on the multisine amplitudes. Phases are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AmplitudeBounds {
    fn default() -> Self {
        Self { min: 0.0, max: 500.0 }
    }
}

impl AmplitudeBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return config_err(format!("invalid amplitude bounds [{}, {}]", self.min, self.max));
        }
        Ok(())
    }
}

/// Multisine decision vector: one amplitude (N) and one phase (rad) per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalParams {
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SignalParams {
    pub fn new(amplitudes: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != phases.len() {
            return config_err(format!("{} amplitudes but {} phases", amplitudes.len(), phases.len()));
        }
        Ok(Self { amplitudes, phases })
    }

    /// Every amplitude equal to `amplitude`, phases drawn uniformly on `[0, 2π)`.
    pub fn random_phase<R: Rng + ?Sized>(lines: usize, amplitude: f64, rng: &mut R) -> Self {
        let dist = Uniform::new(0.0, 2.0 * PI);
        Self { amplitudes: vec![amplitude; lines], phases: (0..lines).map(|_| dist.sample(rng)).collect() }
    }

    pub fn zeros(lines: usize) -> Self {
        Self { amplitudes: vec![0.0; lines], phases: vec![0.0; lines] }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Flattened decision vector `[A_1..A_L, φ_1..φ_L]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.amplitudes.clone();
        v.extend_from_slice(&self.phases);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() % 2 != 0 {
            return config_err(format!("decision vector has odd length {}", v.len()));
        }
        let (a, p) = v.split_at(v.len() / 2);
        Ok(Self { amplitudes: a.to_vec(), phases: p.to_vec() })
    }

    pub fn check_against(&self, config: &MultisineConfig) -> Result<()> {
        let lines = config.num_lines();
        if self.amplitudes.len() != lines || self.phases.len() != lines {
            return config_err(format!(
                "signal has {} amplitudes / {} phases but the grid excites {} lines",
                self.amplitudes.len(),
                self.phases.len(),
                lines
            ));
        }
        if self.to_vector().iter().any(|x| !x.is_finite()) {
            return config_err("signal parameters must be finite");
        }
        Ok(())
    }

    pub fn within_bounds(&self, bounds: &AmplitudeBounds) -> bool {
        self.amplitudes.iter().all(|&a| a >= bounds.min && a <= bounds.max)
    }

    /// `Σ A_l² / 2`, the power of one exact period.
    pub fn parseval_power(&self) -> f64 {
        self.amplitudes.iter().map(|a| 0.5 * a * a).sum()
    }
}

#[inline]
fn multisine_sample(amplitudes: &[f64], phases: &[f64], lines: &[usize], n: usize, k: usize) -> f64 {
    // Reducing the harmonic index product modulo N before the float
    // conversion makes u(k) and u(k + N) bit-identical.
    let k = k % n;
    let step = 2.0 * PI / n as f64;
    amplitudes.iter().zip(phases).zip(lines).map(|((a, p), &l)| a * (step * ((l * k) % n) as f64 + p).sin()).sum()
}

/// Value of the multisine at sample `k`.
pub fn multisine_eval(params: &SignalParams, config: &MultisineConfig, k: usize) -> Result<f64> {
    params.check_against(config)?;
    Ok(multisine_sample(&params.amplitudes, &params.phases, &config.lines(), config.n, k))
}

/// `len` consecutive samples starting at `k = 0`.
pub fn multisine_sequence(params: &SignalParams, config: &MultisineConfig, len: usize) -> Result<Vec<f64>> {
    params.check_against(config)?;
    let lines = config.lines();
    let period: Vec<f64> =
        (0..config.n).map(|k| multisine_sample(&params.amplitudes, &params.phases, &lines, config.n, k)).collect();
    Ok((0..len).map(|k| period[k % config.n]).collect())
}

/// Time average of the squared samples.
pub fn signal_power(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return domain_err("power of an empty sequence");
    }
    if u.iter().any(|x| !x.is_finite()) {
        return domain_err("power of a sequence with non-finite samples");
    }
    Ok(u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64)
}

/// Largest absolute sample.
pub fn peak_amplitude(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return domain_err("peak of an empty sequence");
    }
    Ok(u.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Experiment-cost functional minimized by the least-costly design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Mean squared input.
    #[default]
    Power,
    /// Peak absolute input.
    Peak,
}

pub fn experiment_cost(kind: CostKind, u: &[f64]) -> Result<f64> {
    match kind {
        CostKind::Power => signal_power(u),
        CostKind::Peak => peak_amplitude(u),
    }
}

/// Logarithmic sweep `A sin(2π f_min L exp(t / L))`, `L = T / ln(f_max / f_min)`,
/// evaluated at `t = k / fs`.
pub fn log_sweep_eval(k: usize, f_min: f64, f_max: f64, duration: f64, amplitude: f64, fs: f64) -> Result<f64> {
    let rate = sweep_rate(f_min, f_max, duration)?;
    if !(fs > 0.0) {
        return domain_err("sampling frequency must be positive");
    }
    let t = k as f64 / fs;
    Ok(amplitude * (2.0 * PI * f_min * rate * (t / rate).exp()).sin())
}

/// Instantaneous frequency (Hz) of the sweep at time `t`: `f_min exp(t / L)`.
pub fn log_sweep_frequency(t: f64, f_min: f64, f_max: f64, duration: f64) -> Result<f64> {
    let rate = sweep_rate(f_min, f_max, duration)?;
    Ok(f_min * (t / rate).exp())
}

fn sweep_rate(f_min: f64, f_max: f64, duration: f64) -> Result<f64> {
    if !(f_min > 0.0 && f_max > f_min) {
        return domain_err(format!("sweep needs f_max > f_min > 0, got [{f_min}, {f_max}]"));
    }
    if !(duration > 0.0) {
        return domain_err(format!("sweep duration must be positive, got {duration}"));
    }
    Ok(duration / (f_max / f_min).ln())
}

/// i.i.d. samples uniform on `[-h, h]` with `h = sqrt(3 variance)`.
pub fn white_uniform_sequence(seed: u64, variance: f64, n: usize) -> Result<Vec<f64>> {
    if !(variance > 0.0 && variance.is_finite()) {
        return domain_err(format!("white-noise variance must be positive, got {variance}"));
    }
    let h = white_half_width(variance);
    let dist = Uniform::new_inclusive(-h, h);
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

pub fn white_half_width(variance: f64) -> f64 {
    (3.0 * variance).sqrt()
}

/// Validation input families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSignalSpec {
    /// Random-phase multisine with a constant per-line amplitude. Without a
    /// `band`, the excited frequencies are those of the design grid; with a
    /// band, every line of the test grid inside `[f_min, f_max]` is excited.
    Multisine {
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        band: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    LogSweep {
        amplitude: f64,
        f_min: f64,
        f_max: f64,
        /// Seconds; defaults to the test-signal length.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<f64>,
    },
    WhiteUniform {
        variance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl TestSignalSpec {
    pub fn label(&self) -> String {
        match self {
            TestSignalSpec::Multisine { amplitude, .. } => format!("multisine_{amplitude}N"),
            TestSignalSpec::LogSweep { amplitude, .. } => format!("sweep_log_{amplitude}N"),
            TestSignalSpec::WhiteUniform { .. } => "white_uniform".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TestSignalSpec::Multisine { amplitude, band, .. } => {
                if !(amplitude.is_finite() && amplitude >= 0.0) {
                    return config_err("test multisine amplitude must be non-negative");
                }
                if let Some([lo, hi]) = band {
                    if !(lo > 0.0 && hi > lo) {
                        return config_err("test multisine band must satisfy 0 < f_min < f_max");
                    }
                }
            }
            TestSignalSpec::LogSweep { f_min, f_max, duration, .. } => {
                sweep_rate(f_min, f_max, duration.unwrap_or(1.0)).map_err(|e| Error::Config(e.to_string()))?;
            }
            TestSignalSpec::WhiteUniform { variance, .. } => {
                if !(variance > 0.0) {
                    return config_err("white-noise variance must be positive");
                }
            }
        }
        Ok(())
    }

    /// Seed actually used for this signal: the explicit one if present,
    /// otherwise `fallback`.
    pub fn effective_seed(&self, fallback: u64) -> u64 {
        match *self {
            TestSignalSpec::Multisine { seed, .. } | TestSignalSpec::WhiteUniform { seed, .. } => {
                seed.unwrap_or(fallback)
            }
            TestSignalSpec::LogSweep { .. } => fallback,
        }
    }

    /// Generates `n_test` samples. `design` supplies the sampling frequency
    /// and, for design-grid multisines, the excited frequencies.
    pub fn generate(&self, design: &MultisineConfig, n_test: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let seed = self.effective_seed(seed);
        match *self {
            TestSignalSpec::Multisine { amplitude, band, .. } => {
                let lines = test_multisine_lines(design, n_test, band)?;
                let mut rng = rng_from_seed(seed);
                let params = SignalParams::random_phase(lines.len(), amplitude, &mut rng);
                Ok((0..n_test)
                    .map(|k| multisine_sample(&params.amplitudes, &params.phases, &lines, n_test, k))
                    .collect())
            }
            TestSignalSpec::LogSweep { amplitude, f_min, f_max, duration } => {
                let duration = duration.unwrap_or(n_test as f64 / design.fs);
                (0..n_test).map(|k| log_sweep_eval(k, f_min, f_max, duration, amplitude, design.fs)).collect()
            }
            TestSignalSpec::WhiteUniform { variance, .. } => white_uniform_sequence(seed, variance, n_test),
        }
    }
}

/// Harmonic indices of a test multisine on an `n_test`-sample grid.
pub fn test_multisine_lines(design: &MultisineConfig, n_test: usize, band: Option<[f64; 2]>) -> Result<Vec<usize>> {
    let f0 = design.fs / n_test as f64;
    let mut lines: Vec<usize> = match band {
        Some([lo, hi]) => {
            let first = (lo / f0).ceil().max(1.0) as usize;
            let last = (hi / f0).floor() as usize;
            (first..=last).collect()
        }
        None => design.lines().iter().map(|&l| ((l as f64 * design.f0() / f0).round() as usize).max(1)).collect(),
    };
    lines.dedup();
    lines.retain(|&l| 2 * l <= n_test);
    if lines.is_empty() {
        return config_err("test multisine excites no line below Nyquist");
    }
    Ok(lines)
}

/// Writes a `(k, u)` CSV.
pub fn write_signal_csv(path: &Path, u: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "u"])?;
    for (k, x) in u.iter().enumerate() {
        w.write_record([k.to_string(), format!("{x:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `u` column of a CSV with at least a `u` header.
pub fn read_signal_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let col = r
        .headers()?
        .iter()
        .position(|h| h.trim() == "u")
        .ok_or_else(|| Error::Config(format!("{} has no 'u' column", path.display())))?;
    let mut u = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config(format!("unparsable sample in {}", path.display())))?;
        u.push(v);
    }
    Ok(u)
}
