//! Squared-exponential Gaussian-process regression and the V-optimal
//! space-filling cost (mean posterior variance over anchor points).
//!
//! The Gram matrix is regularized by the noise variance, `K + σ_ε² I`, and
//! factorized once per dataset; every posterior query then costs one
//! triangular solve.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::cholesky::llt::compute::{cholesky_in_place, cholesky_in_place_req};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Parallelism};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Kernel hyperparameters.
///
/// `lambda_diag` holds the diagonal of `Λ` in
/// `κ(x, x') = σ_f² exp(-½ (x - x')ᵀ Λ⁻¹ (x - x'))`, i.e. squared length
/// scales in feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub sigma_f2: f64,
    pub lambda_diag: Vec<f64>,
    pub sigma_eps2: f64,
    /// Initial diagonal jitter added on top of the noise variance.
    pub jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        let sigma_f2 = 10.0_f64.sqrt();
        Self { sigma_f2, lambda_diag: vec![0.05, 0.40], sigma_eps2: 1.0, jitter: 1e-10 * sigma_f2 }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f2.is_finite() && self.sigma_f2 > 0.0) {
            return config_err(format!("sigma_f2 must be positive, got {}", self.sigma_f2));
        }
        if self.lambda_diag.is_empty() || self.lambda_diag.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return config_err("kernel widths must be positive");
        }
        if !(self.sigma_eps2.is_finite() && self.sigma_eps2 >= 0.0) {
            return config_err("sigma_eps2 must be non-negative");
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return config_err("jitter must be non-negative");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lambda_diag.len()
    }

    fn max_jitter(&self) -> f64 {
        (1e-6 * self.sigma_f2).max(self.jitter)
    }
}

/// Row-major point set of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return config_err(format!("{} values do not form rows of dimension {dim}", data.len()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return config_err(format!("row of dimension {} in a {dim}-dimensional set", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return config_err("dimension mismatch when appending a point");
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        for v in &self.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

#[inline]
fn se_unchecked(x: &[f64], xp: &[f64], inv_lambda: &[f64], sigma_f2: f64) -> f64 {
    let q: f64 = x.iter().zip(xp).zip(inv_lambda).map(|((a, b), il)| (a - b) * (a - b) * il).sum();
    sigma_f2 * (-0.5 * q).exp()
}

fn inverse_widths(config: &GpConfig) -> Vec<f64> {
    config.lambda_diag.iter().map(|l| 1.0 / l).collect()
}

/// Squared-exponential covariance between two feature points.
pub fn se_kernel(x: &[f64], xp: &[f64], config: &GpConfig) -> Result<f64> {
    if x.len() != config.dim() || xp.len() != config.dim() {
        return config_err(format!(
            "kernel of dimension {} evaluated at points of dimension {} and {}",
            config.dim(),
            x.len(),
            xp.len()
        ));
    }
    Ok(se_unchecked(x, xp, &inverse_widths(config), config.sigma_f2))
}

/// Lower Cholesky factor of `K + (σ_ε² + jitter) I` for a fixed point set.
#[derive(Debug, Clone)]
pub struct GramFactor {
    lower: Mat<f64>,
    fingerprint: u64,
    jitter: f64,
}

impl GramFactor {
    pub fn size(&self) -> usize {
        self.lower.nrows()
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The factor as a dense row-major lower-triangular matrix.
    pub fn lower_rows(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        (0..n).map(|i| (0..n).map(|j| if j <= i { self.lower.read(i, j) } else { 0.0 }).collect()).collect()
    }

    fn check(&self, points: &Points) -> Result<()> {
        if points.len() != self.size() || points.fingerprint() != self.fingerprint {
            return Err(Error::Contract("Gram factor was built from a different point set".into()));
        }
        Ok(())
    }

    fn solve_lower(&self, rhs: &mut Mat<f64>) {
        solve_lower_triangular_in_place(self.lower.as_ref(), rhs.as_mut(), Parallelism::None);
    }
}

/// Factorizes the regularized Gram matrix of `points`, escalating the
/// jitter ×10 (from `config.jitter`, at most `1e-6 σ_f²`) on failure.
pub fn gram_factorize(points: &Points, config: &GpConfig) -> Result<GramFactor> {
    config.validate()?;
    if points.dim() != config.dim() {
        return config_err(format!("points of dimension {} for a {}-dimensional kernel", points.dim(), config.dim()));
    }
    if points.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature value".into()));
    }
    let n = points.len();
    let inv = inverse_widths(config);
    let build = |diag: f64| {
        let mut gram = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            let xj = points.row(j);
            let col = gram.col_as_slice_mut(j);
            col[j] = config.sigma_f2 + diag;
            for (i, v) in col.iter_mut().enumerate().skip(j + 1) {
                *v = se_unchecked(points.row(i), xj, &inv, config.sigma_f2);
            }
        }
        gram
    };
    let req = cholesky_in_place_req::<f64>(n, Parallelism::None, Default::default())
        .map_err(|_| Error::Conditioning("workspace size overflow".into()))?;
    let mut mem = GlobalPodBuffer::new(req);

    let max_jitter = config.max_jitter();
    let mut jitter = config.jitter;
    loop {
        let mut work = build(config.sigma_eps2 + jitter);
        let ok = cholesky_in_place(
            work.as_mut(),
            Default::default(),
            Parallelism::None,
            PodStack::new(&mut mem),
            Default::default(),
        )
        .is_ok();
        if ok && (0..n).all(|i| work.read(i, i).is_finite() && work.read(i, i) > 0.0) {
            return Ok(GramFactor { lower: work, fingerprint: points.fingerprint(), jitter });
        }
        if jitter >= max_jitter {
            return Err(Error::Conditioning(format!(
                "Gram matrix of {n} points not positive definite with jitter {jitter:e}"
            )));
        }
        jitter = if jitter == 0.0 { 1e-10 * config.sigma_f2 } else { (jitter * 10.0).min(max_jitter) };
    }
}

/// Cross-covariance matrix `κ(X, queries)` (N × Q, column per query).
fn cross_covariance(points: &Points, queries: &Points, config: &GpConfig) -> Mat<f64> {
    let inv = inverse_widths(config);
    Mat::from_fn(points.len(), queries.len(), |i, j| se_unchecked(points.row(i), queries.row(j), &inv, config.sigma_f2))
}

/// Posterior of a zero-mean GP conditioned on a point set.
#[derive(Debug, Clone)]
pub struct GpPosterior<'a> {
    points: &'a Points,
    factor: GramFactor,
    config: &'a GpConfig,
}

impl<'a> GpPosterior<'a> {
    pub fn new(points: &'a Points, config: &'a GpConfig) -> Result<Self> {
        let factor = gram_factorize(points, config)?;
        Ok(Self { points, factor, config })
    }

    pub fn factor(&self) -> &GramFactor {
        &self.factor
    }

    /// Posterior variances at every query point.
    pub fn variances(&self, queries: &Points) -> Result<Vec<f64>> {
        posterior_variances(queries, self.points, &self.factor, self.config)
    }
}

fn check_query(x: &[f64], config: &GpConfig) -> Result<()> {
    if x.len() != config.dim() {
        return config_err(format!("query of dimension {} for a {}-dimensional kernel", x.len(), config.dim()));
    }
    Ok(())
}

/// Posterior variances `κ(x*, x*) - κ(x*, X) (K + σ_ε² I)⁻¹ κ(X, x*)` for
/// each row of `queries`, clamped to `[0, σ_f²]`.
pub fn posterior_variances(
    queries: &Points,
    points: &Points,
    factor: &GramFactor,
    config: &GpConfig,
) -> Result<Vec<f64>> {
    factor.check(points)?;
    for q in queries.rows() {
        check_query(q, config)?;
    }
    if points.is_empty() {
        return Ok(vec![config.sigma_f2; queries.len()]);
    }
    let mut z = cross_covariance(points, queries, config);
    factor.solve_lower(&mut z);
    Ok((0..queries.len())
        .map(|j| {
            let explained: f64 = (0..z.nrows()).map(|i| z.read(i, j) * z.read(i, j)).sum();
            (config.sigma_f2 - explained).clamp(0.0, config.sigma_f2)
        })
        .collect())
}

pub fn posterior_variance(x_star: &[f64], points: &Points, factor: &GramFactor, config: &GpConfig) -> Result<f64> {
    check_query(x_star, config)?;
    let q = Points::from_flat(config.dim(), x_star.to_vec())?;
    Ok(posterior_variances(&q, points, factor, config)?[0])
}

/// Posterior mean `κ(x*, X) (K + σ_ε² I)⁻¹ Y`.
pub fn posterior_mean(
    x_star: &[f64],
    points: &Points,
    outputs: &[f64],
    factor: &GramFactor,
    config: &GpConfig,
) -> Result<f64> {
    factor.check(points)?;
    check_query(x_star, config)?;
    if outputs.len() != points.len() {
        return config_err(format!("{} outputs for {} points", outputs.len(), points.len()));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let n = points.len();
    let mut alpha = Mat::from_fn(n, 1, |i, _| outputs[i]);
    factor.solve_lower(&mut alpha);
    solve_upper_triangular_in_place(factor.lower.as_ref().transpose(), alpha.as_mut(), Parallelism::None);
    let inv = inverse_widths(config);
    Ok((0..n).map(|i| se_unchecked(points.row(i), x_star, &inv, config.sigma_f2) * alpha.read(i, 0)).sum())
}

/// Mean posterior variance over the anchors, `(1/M) Σ_i ĉ(x̃_i)`.
pub fn v_cost(points: &Points, anchors: &Points, config: &GpConfig) -> Result<f64> {
    if anchors.is_empty() {
        return config_err("V-cost needs at least one anchor point");
    }
    let factor = gram_factorize(points, config)?;
    v_cost_with_factor(points, &factor, anchors, config)
}

pub fn v_cost_with_factor(points: &Points, factor: &GramFactor, anchors: &Points, config: &GpConfig) -> Result<f64> {
    let vars = posterior_variances(anchors, points, factor, config)?;
    Ok(vars.iter().sum::<f64>() / vars.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> Points {
        Points::from_rows(2, rows).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let cfg = GpConfig::default();
        let x = [0.03, -0.2];
        assert!((se_kernel(&x, &x, &cfg).unwrap() - 10.0_f64.sqrt()).abs() < 1e-15);
        assert!((se_kernel(&x, &x, &cfg).unwrap() - 3.1623).abs() < 1e-4);
        let xp = [0.03 + 0.05_f64.sqrt(), -0.2];
        let v = se_kernel(&x, &xp, &cfg).unwrap();
        assert!((v - cfg.sigma_f2 * (-0.5_f64).exp()).abs() < 1e-14);
        let mut prev = f64::INFINITY;
        for t in 0..50 {
            let p = [x[0] + 0.1 * t as f64, x[1] - 0.3 * t as f64];
            let k = se_kernel(&x, &p, &cfg).unwrap();
            assert!(k < prev || t == 0);
            prev = k;
        }
        assert!(prev < 1e-100);
        assert!(matches!(se_kernel(&[0.0], &[0.0, 1.0], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_point_factor_is_scalar_root() {
        let cfg = GpConfig::default();
        let f = gram_factorize(&pts(&[[0.01, 0.2]]), &cfg).unwrap();
        let expected = (cfg.sigma_f2 + cfg.sigma_eps2 + cfg.jitter).sqrt();
        assert!((f.lower_rows()[0][0] - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicated_rows_factorize_with_noise() {
        let cfg = GpConfig::default();
        let p = pts(&[[0.0, 0.0]; 40]);
        assert!(gram_factorize(&p, &cfg).is_ok());
    }

    #[test]
    fn duplicated_rows_without_noise_escalate_or_fail() {
        let cfg = GpConfig { sigma_eps2: 0.0, jitter: 0.0, ..GpConfig::default() };
        let p = pts(&[[0.0, 0.0]; 5]);
        match gram_factorize(&p, &cfg) {
            Ok(f) => assert!(f.jitter() > 0.0),
            Err(e) => assert!(matches!(e, Error::Conditioning(_))),
        }
    }

    #[test]
    fn prior_when_empty() {
        let cfg = GpConfig::default();
        let empty = Points::empty(2);
        let f = gram_factorize(&empty, &cfg).unwrap();
        assert_eq!(posterior_variance(&[0.0, 0.0], &empty, &f, &cfg).unwrap(), cfg.sigma_f2);
        assert_eq!(posterior_mean(&[0.0, 0.0], &empty, &[], &f, &cfg).unwrap(), 0.0);
        let anchors = pts(&[[0.0, 0.0], [0.1, 0.1]]);
        assert_eq!(v_cost(&empty, &anchors, &cfg).unwrap(), cfg.sigma_f2);
    }

    #[test]
    fn interpolates_observed_point_without_noise() {
        let cfg = GpConfig { sigma_eps2: 0.0, jitter: 1e-14, ..GpConfig::default() };
        let p = pts(&[[0.02, 0.1], [-0.05, 0.5]]);
        let f = gram_factorize(&p, &cfg).unwrap();
        assert!(posterior_variance(&[0.02, 0.1], &p, &f, &cfg).unwrap() < 1e-6);
    }

    #[test]
    fn zero_outputs_give_zero_mean() {
        let cfg = GpConfig::default();
        let p = pts(&[[0.02, 0.1], [-0.05, 0.5], [0.0, 0.0]]);
        let f = gram_factorize(&p, &cfg).unwrap();
        for q in [[0.0, 0.0], [0.3, -1.0]] {
            assert_eq!(posterior_mean(&q, &p, &[0.0; 3], &f, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn stale_factor_is_rejected() {
        let cfg = GpConfig::default();
        let p = pts(&[[0.02, 0.1], [-0.05, 0.5]]);
        let f = gram_factorize(&p, &cfg).unwrap();
        let q = pts(&[[0.02, 0.1], [-0.05, 0.6]]);
        assert!(matches!(posterior_variance(&[0.0, 0.0], &q, &f, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn anchors_as_data_without_noise_drive_cost_to_zero() {
        let cfg = GpConfig { sigma_eps2: 0.0, jitter: 1e-12, ..GpConfig::default() };
        let anchors = pts(&[[-0.1, -0.8], [0.1, -0.8], [-0.1, 0.8], [0.1, 0.8], [0.0, 0.0]]);
        assert!(v_cost(&anchors, &anchors, &cfg).unwrap() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(GpConfig { sigma_f2: 0.0, ..GpConfig::default() }.validate().is_err());
        assert!(GpConfig { lambda_diag: vec![0.1, -1.0], ..GpConfig::default() }.validate().is_err());
        assert!(GpConfig { sigma_eps2: -1.0, ..GpConfig::default() }.validate().is_err());
        assert!(v_cost(&Points::empty(2), &Points::empty(2), &GpConfig::default()).is_err());
    }
}
