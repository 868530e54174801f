//! Cost-model oracles.
//!
//! A [`CostModel`] hands the samplers a stochastic gradient `∇̂c_k(θ)` for one
//! datum, the matching scalar sample cost `c_k(θ)` used by the SPSA schemes,
//! Hessian-vector products for the Hessian-based scheme, and the full-data log
//! target for the Metropolis–Hastings baseline.
//!
//! For the Bayesian mixture models the gradient is
//! `−∇log p(θ) − T ∇log p(y_k | θ)` and the sample cost is its antiderivative
//! `c_k(θ) = −log p(θ) − T log p(y_k | θ)`; averaged over one sweep of the
//! data it is the full negative log posterior.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation handed to a model: a scalar `y` for data-driven models
/// and a noise vector for synthetic models with additive gradient noise.
#[derive(Debug, Clone, Copy)]
pub struct Datum<'a> {
    pub y: f64,
    pub noise: &'a [f64],
}

impl<'a> Datum<'a> {
    pub fn obs(y: f64) -> Datum<'static> {
        Datum { y, noise: &[] }
    }

    pub fn noise(noise: &'a [f64]) -> Self {
        Datum { y: 0.0, noise }
    }
}

pub trait CostModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Length of the per-datum standard normal vector the driver draws for
    /// this model. Zero for models driven purely by observations.
    fn noise_dim(&self) -> usize {
        0
    }

    fn stochastic_gradient(&self, theta: &[f64], datum: Datum<'_>, out: &mut [f64]) -> Result<()>;

    fn sample_cost(&self, theta: &[f64], datum: Datum<'_>) -> f64;

    /// `∇̂²c · v`. The default is a central difference of the gradient along
    /// `v` with `h = 1e-5 · max(1, ‖θ‖) / max(1, ‖v‖)`.
    fn hessian_vector(
        &self,
        theta: &[f64],
        datum: Datum<'_>,
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        hessian_vector_fd(self, theta, datum, v, out)
    }

    /// `log p(θ, y_1..y_T)` over a whole dataset (up to a constant for the
    /// synthetic models, which ignore `data`).
    fn full_log_target(&self, theta: &[f64], data: &[f64]) -> f64;

    /// A volume-preserving involution between symmetric modes of the target,
    /// usable as a deterministic Metropolis–Hastings proposal. Writes the
    /// image of `theta` into `out` and returns `false` when the model has no
    /// such move.
    fn mode_jump(&self, _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Central-difference Hessian-vector product used as the default.
pub fn hessian_vector_fd<M: CostModel + ?Sized>(
    model: &M,
    theta: &[f64],
    datum: Datum<'_>,
    v: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = model.dim();
    check_len(n, theta.len())?;
    check_len(n, v.len())?;
    let h = 1e-5 * norm(theta).max(1.0) / norm(v).max(1.0);
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + h * d).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - h * d).collect();
    let mut gm = vec![0.0; n];
    model.stochastic_gradient(&plus, datum, out)?;
    model.stochastic_gradient(&minus, datum, &mut gm)?;
    for (o, m) in out.iter_mut().zip(&gm) {
        *o = (*o - m) / (2.0 * h);
    }
    Ok(())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_finite(theta: &[f64]) -> Result<()> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite theta {theta:?}")))
    }
}

/// Observations `y_1..y_T` swept cyclically: index `k` reads `y_(k mod T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    observations: Vec<f64>,
    /// Generating parameter; kept for evaluation, never passed to samplers.
    pub true_theta: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    y: f64,
}

impl DataSet {
    pub fn new(observations: Vec<f64>, true_theta: Option<Vec<f64>>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Empty(
                "dataset needs at least one observation".into(),
            ));
        }
        Ok(Self {
            observations,
            true_theta,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn cyclic(&self, k: u64) -> f64 {
        self.observations[(k % self.observations.len() as u64) as usize]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for &y in &self.observations {
            w.serialize(ObservationRow { y })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let headers = r.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "y" {
            return Err(Error::invalid(format!(
                "dataset CSV must have the single header `y`, found {headers:?}"
            )));
        }
        let observations = r
            .deserialize::<ObservationRow>()
            .map(|row| row.map(|r| r.y))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(observations, None)
    }
}

/// Variance of each likelihood mixture component.
pub const MIXTURE_COMPONENT_VARIANCE: f64 = 2.0;

/// Bayesian posterior with a two-component Gaussian-mixture likelihood
///
/// `y ~ ½ N(a₁ᵀθ, 2) + ½ N(a₂ᵀθ, 2)` and an independent Gaussian prior
/// `θ(i) ~ N(μ_i, σ²_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureModel {
    prior_mean: Vec<f64>,
    prior_var: Vec<f64>,
    loadings: [Vec<f64>; 2],
    t: usize,
}

impl GaussianMixtureModel {
    pub fn new(
        prior_mean: Vec<f64>,
        prior_var: Vec<f64>,
        loadings: [Vec<f64>; 2],
        t: usize,
    ) -> Result<Self> {
        let n = prior_mean.len();
        if n == 0 {
            return Err(Error::invalid("mixture model needs a positive dimension"));
        }
        check_len(n, prior_var.len())?;
        check_len(n, loadings[0].len())?;
        check_len(n, loadings[1].len())?;
        if prior_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("prior variances must be positive"));
        }
        if t == 0 {
            return Err(Error::invalid("observation count T must be positive"));
        }
        Ok(Self {
            prior_mean,
            prior_var,
            loadings,
            t,
        })
    }

    /// Two-dimensional benchmark: `θ(1) ~ N(0, 10)`, `θ(2) ~ N(0, 1)`,
    /// component means `θ(1)` and `θ(1) + θ(2)`.
    pub fn mixture2(t: usize) -> Result<Self> {
        Self::new(
            vec![0.0, 0.0],
            vec![10.0, 1.0],
            [vec![1.0, 0.0], vec![1.0, 1.0]],
            t,
        )
    }

    /// Ten-dimensional benchmark with prior means `μ_i ~ U[−2, 2]` and
    /// variances `σ²_i ~ U[1, 10]` drawn once from `seed`; component means are
    /// the sums of the first and second halves of θ.
    pub fn mixture10(t: usize, seed: u64) -> Result<Self> {
        const N: usize = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean_dist = Uniform::new_inclusive(-2.0, 2.0).expect("valid range");
        let var_dist = Uniform::new_inclusive(1.0, 10.0).expect("valid range");
        let mut prior_mean = Vec::with_capacity(N);
        let mut prior_var = Vec::with_capacity(N);
        for _ in 0..N {
            prior_mean.push(mean_dist.sample(&mut rng));
            prior_var.push(var_dist.sample(&mut rng));
        }
        Self::mixture10_from_prior(prior_mean, prior_var, t)
    }

    pub fn mixture10_from_prior(
        prior_mean: Vec<f64>,
        prior_var: Vec<f64>,
        t: usize,
    ) -> Result<Self> {
        let n = prior_mean.len();
        if n != 10 {
            return Err(Error::DimensionMismatch {
                expected: 10,
                got: n,
            });
        }
        let first = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
        let second = (0..n).map(|i| if i < n / 2 { 0.0 } else { 1.0 }).collect();
        Self::new(prior_mean, prior_var, [first, second], t)
    }

    pub fn observation_count(&self) -> usize {
        self.t
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn prior_var(&self) -> &[f64] {
        &self.prior_var
    }

    pub fn loadings(&self) -> &[Vec<f64>; 2] {
        &self.loadings
    }

    pub fn component_means(&self, theta: &[f64]) -> [f64; 2] {
        [dot(&self.loadings[0], theta), dot(&self.loadings[1], theta)]
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.prior_mean)
            .zip(&self.prior_var)
            .map(|((t, m), v)| log_normal_pdf(*t, *m, *v))
            .sum()
    }

    pub fn log_likelihood(&self, theta: &[f64], y: f64) -> f64 {
        let [m1, m2] = self.component_means(theta);
        let l1 = log_normal_pdf(y, m1, MIXTURE_COMPONENT_VARIANCE);
        let l2 = log_normal_pdf(y, m2, MIXTURE_COMPONENT_VARIANCE);
        let hi = l1.max(l2);
        hi + (0.5 * ((l1 - hi).exp() + (l2 - hi).exp())).ln()
    }

    /// Posterior component probabilities and standardized residuals
    /// `(y − m_c)/v` for one observation.
    fn responsibilities(&self, theta: &[f64], y: f64) -> ([f64; 2], [f64; 2]) {
        let [m1, m2] = self.component_means(theta);
        let v = MIXTURE_COMPONENT_VARIANCE;
        let u1 = (y - m1) / v;
        let u2 = (y - m2) / v;
        // r1 = 1 / (1 + exp(l2 − l1)), equal weights cancel.
        let d = ((y - m1).powi(2) - (y - m2).powi(2)) / (2.0 * v);
        let r1 = 1.0 / (1.0 + d.exp());
        ([r1, 1.0 - r1], [u1, u2])
    }

    /// `∇_θ log p(y | θ)` written into `out`.
    fn grad_log_likelihood(&self, theta: &[f64], y: f64, out: &mut [f64]) {
        let (r, u) = self.responsibilities(theta, y);
        for (i, o) in out.iter_mut().enumerate() {
            *o = r[0] * u[0] * self.loadings[0][i] + r[1] * u[1] * self.loadings[1][i];
        }
    }

    /// Draws `T` i.i.d. observations from the likelihood at `theta_true`.
    pub fn generate_dataset<R: Rng + ?Sized>(
        &self,
        theta_true: &[f64],
        t: usize,
        rng: &mut R,
    ) -> Result<DataSet> {
        check_len(self.dim(), theta_true.len())?;
        if t == 0 {
            return Err(Error::invalid("T must be positive"));
        }
        let means = self.component_means(theta_true);
        let sd = MIXTURE_COMPONENT_VARIANCE.sqrt();
        let ys = (0..t)
            .map(|_| {
                let c = usize::from(!rng.random::<bool>());
                Normal::new(means[c], sd).expect("positive sd").sample(rng)
            })
            .collect();
        DataSet::new(ys, Some(theta_true.to_vec()))
    }

    /// Draws a parameter from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.prior_mean
            .iter()
            .zip(&self.prior_var)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// `T` draws from `½N(θ°(1), 2) + ½N(θ°(1) + θ°(2), 2)`.
pub fn generate_dataset_mixture2<R: Rng + ?Sized>(
    theta_true: &[f64],
    t: usize,
    rng: &mut R,
) -> Result<DataSet> {
    GaussianMixtureModel::mixture2(t.max(1))?.generate_dataset(theta_true, t, rng)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

impl CostModel for GaussianMixtureModel {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn stochastic_gradient(&self, theta: &[f64], datum: Datum<'_>, out: &mut [f64]) -> Result<()> {
        check_len(self.dim(), theta.len())?;
        check_len(self.dim(), out.len())?;
        check_finite(theta)?;
        self.grad_log_likelihood(theta, datum.y, out);
        let t = self.t as f64;
        for i in 0..out.len() {
            out[i] = (theta[i] - self.prior_mean[i]) / self.prior_var[i] - t * out[i];
        }
        Ok(())
    }

    fn sample_cost(&self, theta: &[f64], datum: Datum<'_>) -> f64 {
        -self.log_prior(theta) - self.t as f64 * self.log_likelihood(theta, datum.y)
    }

    fn hessian_vector(
        &self,
        theta: &[f64],
        datum: Datum<'_>,
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        check_len(self.dim(), theta.len())?;
        check_len(self.dim(), v.len())?;
        check_finite(theta)?;
        // Hessian of log p(y|θ):
        //   Σ_c r_c (u_c² − 1/var) a_c a_cᵀ − g gᵀ,  g = Σ_c r_c u_c a_c.
        let (r, u) = self.responsibilities(theta, datum.y);
        let inv_var = 1.0 / MIXTURE_COMPONENT_VARIANCE;
        let av = [dot(&self.loadings[0], v), dot(&self.loadings[1], v)];
        let mut gv = 0.0;
        for c in 0..2 {
            gv += r[c] * u[c] * av[c];
        }
        let t = self.t as f64;
        for i in 0..out.len() {
            let mut h = 0.0;
            let mut g = 0.0;
            for c in 0..2 {
                let a = self.loadings[c][i];
                h += r[c] * (u[c] * u[c] - inv_var) * av[c] * a;
                g += r[c] * u[c] * a;
            }
            out[i] = v[i] / self.prior_var[i] - t * (h - g * gv);
        }
        Ok(())
    }

    fn full_log_target(&self, theta: &[f64], data: &[f64]) -> f64 {
        self.log_prior(theta)
            + data
                .iter()
                .map(|&y| self.log_likelihood(theta, y))
                .sum::<f64>()
    }

    /// Label swap `θ ↦ θ − c dᵀθ` with `d = a₁ − a₂` and `c` the minimum-norm
    /// solution of `a₁ᵀc = 1, a₂ᵀc = −1`. It exchanges the two component
    /// means, squares to the identity and has `|det| = 1`, so the likelihood
    /// is invariant and only the prior enters the acceptance ratio.
    fn mode_jump(&self, theta: &[f64], out: &mut [f64]) -> bool {
        let [a1, a2] = &self.loadings;
        let g = [[dot(a1, a1), dot(a1, a2)], [dot(a2, a1), dot(a2, a2)]];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if det.abs() < 1e-12 * (g[0][0] * g[1][1]).max(1e-300) {
            return false;
        }
        // (AAᵀ)⁻¹ [1, −1]
        let l1 = (g[1][1] + g[0][1]) / det;
        let l2 = (-g[1][0] - g[0][0]) / det;
        let dt: f64 = theta
            .iter()
            .zip(a1.iter().zip(a2))
            .map(|(t, (x, y))| t * (x - y))
            .sum();
        for i in 0..theta.len() {
            let c = l1 * a1[i] + l2 * a2[i];
            out[i] = theta[i] - c * dt;
        }
        true
    }
}

/// `C(θ) = ½ (θ − m)ᵀ A (θ − m)` with additive gradient noise `σ_g ξ`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    a: DMatrix<f64>,
    center: Vec<f64>,
    sigma_g: f64,
}

impl QuadraticModel {
    /// `a` is row-major `n × n`; must be symmetric positive definite.
    pub fn new(a: Vec<f64>, n: usize, sigma_g: f64) -> Result<Self> {
        Self::with_center(a, n, vec![0.0; n], sigma_g)
    }

    pub fn with_center(a: Vec<f64>, n: usize, center: Vec<f64>, sigma_g: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("quadratic model needs a positive dimension"));
        }
        check_len(n * n, a.len())?;
        check_len(n, center.len())?;
        if !(sigma_g >= 0.0) || !sigma_g.is_finite() {
            return Err(Error::invalid("gradient noise std must be finite and >= 0"));
        }
        let a = DMatrix::from_row_slice(n, n, &a);
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::invalid("quadratic matrix A must be symmetric"));
        }
        if a.clone().cholesky().is_none() {
            return Err(Error::invalid(
                "quadratic matrix A must be positive definite",
            ));
        }
        Ok(Self { a, center, sigma_g })
    }

    pub fn isotropic(n: usize, sigma_g: f64) -> Result<Self> {
        Self::diagonal(&vec![1.0; n], sigma_g)
    }

    pub fn diagonal(diag: &[f64], sigma_g: f64) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            a[i * n + i] = *d;
        }
        Self::new(a, n, sigma_g)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sigma_g(&self) -> f64 {
        self.sigma_g
    }

    /// Covariance of the Gibbs measure `exp(−β C)`: `β⁻¹ A⁻¹`.
    pub fn stationary_covariance(&self, beta: f64) -> DMatrix<f64> {
        let inv = self
            .a
            .clone()
            .cholesky()
            .expect("validated at construction")
            .inverse();
        inv / beta
    }

    pub fn cost(&self, theta: &[f64]) -> f64 {
        let d = DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.center).map(|(t, m)| t - m),
        );
        0.5 * d.dot(&(&self.a * &d))
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.center.len();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
    }
}

impl CostModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn noise_dim(&self) -> usize {
        if self.sigma_g > 0.0 {
            self.dim()
        } else {
            0
        }
    }

    fn stochastic_gradient(&self, theta: &[f64], datum: Datum<'_>, out: &mut [f64]) -> Result<()> {
        check_len(self.dim(), theta.len())?;
        check_len(self.dim(), out.len())?;
        let d: Vec<f64> = theta.iter().zip(&self.center).map(|(t, m)| t - m).collect();
        self.apply(&d, out);
        if self.sigma_g > 0.0 {
            check_len(self.dim(), datum.noise.len())?;
            for (o, xi) in out.iter_mut().zip(datum.noise) {
                *o += self.sigma_g * xi;
            }
        }
        Ok(())
    }

    fn sample_cost(&self, theta: &[f64], datum: Datum<'_>) -> f64 {
        let mut c = self.cost(theta);
        if self.sigma_g > 0.0 && datum.noise.len() == self.dim() {
            c += self.sigma_g
                * theta
                    .iter()
                    .zip(&self.center)
                    .zip(datum.noise)
                    .map(|((t, m), xi)| (t - m) * xi)
                    .sum::<f64>();
        }
        c
    }

    fn hessian_vector(
        &self,
        _theta: &[f64],
        _datum: Datum<'_>,
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        check_len(self.dim(), v.len())?;
        self.apply(v, out);
        Ok(())
    }

    fn full_log_target(&self, theta: &[f64], _data: &[f64]) -> f64 {
        -self.cost(theta)
    }
}

/// Scalar double well `C(θ) = (θ² − 1)²` with additive gradient noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWellModel {
    pub sigma_g: f64,
}

impl DoubleWellModel {
    pub fn new(sigma_g: f64) -> Result<Self> {
        if !(sigma_g >= 0.0) || !sigma_g.is_finite() {
            return Err(Error::invalid("gradient noise std must be finite and >= 0"));
        }
        Ok(Self { sigma_g })
    }

    pub fn cost(theta: f64) -> f64 {
        (theta * theta - 1.0).powi(2)
    }
}

impl CostModel for DoubleWellModel {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        usize::from(self.sigma_g > 0.0)
    }

    fn stochastic_gradient(&self, theta: &[f64], datum: Datum<'_>, out: &mut [f64]) -> Result<()> {
        check_len(1, theta.len())?;
        check_len(1, out.len())?;
        let x = theta[0];
        out[0] = 4.0 * x * (x * x - 1.0);
        if self.sigma_g > 0.0 {
            check_len(1, datum.noise.len())?;
            out[0] += self.sigma_g * datum.noise[0];
        }
        Ok(())
    }

    fn sample_cost(&self, theta: &[f64], datum: Datum<'_>) -> f64 {
        let noise = if self.sigma_g > 0.0 && datum.noise.len() == 1 {
            self.sigma_g * datum.noise[0] * theta[0]
        } else {
            0.0
        };
        Self::cost(theta[0]) + noise
    }

    fn hessian_vector(
        &self,
        theta: &[f64],
        _datum: Datum<'_>,
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        check_len(1, v.len())?;
        out[0] = (12.0 * theta[0] * theta[0] - 4.0) * v[0];
        Ok(())
    }

    fn full_log_target(&self, theta: &[f64], _data: &[f64]) -> f64 {
        -Self::cost(theta[0])
    }
}

/// First coordinate where an analytic gradient disagrees with a central
/// difference of `sample_cost`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMismatch {
    pub coordinate: usize,
    pub theta: Vec<f64>,
    pub analytic: f64,
    pub numeric: f64,
}

/// Runtime self-check of a model's gradient at one point: each coordinate
/// must agree with a central difference of `sample_cost` (step
/// `1e-6 · max(1, |θ_i|)`) within `1e-5 · max(1, |g_i|)`.
pub fn check_gradient<M: CostModel + ?Sized>(
    model: &M,
    theta: &[f64],
    datum: Datum<'_>,
) -> Result<Option<GradientMismatch>> {
    let n = model.dim();
    check_len(n, theta.len())?;
    let mut g = vec![0.0; n];
    model.stochastic_gradient(theta, datum, &mut g)?;
    let mut x = theta.to_vec();
    for i in 0..n {
        let h = 1e-6 * theta[i].abs().max(1.0);
        x[i] = theta[i] + h;
        let up = model.sample_cost(&x, datum);
        x[i] = theta[i] - h;
        let down = model.sample_cost(&x, datum);
        x[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        if (numeric - g[i]).abs() > 1e-5 * g[i].abs().max(1.0) {
            return Ok(Some(GradientMismatch {
                coordinate: i,
                theta: theta.to_vec(),
                analytic: g[i],
                numeric,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn mixture2_gradient_vanishes_at_origin() {
        let m = GaussianMixtureModel::mixture2(100).unwrap();
        let mut g = [1.0; 2];
        m.stochastic_gradient(&[0.0, 0.0], Datum::obs(0.0), &mut g)
            .unwrap();
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn mixture2_prior_term() {
        // With responsibilities removed (T irrelevant), prior gradient is θ/σ².
        let m = GaussianMixtureModel::mixture2(1).unwrap();
        let theta = [10.0, 3.0];
        let mut lik = [0.0; 2];
        m.grad_log_likelihood(&theta, 0.0, &mut lik);
        let mut g = [0.0; 2];
        m.stochastic_gradient(&theta, Datum::obs(0.0), &mut g)
            .unwrap();
        assert!((g[0] + lik[0] - 1.0).abs() < 1e-12);
        assert!((g[1] + lik[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_rejects_non_finite_theta() {
        let m = GaussianMixtureModel::mixture2(10).unwrap();
        let mut g = [0.0; 2];
        assert!(m
            .stochastic_gradient(&[f64::NAN, 0.0], Datum::obs(0.0), &mut g)
            .is_err());
    }

    #[test]
    fn mixture10_prior_stationary_point() {
        let m = GaussianMixtureModel::mixture10(100, 4).unwrap();
        assert_eq!(m.dim(), 10);
        assert!(m.prior_mean().iter().all(|v| (-2.0..=2.0).contains(v)));
        assert!(m.prior_var().iter().all(|v| (1.0..=10.0).contains(v)));
        let theta = m.prior_mean().to_vec();
        let y: f64 = theta[..5].iter().sum();
        let (r, u) = m.responsibilities(&theta, y);
        assert_eq!(u[0], 0.0);
        let mut g = vec![0.0; 10];
        m.stochastic_gradient(&theta, Datum::obs(y), &mut g)
            .unwrap();
        // Only the second component's residual contributes, on the second half.
        let t = 100.0;
        assert!(g[..5].iter().all(|v| v.abs() < 1e-12));
        for (i, v) in g.iter().enumerate().skip(5) {
            assert!((v + t * r[1] * u[1]).abs() < 1e-9, "coordinate {i}");
        }
    }

    #[test]
    fn dataset_cyclic_indexing_and_csv() {
        let d = DataSet::new(vec![1.0, 2.0, 3.0], None).unwrap();
        assert_eq!(d.cyclic(0), 1.0);
        assert_eq!(d.cyclic(4), 2.0);
        assert_eq!(d.cyclic(u64::MAX), d.cyclic(u64::MAX % 3));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("y\n"));
        assert_eq!(
            DataSet::read_csv(&p).unwrap().observations(),
            d.observations()
        );
        assert!(DataSet::new(vec![], None).is_err());
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let a = generate_dataset_mixture2(&[0.0, 1.0], 100, &mut stream(1, 0)).unwrap();
        let b = generate_dataset_mixture2(&[0.0, 1.0], 100, &mut stream(1, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let mean = a.observations().iter().sum::<f64>() / 100.0;
        assert!((mean - 0.5).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn symmetric_mixture_dataset_mean() {
        let d = generate_dataset_mixture2(&[0.0, 0.0], 10_000, &mut stream(2, 0)).unwrap();
        let mean = d.observations().iter().sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn quadratic_gradient_examples() {
        let m = QuadraticModel::isotropic(2, 0.0).unwrap();
        let mut g = [0.0; 2];
        m.stochastic_gradient(&[2.0, -1.0], Datum::noise(&[]), &mut g)
            .unwrap();
        assert_eq!(g, [2.0, -1.0]);
        let m = QuadraticModel::diagonal(&[1.0, 4.0], 0.0).unwrap();
        m.stochastic_gradient(&[1.0, 1.0], Datum::noise(&[]), &mut g)
            .unwrap();
        assert_eq!(g, [1.0, 4.0]);
    }

    #[test]
    fn quadratic_rejects_indefinite() {
        assert!(QuadraticModel::new(vec![1.0, 2.0, 2.0, 1.0], 2, 0.0).is_err());
        assert!(QuadraticModel::new(vec![1.0, 0.5, 0.0, 1.0], 2, 0.0).is_err());
    }

    #[test]
    fn quadratic_stationary_covariance() {
        let m = QuadraticModel::diagonal(&[1.0, 4.0], 0.0).unwrap();
        let c = m.stationary_covariance(2.0);
        assert!((c[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c[(1, 1)] - 0.125).abs() < 1e-15);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn default_hvp_zero_direction() {
        let m = DoubleWellModel::new(0.0).unwrap();
        let mut out = [1.0];
        hessian_vector_fd(&m, &[0.7], Datum::noise(&[]), &[0.0], &mut out).unwrap();
        assert_eq!(out, [0.0]);
    }

    #[test]
    fn double_well_minima() {
        assert_eq!(DoubleWellModel::cost(1.0), 0.0);
        assert_eq!(DoubleWellModel::cost(-1.0), 0.0);
        let m = DoubleWellModel::new(0.0).unwrap();
        let mut g = [0.0];
        m.stochastic_gradient(&[1.0], Datum::noise(&[]), &mut g)
            .unwrap();
        assert_eq!(g, [0.0]);
    }

    #[test]
    fn check_gradient_accepts_correct_models() {
        let m = GaussianMixtureModel::mixture2(100).unwrap();
        assert!(check_gradient(&m, &[0.3, -0.8], Datum::obs(1.2))
            .unwrap()
            .is_none());
    }
}
