use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::metrics::{sample_covariance, wasserstein1, MarginalCdf};
use crate::models::{
    check_gradient, hessian_vector_fd, CostModel, Datum, DoubleWellModel, GaussianMixtureModel,
    QuadraticModel,
};
use crate::rng::stream;
use crate::samplers::{run_sampler, Algorithm, InitSpec, RunSpec, SamplerConfig, SkewInit};
use crate::skew::{upper_len, SkewMatrix};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(f, "{:<width$}  result  time(s)  detail", "check")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<width$}  {:<6}  {:>7.2}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.seconds,
                c.detail
            )?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

/// Test fixture: a model whose gradient is biased in one coordinate.
pub struct CorruptedGradient {
    pub inner: Box<dyn CostModel>,
    pub coordinate: usize,
    pub bias: f64,
}

impl CostModel for CorruptedGradient {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    fn stochastic_gradient(&self, theta: &[f64], datum: Datum<'_>, out: &mut [f64]) -> Result<()> {
        self.inner.stochastic_gradient(theta, datum, out)?;
        out[self.coordinate] += self.bias;
        Ok(())
    }

    fn sample_cost(&self, theta: &[f64], datum: Datum<'_>) -> f64 {
        self.inner.sample_cost(theta, datum)
    }

    fn full_log_target(&self, theta: &[f64], data: &[f64]) -> f64 {
        self.inner.full_log_target(theta, data)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOptions {
    /// Bias this (0-based) gradient coordinate of the two-parameter mixture
    /// model, to exercise the failing path.
    pub corrupt_gradient: Option<usize>,
}

fn timed(name: &str, f: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    let t0 = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check {
        name: name.to_string(),
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Random evaluation point and datum for a model: θ ~ N(0, 2²) per
/// coordinate, y ~ N(0, 3²), standard normal noise.
fn random_point<R: Rng>(model: &dyn CostModel, rng: &mut R) -> (Vec<f64>, f64, Vec<f64>) {
    let theta = (0..model.dim())
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y = 3.0 * rng.sample::<f64, _>(StandardNormal);
    let noise = (0..model.noise_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    (theta, y, noise)
}

/// Compares analytic gradients with central differences of the sample cost
/// at `points` random points; the first failure names the coordinate.
pub fn gradient_check(name: &str, model: &dyn CostModel, points: usize, seed: u64) -> Check {
    timed(&format!("gradient: {name}"), || {
        let mut rng = stream(seed, 0);
        for p in 0..points {
            let (theta, y, noise) = random_point(model, &mut rng);
            let datum = Datum { y, noise: &noise };
            match check_gradient(model, &theta, datum) {
                Ok(None) => {}
                Ok(Some(m)) => {
                    return Err(format!(
                        "coordinate {} mismatch at point {p}: analytic {:.6e}, finite difference {:.6e}, theta {:?}",
                        m.coordinate + 1,
                        m.analytic,
                        m.numeric,
                        m.theta
                    ))
                }
                Err(e) => return Err(format!("point {p}: {e}")),
            }
        }
        Ok(format!("{points} points"))
    })
}

/// Largest relative disagreement between `hessian_vector` and a central
/// difference of the gradient, over `points` random (θ, v) pairs.
pub fn max_hessian_vector_error(model: &dyn CostModel, points: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, 1);
    let n = model.dim();
    let mut worst = 0.0f64;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for _ in 0..points {
        let (theta, y, noise) = random_point(model, &mut rng);
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let datum = Datum { y, noise: &noise };
        model.hessian_vector(&theta, datum, &v, &mut a)?;
        hessian_vector_fd(model, &theta, datum, &v, &mut b)?;
        for (x, z) in a.iter().zip(&b) {
            worst = worst.max((x - z).abs() / x.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn hessian_check(name: &str, model: &dyn CostModel, points: usize, seed: u64) -> Check {
    timed(&format!("hessian-vector: {name}"), || {
        let worst = max_hessian_vector_error(model, points, seed).map_err(|e| e.to_string())?;
        let detail = format!("max relative error {worst:.2e} over {points} points");
        if worst <= 1e-5 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn skew_check() -> Check {
    timed("skew invariants", || {
        let mut rng = stream(11, 0);
        let normal = Normal::new(0.0, 3.0).expect("valid");
        for dim in 2..=8 {
            for _ in 0..50 {
                let upper: Vec<f64> = (0..upper_len(dim))
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                let s = SkewMatrix::from_upper(dim, upper).map_err(|e| e.to_string())?;
                let x: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
                let sx = s.apply(&x).map_err(|e| e.to_string())?;
                let q: f64 = x.iter().zip(&sx).map(|(a, b)| a * b).sum();
                let scale: f64 = x.iter().map(|v| v * v).sum::<f64>() * s.max_abs().max(1.0);
                if q.abs() > 1e-12 * scale {
                    return Err(format!("xᵀSx = {q:e} for dim {dim}"));
                }
                let d = s.to_dense();
                for i in 0..dim {
                    for j in 0..dim {
                        if d[i * dim + j] != -d[j * dim + i] {
                            return Err(format!(
                                "dense S not antisymmetric at ({}, {})",
                                i + 1,
                                j + 1
                            ));
                        }
                    }
                }
                let p = s.project(-2.0, 2.0).map_err(|e| e.to_string())?;
                let pp = p.project(-2.0, 2.0).map_err(|e| e.to_string())?;
                if p != pp || p.max_abs() > 2.0 {
                    return Err(format!("projection not idempotent for dim {dim}"));
                }
            }
        }
        Ok("dims 2..8, 350 random matrices".into())
    })
}

fn w1_axiom_check() -> Check {
    timed("W1 axioms", || {
        let mut rng = stream(12, 0);
        let mut sample = |n: usize, shift: f64| -> std::result::Result<MarginalCdf, String> {
            MarginalCdf::new(
                (0..n)
                    .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
            .map_err(|e| e.to_string())
        };
        for _ in 0..20 {
            let a = sample(200, 0.0)?;
            let b = sample(150, 0.5)?;
            let c = sample(300, -0.3)?;
            if wasserstein1(&a, &a) != 0.0 {
                return Err("W1(a, a) != 0".into());
            }
            let (ab, ba) = (wasserstein1(&a, &b), wasserstein1(&b, &a));
            if (ab - ba).abs() > 1e-12 {
                return Err(format!("asymmetric: {ab} vs {ba}"));
            }
            if ab > wasserstein1(&a, &c) + wasserstein1(&c, &b) + 1e-12 {
                return Err("triangle inequality violated".into());
            }
        }
        Ok("identity, symmetry, triangle on 20 triples".into())
    })
}

fn reduction_check() -> Check {
    timed("reduction chain", || {
        let model =
            QuadraticModel::new(vec![2.0, 0.5, 0.5, 1.0], 2, 0.5).map_err(|e| e.to_string())?;
        let run = RunSpec {
            iterations: 2000,
            seed: 5,
            ..RunSpec::default()
        };
        let cfg = SamplerConfig {
            eps: 1e-2,
            alpha: 0.0,
            ..SamplerConfig::default()
        };
        let fixed = InitSpec::at(vec![1.0, -1.0]).with_skew(SkewInit::Fixed(vec![0.7]));
        let thetas = |alg: Algorithm, init: &InitSpec| {
            run_sampler(alg, &model, None, &cfg, init, &run)
                .map(|t| {
                    (0..t.len())
                        .flat_map(|r| t.theta(r).to_vec())
                        .collect::<Vec<f64>>()
                })
                .map_err(|e| e.to_string())
        };
        if thetas(Algorithm::Alg1, &fixed)? != thetas(Algorithm::Accelerated, &fixed)? {
            return Err("alg1 with alpha = 0 differs from accelerated".into());
        }
        if thetas(Algorithm::Alg3, &fixed)? != thetas(Algorithm::Accelerated, &fixed)? {
            return Err("alg3 with alpha = 0 differs from accelerated".into());
        }
        let zero = InitSpec::at(vec![1.0, -1.0]);
        if thetas(Algorithm::Accelerated, &zero)? != thetas(Algorithm::Sgld, &zero)? {
            return Err("accelerated with S = 0 differs from sgld".into());
        }
        Ok("alg1|α=0 ≡ alg3|α=0 ≡ accelerated ≡ sgld|S=0, bitwise".into())
    })
}

fn covariance_check() -> Check {
    timed("quadratic stationary covariance", || {
        let model = QuadraticModel::diagonal(&[1.0, 4.0], 0.0).map_err(|e| e.to_string())?;
        let cfg = SamplerConfig {
            eps: 1e-3,
            ..SamplerConfig::default()
        };
        let run = RunSpec {
            iterations: 200_000,
            seed: 3,
            ..RunSpec::default()
        };
        let traj = run_sampler(
            Algorithm::Sgld,
            &model,
            None,
            &cfg,
            &InitSpec::at(vec![0.0, 0.0]),
            &run,
        )
        .map_err(|e| e.to_string())?;
        let cov = sample_covariance(&traj, 0.2).map_err(|e| e.to_string())?;
        let exact = model.stationary_covariance(cfg.beta);
        let err = relative_frobenius(&cov, exact.as_slice());
        let detail = format!("relative Frobenius error {err:.3} (tolerance 0.20)");
        if err <= 0.2 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

/// `‖a − b‖_F / ‖b‖_F` for equally laid-out matrices.
pub fn relative_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// The fast built-in oracle suite.
pub fn run_validation(options: &ValidationOptions) -> Result<ValidationReport> {
    let mixture2: Box<dyn CostModel> = Box::new(GaussianMixtureModel::mixture2(100)?);
    let mixture2: Box<dyn CostModel> = match options.corrupt_gradient {
        Some(c) => Box::new(CorruptedGradient {
            inner: mixture2,
            coordinate: c,
            bias: 1e-2,
        }),
        None => mixture2,
    };
    let models: Vec<(&str, Box<dyn CostModel>)> = vec![
        ("mixture2", mixture2),
        (
            "mixture10",
            Box::new(GaussianMixtureModel::mixture10(100, 7)?),
        ),
        (
            "quadratic",
            Box::new(QuadraticModel::new(vec![2.0, 0.5, 0.5, 1.0], 2, 0.3)?),
        ),
        ("double-well", Box::new(DoubleWellModel::new(0.3)?)),
    ];
    let mut checks = Vec::new();
    for (i, (name, m)) in models.iter().enumerate() {
        checks.push(gradient_check(name, m.as_ref(), 100, 100 + i as u64));
    }
    for (i, (name, m)) in models
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| n.starts_with("mixture"))
    {
        checks.push(hessian_check(name, m.as_ref(), 100, 200 + i as u64));
    }
    checks.push(skew_check());
    checks.push(w1_axiom_check());
    checks.push(reduction_check());
    checks.push(covariance_check());
    Ok(ValidationReport { checks })
}
