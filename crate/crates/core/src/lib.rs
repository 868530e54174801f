//! Adaptive non-reversible stochastic gradient Langevin dynamics.
//!
//! The crate provides:
//!
//! * [`skew`]: skew-symmetric drift matrices in strict-upper-triangle storage,
//!   Rademacher perturbations and box projection.
//! * [`models`]: the cost-model oracle trait, the Gaussian-mixture Bayesian
//!   learning posteriors, an analytic quadratic model and a double-well model.
//! * [`samplers`]: classical SGLD, the fixed-skew accelerated variant, the
//!   Hessian-based and the two SPSA-based skew adaptation schemes, and a
//!   random-walk Metropolis–Hastings baseline.
//! * [`metrics`]: running posterior means, empirical CDFs, Wasserstein-1
//!   marginal distances, histograms and trial aggregation.
//! * [`tracking`]: Markov-modulated cost switching and tracking statistics.
//! * [`experiment`]: JSON experiment configuration, the parallel multi-trial
//!   runner and CSV writers used by the command-line tool.
//!
//! ```
//! use anld::models::QuadraticModel;
//! use anld::samplers::{run_sampler, Algorithm, InitSpec, RunSpec, SamplerConfig};
//!
//! let model = QuadraticModel::isotropic(2, 0.0).unwrap();
//! let config = SamplerConfig { eps: 1e-2, ..SamplerConfig::default() };
//! let run = RunSpec { iterations: 1000, seed: 7, ..RunSpec::default() };
//! let init = InitSpec::at(vec![3.0, -3.0]);
//! let traj = run_sampler(Algorithm::Sgld, &model, None, &config, &init, &run).unwrap();
//! assert_eq!(traj.len(), 1000);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod samplers;
pub mod skew;
pub mod tracking;

pub use error::{Error, Result};
