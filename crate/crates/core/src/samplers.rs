//! Langevin-type samplers and the Metropolis–Hastings baseline.
//!
//! Every algorithm is a single-step transition on a [`SamplerState`] plus the
//! shared driver [`run_sampler`]. Random draws per step (see [`crate::rng`]):
//!
//! | algorithm     | noise stream | aux stream                          |
//! |---------------|--------------|-------------------------------------|
//! | `sgld`        | N normals    | –                                   |
//! | `accelerated` | N normals    | –                                   |
//! | `alg1`        | N normals    | –                                   |
//! | `alg2`        | N normals    | N(N−1)/2 signs                      |
//! | `alg3`        | N normals    | N(N−1)/2 signs, then M·N normals    |
//! | `mh`          | N normals    | 1 uniform                           |
//!
//! With noise disabled no normals are drawn. Synthetic models additionally
//! take `noise_dim` normals per datum from the data stream (the inner-loop
//! data of `alg3` come from the aux stream).

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CostModel, DataSet, Datum};
use crate::rng::{fill_standard_normal, ChainRng};
use crate::skew::{
    check_bounds, upper_len, upper_pairs, PerturbationMatrix, SkewMatrix, DEFAULT_SKEW_BOUNDS,
};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgld,
    Accelerated,
    Alg1,
    Alg2,
    Alg3,
    Mh,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Sgld,
        Algorithm::Accelerated,
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::Alg3,
        Algorithm::Mh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgld => "sgld",
            Algorithm::Accelerated => "accelerated",
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg3 => "alg3",
            Algorithm::Mh => "mh",
        }
    }

    /// Whether the skew matrix is adapted online.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Algorithm::Alg1 | Algorithm::Alg2 | Algorithm::Alg3)
    }

    pub fn uses_skew(self) -> bool {
        !matches!(self, Algorithm::Sgld | Algorithm::Mh)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Step size ε.
    pub eps: f64,
    /// Skew adaptation step size α.
    pub alpha: f64,
    /// Inverse temperature β.
    pub beta: f64,
    /// SPSA perturbation size μ.
    pub mu: f64,
    /// Inner fast-time-scale steps M of `alg3`.
    pub inner_steps: usize,
    /// Projection box `[S⁻, S⁺]` for every stored skew entry.
    pub skew_bounds: [f64; 2],
    pub burn_in_fraction: f64,
    /// Random-walk proposal standard deviation of `mh`.
    pub mh_proposal_std: f64,
    /// Probability that an `mh` step proposes the model's mode jump instead
    /// of a random-walk move. Zero keeps plain random-walk MH.
    pub mh_swap_prob: f64,
    /// Inject the Langevin noise `w_k`. Only disabled in deterministic tests.
    pub noise: bool,
    /// `alg2`: also record the θ⁻ chain so histograms can pool both.
    pub pool_chains: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            alpha: 1e-4,
            beta: 1.0,
            mu: 0.1,
            inner_steps: 5,
            skew_bounds: [DEFAULT_SKEW_BOUNDS.0, DEFAULT_SKEW_BOUNDS.1],
            burn_in_fraction: 0.2,
            mh_proposal_std: 0.25,
            mh_swap_prob: 0.0,
            noise: true,
            pool_chains: false,
        }
    }
}

impl SamplerConfig {
    /// Checks the parameters needed by `algorithm`. Logs a warning, without
    /// failing, when α > ε.
    pub fn validate(&self, algorithm: Algorithm) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        if algorithm == Algorithm::Mh {
            positive(self.mh_proposal_std, "mh_proposal_std")?;
            if !(0.0..=1.0).contains(&self.mh_swap_prob) {
                return Err(Error::config(format!(
                    "mh_swap_prob must lie in [0, 1], got {}",
                    self.mh_swap_prob
                )));
            }
        } else {
            positive(self.eps, "eps")?;
            positive(self.beta, "beta")?;
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if matches!(algorithm, Algorithm::Alg2 | Algorithm::Alg3) {
            positive(self.mu, "mu")?;
        }
        if algorithm == Algorithm::Alg3 && self.inner_steps == 0 {
            return Err(Error::config("inner_steps must be >= 1"));
        }
        check_bounds(self.skew_bounds[0], self.skew_bounds[1])
            .map_err(|e| Error::config(format!("skew_bounds: {e}")))?;
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::config(format!(
                "burn_in_fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if algorithm.is_adaptive() && self.alpha > self.eps {
            log::warn!(
                "{algorithm}: alpha = {} exceeds eps = {}; adaptation is meant to run slower than the diffusion",
                self.alpha,
                self.eps
            );
        }
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        (self.eps * 2.0 / self.beta).sqrt()
    }
}

/// Initial skew matrix `S₀`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase", tag = "kind", content = "upper")]
pub enum SkewInit {
    #[default]
    Zero,
    /// `s(i, i+1) ~ N(0, 1)` from the chain's init stream.
    Tridiagonal,
    /// Explicit strict-upper-triangle entries.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub skew0: SkewInit,
}

impl InitSpec {
    pub fn at(theta0: Vec<f64>) -> Self {
        Self {
            theta0,
            skew0: SkewInit::Zero,
        }
    }

    pub fn with_skew(mut self, skew0: SkewInit) -> Self {
        self.skew0 = skew0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub iterations: u64,
    pub seed: u64,
    /// Record every `thin`-th iterate.
    pub thin: u64,
    /// Snapshot S every `snapshot_every` iterations (0 disables).
    pub snapshot_every: u64,
    pub record_cost: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            iterations: 1,
            seed: 0,
            thin: 1,
            snapshot_every: 0,
            record_cost: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    grad: Vec<f64>,
    grad_minus: Vec<f64>,
    dir: Vec<f64>,
    w: Vec<f64>,
    next: Vec<f64>,
    next_minus: Vec<f64>,
    hv: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let z = vec![0.0; n];
        Self {
            grad: z.clone(),
            grad_minus: z.clone(),
            dir: z.clone(),
            w: z.clone(),
            next: z.clone(),
            next_minus: z.clone(),
            hv: z.clone(),
            tmp: z,
        }
    }
}

/// Per-chain state.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub theta: Vec<f64>,
    pub skew: SkewMatrix,
    /// `D(i, j) = dθ/dS(i, j)` for `i > j`, stored in the order of the upper
    /// pairs `(j, i)`.
    pub deriv: Vec<Vec<f64>>,
    pub theta_plus: Vec<f64>,
    pub theta_minus: Vec<f64>,
    /// Completed iterations.
    pub k: u64,
    /// Accepted Metropolis–Hastings proposals.
    pub accepted: u64,
    pub rng: ChainRng,
    log_target: Option<f64>,
    scratch: Scratch,
}

impl SamplerState {
    pub fn new(init: &InitSpec, seed: u64) -> Result<Self> {
        let n = init.theta0.len();
        if n == 0 {
            return Err(Error::invalid("theta0 must be non-empty"));
        }
        let mut rng = ChainRng::new(seed);
        let skew = match &init.skew0 {
            SkewInit::Zero => SkewMatrix::zeros(n),
            SkewInit::Tridiagonal => SkewMatrix::init_tridiagonal(n, &mut rng.init)?,
            SkewInit::Fixed(upper) => SkewMatrix::from_upper(n, upper.clone())?,
        };
        Ok(Self {
            theta: init.theta0.clone(),
            skew,
            deriv: vec![vec![0.0; n]; upper_len(n)],
            theta_plus: init.theta0.clone(),
            theta_minus: init.theta0.clone(),
            k: 0,
            accepted: 0,
            rng,
            log_target: None,
            scratch: Scratch::new(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn check_finite(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if finite(&self.theta) && finite(&self.theta_plus) && finite(&self.theta_minus) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                k: self.k,
                theta: self.theta.clone(),
            })
        }
    }
}

fn check_model(state: &SamplerState, model: &dyn CostModel) -> Result<()> {
    if model.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: state.dim(),
        });
    }
    Ok(())
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, config: &SamplerConfig, out: &mut [f64]) {
    if config.noise {
        fill_standard_normal(rng, out);
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `next = θ − ε·dir + √ε·√(2/β)·w`.
fn euler(theta: &[f64], dir: &[f64], w: &[f64], config: &SamplerConfig, next: &mut [f64]) {
    let scale = config.noise_scale();
    for i in 0..theta.len() {
        next[i] = theta[i] - config.eps * dir[i] + scale * w[i];
    }
}

fn ensure_finite(k: u64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            k,
            theta: v.to_vec(),
        })
    }
}

/// Classical stochastic gradient Langevin step
/// `θ ← θ − ε ∇̂c + √ε √(2/β) w`.
pub fn sgld_step(
    state: &mut SamplerState,
    model: &dyn CostModel,
    datum: Datum<'_>,
    config: &SamplerConfig,
) -> Result<()> {
    check_model(state, model)?;
    let s = &mut state.scratch;
    model.stochastic_gradient(&state.theta, datum, &mut s.grad)?;
    draw_noise(&mut state.rng.noise, config, &mut s.w);
    euler(&state.theta, &s.grad, &s.w, config, &mut s.next);
    ensure_finite(state.k, &s.next)?;
    std::mem::swap(&mut state.theta, &mut s.next);
    sync_pair(state);
    Ok(())
}

/// Non-reversible step with the state's fixed skew matrix:
/// `θ ← θ − ε (I + S) ∇̂c + √ε √(2/β) w`.
pub fn accelerated_step(
    state: &mut SamplerState,
    model: &dyn CostModel,
    datum: Datum<'_>,
    config: &SamplerConfig,
) -> Result<()> {
    check_model(state, model)?;
    let s = &mut state.scratch;
    model.stochastic_gradient(&state.theta, datum, &mut s.grad)?;
    identity_plus_skew(&state.skew, &s.grad, &mut s.dir);
    draw_noise(&mut state.rng.noise, config, &mut s.w);
    euler(&state.theta, &s.dir, &s.w, config, &mut s.next);
    ensure_finite(state.k, &s.next)?;
    std::mem::swap(&mut state.theta, &mut s.next);
    sync_pair(state);
    Ok(())
}

fn identity_plus_skew(skew: &SkewMatrix, x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(x);
    skew.apply_add(x, 1.0, out);
}

// Non-SPSA algorithms keep the coupled chains glued to θ so that switching
// algorithm mid-run (or inspecting the state) sees consistent values.
fn sync_pair(state: &mut SamplerState) {
    state.theta_plus.copy_from_slice(&state.theta);
    state.theta_minus.copy_from_slice(&state.theta);
}

/// Hessian-based adaptive step. With `g = ∇̂c(θ_k)` evaluated once:
///
/// 1. `θ ← θ − ε (I + S_k) g + √ε √(2/β) w`
/// 2. `S(i, j) ← S(i, j) − α gᵀ D(i, j)` for `i > j`, then projected
/// 3. `D(i, j) ← D(i, j) − ε (I + S_k) Ĥ D(i, j) − ε (E_ij − E_ji) g`
///
/// where `(E_ij − E_ji) g` has component `i` equal to `g_j` and component
/// `j` equal to `−g_i`.
pub fn alg1_step(
    state: &mut SamplerState,
    model: &dyn CostModel,
    datum: Datum<'_>,
    config: &SamplerConfig,
) -> Result<()> {
    check_model(state, model)?;
    let n = state.dim();
    let s = &mut state.scratch;
    model.stochastic_gradient(&state.theta, datum, &mut s.grad)?;
    identity_plus_skew(&state.skew, &s.grad, &mut s.dir);
    draw_noise(&mut state.rng.noise, config, &mut s.w);
    euler(&state.theta, &s.dir, &s.w, config, &mut s.next);
    ensure_finite(state.k, &s.next)?;

    let mut new_skew = state.skew.clone();
    for (p, (a, b)) in upper_pairs(n).enumerate() {
        // D[p] differentiates with respect to the lower entry S(b, a) = −s(a, b).
        let d = &mut state.deriv[p];
        let grad_s: f64 = s.grad.iter().zip(d.iter()).map(|(g, v)| g * v).sum();
        new_skew.upper_mut()[p] += config.alpha * grad_s;

        model.hessian_vector(&state.theta, datum, d, &mut s.hv)?;
        identity_plus_skew(&state.skew, &s.hv, &mut s.tmp);
        for (di, ti) in d.iter_mut().zip(&s.tmp) {
            *di -= config.eps * ti;
        }
        d[b] -= config.eps * s.grad[a];
        d[a] += config.eps * s.grad[b];
    }
    new_skew.project_in_place(config.skew_bounds[0], config.skew_bounds[1])?;
    if state.deriv.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            k: state.k,
            theta: s.next.clone(),
        });
    }
    std::mem::swap(&mut state.theta, &mut s.next);
    state.skew = new_skew;
    sync_pair(state);
    Ok(())
}

/// One step of the coupled chains
/// `θ± ← θ± − ε (I + S ± μΔ) ∇̂c(θ±) + √ε √(2/β) w`
/// sharing `datum` and `w`. Returns `c(θ⁺_new) − c(θ⁻_new)`.
#[allow(clippy::too_many_arguments)]
fn coupled_step(
    model: &dyn CostModel,
    skew: &SkewMatrix,
    delta: &PerturbationMatrix,
    datum: Datum<'_>,
    w: &[f64],
    config: &SamplerConfig,
    plus: &mut Vec<f64>,
    minus: &mut Vec<f64>,
    s: &mut Scratch,
) -> Result<f64> {
    model.stochastic_gradient(plus, datum, &mut s.grad)?;
    model.stochastic_gradient(minus, datum, &mut s.grad_minus)?;

    identity_plus_skew(skew, &s.grad, &mut s.dir);
    delta.apply_add(&s.grad, config.mu, &mut s.dir);
    euler(plus, &s.dir, w, config, &mut s.next);

    identity_plus_skew(skew, &s.grad_minus, &mut s.dir);
    delta.apply_add(&s.grad_minus, -config.mu, &mut s.dir);
    euler(minus, &s.dir, w, config, &mut s.next_minus);

    std::mem::swap(plus, &mut s.next);
    std::mem::swap(minus, &mut s.next_minus);
    Ok(model.sample_cost(plus, datum) - model.sample_cost(minus, datum))
}

/// `s(i, j) ← clamp(s(i, j) − α · diff / (2 μ Δ(i, j)))` on every stored entry.
fn spsa_update(
    skew: &mut SkewMatrix,
    delta: &PerturbationMatrix,
    diff: f64,
    config: &SamplerConfig,
) -> Result<()> {
    for (s, &d) in skew.upper_mut().iter_mut().zip(delta.upper()) {
        *s -= config.alpha * diff / (2.0 * config.mu * f64::from(d));
    }
    skew.project_in_place(config.skew_bounds[0], config.skew_bounds[1])
}

/// SPSA-based adaptive step on the coupled chains θ⁺ and θ⁻. The reported
/// sample `state.theta` is θ⁺.
pub fn alg2_step(
    state: &mut SamplerState,
    model: &dyn CostModel,
    datum: Datum<'_>,
    config: &SamplerConfig,
) -> Result<()> {
    check_model(state, model)?;
    if !(config.mu > 0.0) {
        return Err(Error::config("alg2 requires mu > 0"));
    }
    let delta = PerturbationMatrix::sample(state.dim(), &mut state.rng.aux)?;
    let mut w = std::mem::take(&mut state.scratch.w);
    draw_noise(&mut state.rng.noise, config, &mut w);
    let diff = coupled_step(
        model,
        &state.skew,
        &delta,
        datum,
        &w,
        config,
        &mut state.theta_plus,
        &mut state.theta_minus,
        &mut state.scratch,
    )?;
    state.scratch.w = w;
    ensure_finite(state.k, &state.theta_plus)?;
    ensure_finite(state.k, &state.theta_minus)?;
    spsa_update(&mut state.skew, &delta, diff, config)?;
    state.theta.copy_from_slice(&state.theta_plus);
    Ok(())
}

/// Two-time-scale SPSA step. `data[0]` drives the slow θ update; the inner
/// loop runs `M = data.len() − 1` coupled steps from `θ⁺ = θ⁻ = θ_k` on
/// `data[1..]`, accumulating cost differences; S moves by the average.
pub fn alg3_step(
    state: &mut SamplerState,
    model: &dyn CostModel,
    data: &[Datum<'_>],
    config: &SamplerConfig,
) -> Result<()> {
    check_model(state, model)?;
    if !(config.mu > 0.0) {
        return Err(Error::config("alg3 requires mu > 0"));
    }
    if data.len() < 2 {
        return Err(Error::invalid(
            "alg3 needs a window of at least M + 1 = 2 data",
        ));
    }
    let m = data.len() - 1;

    let mut w = std::mem::take(&mut state.scratch.w);
    // The inner loop reuses the scratch buffers, so the slow update is held
    // aside until S has moved.
    let next = {
        let s = &mut state.scratch;
        model.stochastic_gradient(&state.theta, data[0], &mut s.grad)?;
        identity_plus_skew(&state.skew, &s.grad, &mut s.dir);
        draw_noise(&mut state.rng.noise, config, &mut w);
        euler(&state.theta, &s.dir, &w, config, &mut s.next);
        ensure_finite(state.k, &s.next)?;
        s.next.clone()
    };

    let delta = PerturbationMatrix::sample(state.dim(), &mut state.rng.aux)?;
    let mut plus = state.theta.clone();
    let mut minus = state.theta.clone();
    let mut total = 0.0;
    for datum in &data[1..] {
        draw_noise(&mut state.rng.aux, config, &mut w);
        total += coupled_step(
            model,
            &state.skew,
            &delta,
            *datum,
            &w,
            config,
            &mut plus,
            &mut minus,
            &mut state.scratch,
        )?;
    }
    state.scratch.w = w;
    ensure_finite(state.k, &plus)?;
    ensure_finite(state.k, &minus)?;

    state.theta = next;
    spsa_update(&mut state.skew, &delta, total / m as f64, config)?;
    state.theta_plus = plus;
    state.theta_minus = minus;
    Ok(())
}

/// Random-walk Metropolis–Hastings on `model.full_log_target(·, data)`.
/// Draws N normals from the noise stream and one uniform from the aux stream
/// per step, plus one more aux uniform when `mh_swap_prob > 0` to choose
/// between the random walk and [`CostModel::mode_jump`].
pub fn mh_step(
    state: &mut SamplerState,
    model: &dyn CostModel,
    data: &[f64],
    config: &SamplerConfig,
) -> Result<()> {
    check_model(state, model)?;
    let current = match state.log_target {
        Some(v) => v,
        None => model.full_log_target(&state.theta, data),
    };
    let s = &mut state.scratch;
    fill_standard_normal(&mut state.rng.noise, &mut s.w);
    let jump = config.mh_swap_prob > 0.0
        && state.rng.aux.random::<f64>() < config.mh_swap_prob
        && model.mode_jump(&state.theta, &mut s.next);
    if !jump {
        for i in 0..state.theta.len() {
            s.next[i] = state.theta[i] + config.mh_proposal_std * s.w[i];
        }
    }
    let proposed = model.full_log_target(&s.next, data);
    let u: f64 = state.rng.aux.random();
    let log_ratio = proposed - current;
    if log_ratio >= 0.0 || u < log_ratio.exp() {
        std::mem::swap(&mut state.theta, &mut s.next);
        state.log_target = Some(proposed);
        state.accepted += 1;
    } else {
        state.log_target = Some(current);
    }
    sync_pair(state);
    Ok(())
}

/// Dispatches one iteration. `data` holds one datum, or `M + 1` for `alg3`.
pub fn step(
    algorithm: Algorithm,
    state: &mut SamplerState,
    model: &dyn CostModel,
    data: &[Datum<'_>],
    full_data: &[f64],
    config: &SamplerConfig,
) -> Result<()> {
    let first = *data
        .first()
        .ok_or_else(|| Error::invalid("step needs at least one datum"))?;
    match algorithm {
        Algorithm::Sgld => sgld_step(state, model, first, config),
        Algorithm::Accelerated => accelerated_step(state, model, first, config),
        Algorithm::Alg1 => alg1_step(state, model, first, config),
        Algorithm::Alg2 => alg2_step(state, model, first, config),
        Algorithm::Alg3 => alg3_step(state, model, data, config),
        Algorithm::Mh => mh_step(state, model, full_data, config),
    }?;
    state.check_finite()?;
    state.k += 1;
    Ok(())
}

/// Recorded iterates of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    ks: Vec<u64>,
    thetas: Vec<f64>,
    /// θ⁻ records when `pool_chains` is set for `alg2`/`alg3`.
    secondary: Option<Vec<f64>>,
    costs: Option<Vec<f64>>,
    skew_snapshots: Vec<(u64, SkewMatrix)>,
    pub accepted: u64,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ks: Vec::new(),
            thetas: Vec::new(),
            secondary: None,
            costs: None,
            skew_snapshots: Vec::new(),
            accepted: 0,
        }
    }

    /// Builds a trajectory directly from recorded iterates.
    pub fn from_records(dim: usize, ks: Vec<u64>, thetas: Vec<f64>) -> Result<Self> {
        if dim == 0 || thetas.len() != ks.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ks.len() * dim,
                got: thetas.len(),
            });
        }
        if ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("trajectory iteration indices must increase"));
        }
        Ok(Self {
            ks,
            thetas,
            ..Self::new(dim)
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    pub fn ks(&self) -> &[u64] {
        &self.ks
    }

    pub fn theta(&self, r: usize) -> &[f64] {
        &self.thetas[r * self.dim..(r + 1) * self.dim]
    }

    pub fn coordinate(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.thetas.iter().skip(i).step_by(self.dim).copied()
    }

    pub fn secondary_coordinate(&self, i: usize) -> Option<impl Iterator<Item = f64> + '_> {
        self.secondary
            .as_ref()
            .map(|s| s.iter().skip(i).step_by(self.dim).copied())
    }

    pub fn costs(&self) -> Option<&[f64]> {
        self.costs.as_deref()
    }

    pub fn skew_snapshots(&self) -> &[(u64, SkewMatrix)] {
        &self.skew_snapshots
    }

    /// Index of the first record kept after discarding `fraction` of the
    /// records.
    pub fn burn_in_start(&self, fraction: f64) -> usize {
        ((self.len() as f64) * fraction).floor() as usize
    }

    /// Post-burn-in samples of coordinate `i`, pooling θ⁻ when present and
    /// `pooled` is set.
    pub fn marginal_samples(&self, i: usize, burn_in_fraction: f64, pooled: bool) -> Vec<f64> {
        let start = self.burn_in_start(burn_in_fraction);
        let mut out: Vec<f64> = self.coordinate(i).skip(start).collect();
        if pooled {
            if let Some(sec) = self.secondary_coordinate(i) {
                out.extend(sec.skip(start));
            }
        }
        out
    }

    fn push(&mut self, k: u64, theta: &[f64]) {
        self.ks.push(k);
        self.thetas.extend_from_slice(theta);
    }

    /// CSV with header `k,theta_1..theta_N[,cost][,s_i_j...]`. Skew columns
    /// are included when a snapshot exists for every record.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let inline_skew = !self.skew_snapshots.is_empty()
            && self.skew_snapshots.len() == self.len()
            && self
                .skew_snapshots
                .iter()
                .zip(&self.ks)
                .all(|((a, _), b)| a == b);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.dim).map(|i| format!("theta_{i}")));
        if self.costs.is_some() {
            header.push("cost".into());
        }
        if inline_skew {
            header.extend(skew_headers(self.dim));
        }
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut row = vec![self.ks[r].to_string()];
            row.extend(self.theta(r).iter().map(|v| v.to_string()));
            if let Some(c) = &self.costs {
                row.push(c[r].to_string());
            }
            if inline_skew {
                row.extend(
                    self.skew_snapshots[r]
                        .1
                        .upper()
                        .iter()
                        .map(|v| v.to_string()),
                );
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Skew snapshots as CSV with header `k,s_1_2,...`.
    pub fn write_skew_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec!["k".to_string()];
        header.extend(skew_headers(self.dim));
        w.write_record(&header)?;
        for (k, s) in &self.skew_snapshots {
            let mut row = vec![k.to_string()];
            row.extend(s.upper().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `k,theta_*` columns of a trajectory CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(File::open(path)?);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("k") {
            return Err(Error::invalid(
                "trajectory CSV must start with a `k` column",
            ));
        }
        let theta_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("theta_"))
            .map(|(i, _)| i)
            .collect();
        let dim = theta_cols.len();
        let mut ks = Vec::new();
        let mut thetas = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            ks.push(parse_field::<u64>(&rec, 0)?);
            for &c in &theta_cols {
                thetas.push(parse_field::<f64>(&rec, c)?);
            }
        }
        Self::from_records(dim, ks, thetas)
    }
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::invalid(format!("bad CSV field {i} in {rec:?}")))
}

pub fn skew_headers(dim: usize) -> impl Iterator<Item = String> {
    upper_pairs(dim).map(|(i, j)| format!("s_{}_{}", i + 1, j + 1))
}

/// Draws the per-datum noise a synthetic model needs.
fn model_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_standard_normal(rng, &mut v);
    v
}

/// Runs `algorithm` for `run.iterations` steps over the cyclic dataset
/// (iteration `k` reads `y_(k mod T)`; `alg3` reads the window
/// `y_k, …, y_(k+M)`). Deterministic given `(seed, config, dataset)`.
pub fn run_sampler(
    algorithm: Algorithm,
    model: &dyn CostModel,
    dataset: Option<&DataSet>,
    config: &SamplerConfig,
    init: &InitSpec,
    run: &RunSpec,
) -> Result<Trajectory> {
    if run.iterations == 0 {
        return Err(Error::Empty("iterations must be >= 1".into()));
    }
    if run.thin == 0 {
        return Err(Error::config("thin must be >= 1"));
    }
    config.validate(algorithm)?;
    let mut init = init.clone();
    if !algorithm.uses_skew() {
        init.skew0 = SkewInit::Zero;
    }
    let mut state = SamplerState::new(&init, run.seed)?;
    check_model(&state, model)?;
    if algorithm.is_adaptive() {
        state
            .skew
            .project_in_place(config.skew_bounds[0], config.skew_bounds[1])?;
    }

    let full_data: &[f64] = dataset.map(|d| d.observations()).unwrap_or(&[]);
    let window = if algorithm == Algorithm::Alg3 {
        config.inner_steps + 1
    } else {
        1
    };
    let noise_dim = model.noise_dim();
    let pooled = config.pool_chains && matches!(algorithm, Algorithm::Alg2 | Algorithm::Alg3);

    let mut traj = Trajectory::new(model.dim());
    if pooled {
        traj.secondary = Some(Vec::new());
    }
    if run.record_cost {
        traj.costs = Some(Vec::new());
    }
    let capacity = (run.iterations / run.thin) as usize;
    traj.ks.reserve(capacity);
    traj.thetas.reserve(capacity * model.dim());

    let mut noises: Vec<Vec<f64>> = vec![Vec::new(); window];
    for _ in 0..run.iterations {
        let k = state.k;
        let ys: Vec<f64> = (0..window as u64)
            .map(|j| dataset.map(|d| d.cyclic(k + j)).unwrap_or(0.0))
            .collect();
        if noise_dim > 0 && algorithm != Algorithm::Mh {
            noises[0] = model_noise(&mut state.rng.data, noise_dim);
            for nz in noises.iter_mut().skip(1) {
                *nz = model_noise(&mut state.rng.aux, noise_dim);
            }
        }
        let data: Vec<Datum<'_>> = ys
            .iter()
            .zip(&noises)
            .map(|(&y, nz)| Datum { y, noise: nz })
            .collect();
        step(algorithm, &mut state, model, &data, full_data, config).map_err(|e| Error::Step {
            algorithm: algorithm.to_string(),
            k,
            source: Box::new(e),
        })?;

        if state.k % run.thin == 0 {
            traj.push(state.k, &state.theta);
            if let Some(sec) = traj.secondary.as_mut() {
                sec.extend_from_slice(&state.theta_minus);
            }
            if let Some(c) = traj.costs.as_mut() {
                c.push(model.sample_cost(&state.theta, data[0]));
            }
        }
        if run.snapshot_every > 0 && state.k % run.snapshot_every == 0 && algorithm.uses_skew() {
            traj.skew_snapshots.push((state.k, state.skew.clone()));
        }
    }
    traj.accepted = state.accepted;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticModel;

    fn quiet(eps: f64) -> SamplerConfig {
        SamplerConfig {
            eps,
            noise: false,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn null_dynamics_leave_theta() {
        struct Flat;
        impl CostModel for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn stochastic_gradient(&self, _: &[f64], _: Datum<'_>, out: &mut [f64]) -> Result<()> {
                out.iter_mut().for_each(|v| *v = 0.0);
                Ok(())
            }
            fn sample_cost(&self, _: &[f64], _: Datum<'_>) -> f64 {
                0.0
            }
            fn full_log_target(&self, _: &[f64], _: &[f64]) -> f64 {
                0.0
            }
        }
        let mut st = SamplerState::new(&InitSpec::at(vec![0.5, -2.0]), 1).unwrap();
        sgld_step(&mut st, &Flat, Datum::obs(0.0), &quiet(0.1)).unwrap();
        assert_eq!(st.theta, vec![0.5, -2.0]);
    }

    #[test]
    fn sgld_euler_step() {
        let m = QuadraticModel::isotropic(2, 0.0).unwrap();
        let mut st = SamplerState::new(&InitSpec::at(vec![1.0, 1.0]), 1).unwrap();
        sgld_step(&mut st, &m, Datum::noise(&[]), &quiet(0.1)).unwrap();
        assert_eq!(st.theta, vec![0.9, 0.9]);
    }

    #[test]
    fn accelerated_direct_arithmetic() {
        // ∇̂c = [1, 0] from a quadratic centred at [−1, 0] evaluated at 0.
        let m =
            QuadraticModel::with_center(vec![1.0, 0.0, 0.0, 1.0], 2, vec![-1.0, 0.0], 0.0).unwrap();
        let init = InitSpec::at(vec![0.0, 0.0]).with_skew(SkewInit::Fixed(vec![-1.0]));
        let mut st = SamplerState::new(&init, 1).unwrap();
        accelerated_step(&mut st, &m, Datum::noise(&[]), &quiet(0.1)).unwrap();
        assert!((st.theta[0] + 0.1).abs() < 1e-15);
        assert!((st.theta[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn alg1_derivative_hand_expansion() {
        let m = QuadraticModel::isotropic(2, 0.0).unwrap();
        let mut st = SamplerState::new(&InitSpec::at(vec![1.0, 0.0]), 1).unwrap();
        alg1_step(&mut st, &m, Datum::noise(&[]), &quiet(0.1)).unwrap();
        // D(2,1) = [0, −0.1]
        assert_eq!(st.deriv[0], vec![0.0, -0.1]);
        assert_eq!(st.skew.upper(), &[0.0]);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let m = QuadraticModel::isotropic(1, 0.0).unwrap();
        let cfg = SamplerConfig {
            eps: 1e300,
            noise: false,
            ..SamplerConfig::default()
        };
        let err = run_sampler(
            Algorithm::Sgld,
            &m,
            None,
            &cfg,
            &InitSpec::at(vec![1e10]),
            &RunSpec {
                iterations: 10,
                ..RunSpec::default()
            },
        )
        .unwrap_err();
        match err {
            Error::Step { k, source, .. } => {
                assert!(k < 10);
                assert!(matches!(*source, Error::NonFinite { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        let m = QuadraticModel::isotropic(1, 0.0).unwrap();
        let run = RunSpec {
            iterations: 0,
            ..RunSpec::default()
        };
        assert!(matches!(
            run_sampler(
                Algorithm::Sgld,
                &m,
                None,
                &SamplerConfig::default(),
                &InitSpec::at(vec![0.0]),
                &run
            ),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn mu_zero_is_config_error() {
        let m = QuadraticModel::isotropic(2, 0.0).unwrap();
        let cfg = SamplerConfig {
            mu: 0.0,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            cfg.validate(Algorithm::Alg2),
            Err(Error::Config(_))
        ));
        let mut st = SamplerState::new(&InitSpec::at(vec![0.0, 0.0]), 1).unwrap();
        assert!(alg2_step(&mut st, &m, Datum::noise(&[]), &cfg).is_err());
    }

    #[test]
    fn config_accepts_alpha_above_eps() {
        let cfg = SamplerConfig {
            eps: 1e-4,
            alpha: 1e-2,
            ..SamplerConfig::default()
        };
        assert!(cfg.validate(Algorithm::Alg1).is_ok());
        let bad = SamplerConfig {
            skew_bounds: [1.0, -1.0],
            ..SamplerConfig::default()
        };
        assert!(bad.validate(Algorithm::Alg1).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!("langevin".parse::<Algorithm>().is_err());
    }

    #[test]
    fn thinning_and_snapshots() {
        let m = QuadraticModel::isotropic(2, 0.0).unwrap();
        let run = RunSpec {
            iterations: 100,
            seed: 3,
            thin: 10,
            snapshot_every: 25,
            record_cost: true,
        };
        let init = InitSpec::at(vec![1.0, 1.0]).with_skew(SkewInit::Tridiagonal);
        let t = run_sampler(
            Algorithm::Alg1,
            &m,
            None,
            &SamplerConfig::default(),
            &init,
            &run,
        )
        .unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!(t.ks()[0], 10);
        assert_eq!(t.skew_snapshots().len(), 4);
        assert_eq!(t.costs().unwrap().len(), 10);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let m = QuadraticModel::isotropic(2, 0.5).unwrap();
        let run = RunSpec {
            iterations: 20,
            seed: 1,
            snapshot_every: 1,
            record_cost: true,
            ..RunSpec::default()
        };
        let init = InitSpec::at(vec![1.0, 1.0]).with_skew(SkewInit::Tridiagonal);
        let t = run_sampler(
            Algorithm::Accelerated,
            &m,
            None,
            &SamplerConfig::default(),
            &init,
            &run,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("k,theta_1,theta_2,cost,s_1_2\n"));
        let back = Trajectory::read_csv(&p).unwrap();
        assert_eq!(back.ks(), t.ks());
        for r in 0..t.len() {
            assert_eq!(back.theta(r), t.theta(r));
        }
    }
}
