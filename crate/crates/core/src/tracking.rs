//! Tracking a minimizer that jumps with a slow hidden Markov chain.
//!
//! The active cost `c(·, x_k)` is selected by a finite-state chain with
//! one-step transition matrix `P = I + α Q`. Samplers only ever receive
//! gradients of the active model; `x_k` is recorded for evaluation.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{norm, CostModel, Datum, QuadraticModel};
use crate::rng::{fill_standard_normal, stream};
use crate::samplers::{self, Algorithm, InitSpec, SamplerConfig, SamplerState};

const STREAM_REGIME: u64 = 4;

/// Finite-state chain with generator `Q` and transition `I + α Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRegime {
    states: usize,
    q: Vec<f64>,
    alpha: f64,
    current: usize,
}

impl MarkovRegime {
    /// `q` is given row by row. Fails, naming the offending row (1-based), if `Q` is
    /// not a generator, if `I + αQ` is not row-stochastic, or if `Q` is
    /// reducible.
    pub fn new(q: &[Vec<f64>], alpha: f64, initial: usize) -> Result<Self> {
        let x = q.len();
        if x == 0 {
            return Err(Error::config("generator Q needs at least one state"));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!(
                "alpha_chain must be >= 0, got {alpha}"
            )));
        }
        if initial >= x {
            return Err(Error::config(format!(
                "initial state {initial} out of range"
            )));
        }
        let mut flat = Vec::with_capacity(x * x);
        for (i, row) in q.iter().enumerate() {
            if row.len() != x {
                return Err(Error::config(format!(
                    "Q row {} has {} entries, expected {x}",
                    i + 1,
                    row.len()
                )));
            }
            let scale = row.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 * scale * x as f64 {
                return Err(Error::config(format!(
                    "Q row {} sums to {sum}, expected 0",
                    i + 1
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j && v < 0.0 {
                    return Err(Error::config(format!(
                        "Q row {} has negative off-diagonal entry {v} at column {}",
                        i + 1,
                        j + 1
                    )));
                }
                let p = f64::from(u8::from(i == j)) + alpha * v;
                if !(-1e-15..=1.0 + 1e-15).contains(&p) {
                    return Err(Error::config(format!(
                        "transition I + alpha Q row {} has entry {p} outside [0, 1]",
                        i + 1
                    )));
                }
            }
            flat.extend_from_slice(row);
        }
        let regime = Self {
            states: x,
            q: flat,
            alpha,
            current: initial,
        };
        if !regime.is_irreducible() {
            return Err(Error::config("generator Q is not irreducible"));
        }
        Ok(regime)
    }

    /// Two states with rate `rate` in each direction.
    pub fn symmetric_pair(rate: f64, alpha: f64) -> Result<Self> {
        Self::new(&[vec![-rate, rate], vec![rate, -rate]], alpha, 0)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn state(&self) -> usize {
        self.current
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn generator(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.states + j]
    }

    /// `P = I + α Q`, row-major.
    pub fn transition_matrix(&self) -> Vec<f64> {
        let x = self.states;
        (0..x * x)
            .map(|idx| f64::from(u8::from(idx / x == idx % x)) + self.alpha * self.q[idx])
            .collect()
    }

    fn is_irreducible(&self) -> bool {
        let x = self.states;
        let reach = |from: usize, forward: bool| {
            let mut seen = vec![false; x];
            let mut stack = vec![from];
            seen[from] = true;
            while let Some(i) = stack.pop() {
                for (j, seen_j) in seen.iter_mut().enumerate() {
                    let rate = if forward {
                        self.generator(i, j)
                    } else {
                        self.generator(j, i)
                    };
                    if i != j && rate > 0.0 && !*seen_j {
                        *seen_j = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(0, true) && reach(0, false)
    }

    /// Stationary law `π Q = 0`, `Σ π = 1`.
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let x = self.states;
        let mut a = DMatrix::from_fn(x, x, |i, j| self.generator(j, i));
        for j in 0..x {
            a[(x - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(x);
        b[x - 1] = 1.0;
        a.lu()
            .solve(&b)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![1.0 / x as f64; x])
    }

    /// Draws the next state from row `x_k` of `P`; always one uniform draw.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let x = self.states;
        let row = self.current;
        let mut acc = 0.0;
        let mut next = row;
        for j in 0..x {
            let p = if j == row {
                1.0 + self.alpha * self.q[row * x + j]
            } else {
                self.alpha * self.q[row * x + j]
            };
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        self.current = next;
        next
    }
}

/// Bank of per-state cost models with their known minimizers.
pub struct SwitchingCost {
    models: Vec<Box<dyn CostModel>>,
    minimizers: Vec<Vec<f64>>,
}

impl SwitchingCost {
    pub fn new(models: Vec<Box<dyn CostModel>>, minimizers: Vec<Vec<f64>>) -> Result<Self> {
        if models.is_empty() || models.len() != minimizers.len() {
            return Err(Error::config(
                "switching cost needs one minimizer per model",
            ));
        }
        let n = models[0].dim();
        if models.iter().any(|m| m.dim() != n) || minimizers.iter().any(|m| m.len() != n) {
            return Err(Error::config(
                "all switching models must share one dimension",
            ));
        }
        Ok(Self { models, minimizers })
    }

    /// `½‖θ − m_x‖²` with `m₁ = −m₂ = [offset, 0, …, 0]`.
    pub fn quadratic_pair(dim: usize, offset: f64, sigma_g: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        let mut m1 = vec![0.0; dim];
        m1[0] = offset;
        let m2: Vec<f64> = m1.iter().map(|v| -v).collect();
        let eye: Vec<f64> = (0..dim * dim)
            .map(|i| f64::from(u8::from(i / dim == i % dim)))
            .collect();
        let models: Vec<Box<dyn CostModel>> = vec![
            Box::new(QuadraticModel::with_center(
                eye.clone(),
                dim,
                m1.clone(),
                sigma_g,
            )?),
            Box::new(QuadraticModel::with_center(eye, dim, m2.clone(), sigma_g)?),
        ];
        Self::new(models, vec![m1, m2])
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn states(&self) -> usize {
        self.models.len()
    }

    pub fn minimizer(&self, x: usize) -> &[f64] {
        &self.minimizers[x]
    }

    fn model(&self, x: usize) -> &dyn CostModel {
        self.models[x].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingRun {
    pub iterations: u64,
    pub seed: u64,
    pub thin: u64,
    /// Iterations before a switch averaged to obtain the pre-switch level.
    pub trailing_window: u64,
}

impl Default for TrackingRun {
    fn default() -> Self {
        Self {
            iterations: 1,
            seed: 0,
            thin: 1,
            trailing_window: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub k_switch: u64,
    pub from: usize,
    pub to: usize,
    /// Iterations after the switch until the error first re-enters 1.5× its
    /// pre-switch trailing mean; `None` if it never does before the next
    /// switch or the end of the run.
    pub recovery_len: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTrace {
    dim: usize,
    pub ks: Vec<u64>,
    pub states: Vec<usize>,
    thetas: Vec<f64>,
    pub errors: Vec<f64>,
    pub switches: Vec<SwitchEvent>,
}

impl TrackingTrace {
    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    pub fn theta(&self, r: usize) -> &[f64] {
        &self.thetas[r * self.dim..(r + 1) * self.dim]
    }

    /// Mean error over the last `fraction` of the records.
    pub fn steady_error(&self, fraction: f64) -> f64 {
        let n = self.errors.len();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        self.errors[n - take..].iter().sum::<f64>() / take as f64
    }

    /// Fraction of records spent in each state.
    pub fn occupancy(&self, states: usize) -> Vec<f64> {
        let mut counts = vec![0usize; states];
        for &x in &self.states {
            counts[x] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.states.len().max(1) as f64)
            .collect()
    }

    /// CSV `k,x,theta_1..theta_N,err`; states are written 1-based.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec!["k".to_string(), "x".to_string()];
        header.extend((1..=self.dim).map(|i| format!("theta_{i}")));
        header.push("err".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut row = vec![self.ks[r].to_string(), (self.states[r] + 1).to_string()];
            row.extend(self.theta(r).iter().map(|v| v.to_string()));
            row.push(self.errors[r].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `k_switch,from,to,recovery_len`; an unrecovered switch leaves the
    /// last field empty.
    pub fn write_switch_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["k_switch", "from", "to", "recovery_len"])?;
        for e in &self.switches {
            w.write_record([
                e.k_switch.to_string(),
                (e.from + 1).to_string(),
                (e.to + 1).to_string(),
                e.recovery_len.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `algorithm` against the switching cost. At each iteration the
/// regime advances first, then the sampler takes one step on a gradient of
/// the active model.
pub fn run_tracking(
    algorithm: Algorithm,
    switching: &SwitchingCost,
    regime: &MarkovRegime,
    config: &SamplerConfig,
    init: &InitSpec,
    run: &TrackingRun,
) -> Result<TrackingTrace> {
    if !matches!(
        algorithm,
        Algorithm::Sgld | Algorithm::Accelerated | Algorithm::Alg1 | Algorithm::Alg2
    ) {
        return Err(Error::config(format!(
            "tracking supports sgld, accelerated, alg1 and alg2, not {algorithm}"
        )));
    }
    if run.iterations == 0 {
        return Err(Error::Empty("iterations must be >= 1".into()));
    }
    if run.thin == 0 {
        return Err(Error::config("thin must be >= 1"));
    }
    if regime.states() != switching.states() {
        return Err(Error::config(format!(
            "regime has {} states but the switching bank has {} models",
            regime.states(),
            switching.states()
        )));
    }
    config.validate(algorithm)?;
    let mut init = init.clone();
    if !algorithm.uses_skew() {
        init.skew0 = samplers::SkewInit::Zero;
    }
    let mut state = SamplerState::new(&init, run.seed)?;
    if state.dim() != switching.dim() {
        return Err(Error::DimensionMismatch {
            expected: switching.dim(),
            got: state.dim(),
        });
    }
    let mut regime = regime.clone();
    let mut regime_rng: ChaCha8Rng = stream(run.seed, STREAM_REGIME);

    let n = switching.dim();
    let mut trace = TrackingTrace {
        dim: n,
        ks: Vec::new(),
        states: Vec::new(),
        thetas: Vec::new(),
        errors: Vec::new(),
        switches: Vec::new(),
    };
    let mut all_errors: Vec<f64> = Vec::with_capacity(run.iterations as usize);
    let mut switch_at: Vec<(usize, usize, usize)> = Vec::new();
    let mut noise = Vec::new();
    let mut diff = vec![0.0; n];

    for _ in 0..run.iterations {
        let prev = regime.state();
        let x = regime.step(&mut regime_rng);
        if x != prev {
            switch_at.push((all_errors.len(), prev, x));
        }
        let model = switching.model(x);
        let nd = model.noise_dim();
        if noise.len() != nd {
            noise = vec![0.0; nd];
        }
        fill_standard_normal(&mut state.rng.data, &mut noise);
        let datum = Datum {
            y: 0.0,
            noise: &noise,
        };
        let k = state.k;
        samplers::step(algorithm, &mut state, model, &[datum], &[], config).map_err(|e| {
            Error::Step {
                algorithm: algorithm.to_string(),
                k,
                source: Box::new(e),
            }
        })?;
        for ((d, t), m) in diff
            .iter_mut()
            .zip(&state.theta)
            .zip(switching.minimizer(x))
        {
            *d = t - m;
        }
        let err = norm(&diff);
        all_errors.push(err);
        if state.k % run.thin == 0 {
            trace.ks.push(state.k);
            trace.states.push(x);
            trace.thetas.extend_from_slice(&state.theta);
            trace.errors.push(err);
        }
    }

    for (s, &(idx, from, to)) in switch_at.iter().enumerate() {
        let window_start = if s == 0 { 0 } else { switch_at[s - 1].0 };
        let lo = idx
            .saturating_sub(run.trailing_window as usize)
            .max(window_start);
        let recovery_len = if idx > lo {
            let level = all_errors[lo..idx].iter().sum::<f64>() / (idx - lo) as f64;
            let end = switch_at
                .get(s + 1)
                .map(|n| n.0)
                .unwrap_or(all_errors.len());
            all_errors[idx..end]
                .iter()
                .position(|&e| e <= 1.5 * level)
                .map(|p| p as u64 + 1)
        } else {
            None
        };
        trace.switches.push(SwitchEvent {
            k_switch: idx as u64 + 1,
            from,
            to,
            recovery_len,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_matrix_arithmetic() {
        let r = MarkovRegime::symmetric_pair(1.0, 0.01).unwrap();
        let p = r.transition_matrix();
        let expected = [0.99, 0.01, 0.01, 0.99];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_chain_never_moves() {
        let mut r = MarkovRegime::symmetric_pair(1.0, 0.0).unwrap();
        let mut rng = stream(1, 0);
        assert!((0..10_000).all(|_| r.step(&mut rng) == 0));
    }

    #[test]
    fn symmetric_chain_occupancy() {
        let mut r = MarkovRegime::symmetric_pair(1.0, 0.01).unwrap();
        let mut rng = stream(2, 0);
        let steps = 1_000_000;
        let ones = (0..steps).filter(|_| r.step(&mut rng) == 1).count();
        let frac = ones as f64 / steps as f64;
        assert!((frac - 0.5).abs() < 0.02, "occupancy {frac}");
    }

    #[test]
    fn validation_names_the_row() {
        let err = MarkovRegime::new(&[vec![-1.0, 1.0], vec![1.0, -0.5]], 0.1, 0).unwrap_err();
        assert!(err.to_string().contains("Q row 2 sums"), "{err}");
        let err = MarkovRegime::new(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 2.0, 0).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"), "{err}");
        let err = MarkovRegime::new(&[vec![0.0, 0.0], vec![1.0, -1.0]], 0.1, 0).unwrap_err();
        assert!(err.to_string().contains("irreducible"), "{err}");
    }

    #[test]
    fn stationary_law_of_asymmetric_chain() {
        let r = MarkovRegime::new(&[vec![-1.0, 1.0], vec![3.0, -3.0]], 0.1, 0).unwrap();
        let pi = r.stationary_distribution();
        assert!((pi[0] - 0.75).abs() < 1e-12);
        assert!((pi[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tracking_rejects_alg3_and_mh() {
        let bank = SwitchingCost::quadratic_pair(2, 3.0, 0.0).unwrap();
        let regime = MarkovRegime::symmetric_pair(1.0, 0.0).unwrap();
        let run = TrackingRun {
            iterations: 10,
            ..TrackingRun::default()
        };
        for alg in [Algorithm::Alg3, Algorithm::Mh] {
            assert!(run_tracking(
                alg,
                &bank,
                &regime,
                &SamplerConfig::default(),
                &InitSpec::at(vec![0.0, 0.0]),
                &run
            )
            .is_err());
        }
    }

    #[test]
    fn recovery_is_measured_after_switches() {
        let bank = SwitchingCost::quadratic_pair(2, 3.0, 0.0).unwrap();
        let regime = MarkovRegime::symmetric_pair(1.0, 1e-3).unwrap();
        let cfg = SamplerConfig {
            eps: 1e-2,
            beta: 10.0,
            ..SamplerConfig::default()
        };
        let run = TrackingRun {
            iterations: 20_000,
            seed: 5,
            ..TrackingRun::default()
        };
        let trace = run_tracking(
            Algorithm::Sgld,
            &bank,
            &regime,
            &cfg,
            &InitSpec::at(vec![3.0, 0.0]),
            &run,
        )
        .unwrap();
        assert!(!trace.switches.is_empty());
        assert!(trace.switches.iter().any(|s| s.recovery_len.is_some()));
        let dir = tempfile::tempdir().unwrap();
        trace.write_csv(dir.path().join("t.csv")).unwrap();
        trace.write_switch_csv(dir.path().join("s.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert!(text.starts_with("k,x,theta_1,theta_2,err\n"));
    }
}
