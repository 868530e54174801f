use std::fs;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::config::parse_json;
use super::run::{MANIFEST_FILE, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::samplers::{Algorithm, InitSpec, SamplerConfig};
use crate::tracking::{run_tracking, MarkovRegime, SwitchingCost, TrackingRun, TrackingTrace};

fn default_q() -> Vec<Vec<f64>> {
    vec![vec![-1.0, 1.0], vec![1.0, -1.0]]
}

fn default_offset() -> f64 {
    3.0
}

fn default_window() -> u64 {
    1000
}

fn default_steady_fraction() -> f64 {
    0.2
}

fn one() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Regime-switching tracking experiment over the quadratic pair with
/// minimizers `±[offset, 0, …, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    pub name: String,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub dim: usize,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default)]
    pub sigma_g: f64,
    /// Generator `Q`, row by row.
    #[serde(default = "default_q")]
    pub q: Vec<Vec<f64>>,
    pub alpha_chain: f64,
    /// 1-based initial regime.
    #[serde(default = "one_usize")]
    pub initial_regime: usize,
    pub init: InitSpec,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub thin: u64,
    #[serde(default = "default_window")]
    pub trailing_window: u64,
    #[serde(default = "default_steady_fraction")]
    pub steady_fraction: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn one_usize() -> usize {
    1
}

impl TrackingConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = parse_json(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn regime(&self) -> Result<MarkovRegime> {
        if self.initial_regime == 0 {
            return Err(Error::config("`initial_regime` is 1-based"));
        }
        MarkovRegime::new(&self.q, self.alpha_chain, self.initial_regime - 1)
    }

    pub fn switching(&self) -> Result<SwitchingCost> {
        SwitchingCost::quadratic_pair(self.dim, self.offset, self.sigma_g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("`name` must not be empty"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config(
                "`algorithms` must list at least one algorithm",
            ));
        }
        let regime = self.regime()?;
        if regime.states() != 2 {
            return Err(Error::config(format!(
                "the quadratic switching pair has 2 regimes but `q` has {}",
                regime.states()
            )));
        }
        self.switching()?;
        if self.init.theta0.len() != self.dim {
            return Err(Error::config(format!(
                "`init.theta0` has {} entries, expected dim = {}",
                self.init.theta0.len(),
                self.dim
            )));
        }
        if self.iterations == 0 || self.thin == 0 {
            return Err(Error::config("`iterations` and `thin` must be >= 1"));
        }
        if !(self.steady_fraction > 0.0 && self.steady_fraction <= 1.0) {
            return Err(Error::config("`steady_fraction` must lie in (0, 1]"));
        }
        for &a in &self.algorithms {
            if !matches!(
                a,
                Algorithm::Sgld | Algorithm::Accelerated | Algorithm::Alg1 | Algorithm::Alg2
            ) {
                return Err(Error::config(format!(
                    "tracking supports sgld, accelerated, alg1 and alg2, not {a}"
                )));
            }
            self.sampler.validate(a)?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrackingReport {
    pub out_dir: PathBuf,
    pub traces: Vec<(Algorithm, TrackingTrace)>,
}

/// Runs each algorithm against the same regime path (shared seed) and
/// writes `trace_<alg>.csv`, `switches_<alg>.csv` and `tracking_summary.csv`
/// (`algorithm,steady_error,switches,recovered,mean_recovery_len`).
pub fn run_tracking_experiment(config: &TrackingConfig, out_dir: &Path) -> Result<TrackingReport> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join(RESOLVED_CONFIG_FILE),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    let regime = config.regime()?;
    let switching = config.switching()?;
    let run = TrackingRun {
        iterations: config.iterations,
        seed: config.seed,
        thin: config.thin,
        trailing_window: config.trailing_window,
    };
    let mut traces = Vec::new();
    let mut files = vec![RESOLVED_CONFIG_FILE.to_string()];
    let mut summary = csv::Writer::from_path(out_dir.join("tracking_summary.csv"))?;
    summary.write_record([
        "algorithm",
        "steady_error",
        "switches",
        "recovered",
        "mean_recovery_len",
    ])?;
    for &a in &config.algorithms {
        let trace = run_tracking(a, &switching, &regime, &config.sampler, &config.init, &run)?;
        let trace_file = format!("trace_{a}.csv");
        let switch_file = format!("switches_{a}.csv");
        trace.write_csv(out_dir.join(&trace_file))?;
        trace.write_switch_csv(out_dir.join(&switch_file))?;
        files.push(trace_file);
        files.push(switch_file);
        let recovered: Vec<u64> = trace
            .switches
            .iter()
            .filter_map(|s| s.recovery_len)
            .collect();
        let mean_recovery = if recovered.is_empty() {
            String::new()
        } else {
            (recovered.iter().sum::<u64>() as f64 / recovered.len() as f64).to_string()
        };
        summary.write_record([
            a.to_string(),
            trace.steady_error(config.steady_fraction).to_string(),
            trace.switches.len().to_string(),
            recovered.len().to_string(),
            mean_recovery,
        ])?;
        traces.push((a, trace));
    }
    summary.flush()?;
    files.push("tracking_summary.csv".into());
    let manifest = serde_json::json!({
        "name": config.name,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "seed_policy": "every algorithm sees the same regime path (shared seed)",
        "resolved_config": RESOLVED_CONFIG_FILE,
        "files": files,
    });
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(TrackingReport {
        out_dir: out_dir.to_path_buf(),
        traces,
    })
}
