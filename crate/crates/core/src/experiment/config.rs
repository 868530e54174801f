use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::models::{CostModel, DataSet, DoubleWellModel, GaussianMixtureModel, QuadraticModel};
use crate::rng::stream;
use crate::samplers::{Algorithm, InitSpec, SamplerConfig};

/// Stream ids (under the dataset seed) used when generating a dataset.
const STREAM_DATASET_OBS: u64 = 5;
const STREAM_DATASET_TRUTH: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Two-parameter Gaussian-mixture posterior over `t` observations.
    Mixture2 { t: usize },
    /// Ten-parameter Gaussian-mixture posterior; prior hyper-parameters are
    /// drawn once from `prior_seed`.
    Mixture10 { t: usize, prior_seed: u64 },
    /// `½ (θ − m)ᵀ A (θ − m)` with `A` given row by row.
    Quadratic {
        a: Vec<Vec<f64>>,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        sigma_g: f64,
    },
    DoubleWell {
        #[serde(default)]
        sigma_g: f64,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn CostModel>> {
        Ok(match self {
            ModelSpec::Mixture2 { .. } | ModelSpec::Mixture10 { .. } => {
                Box::new(self.build_mixture()?.expect("mixture spec"))
            }
            ModelSpec::Quadratic { a, center, sigma_g } => {
                let n = a.len();
                if a.iter().any(|row| row.len() != n) {
                    return Err(Error::config("quadratic `a` must be square"));
                }
                let flat: Vec<f64> = a.iter().flatten().copied().collect();
                let center = center.clone().unwrap_or_else(|| vec![0.0; n]);
                Box::new(QuadraticModel::with_center(flat, n, center, *sigma_g)?)
            }
            ModelSpec::DoubleWell { sigma_g } => Box::new(DoubleWellModel::new(*sigma_g)?),
        })
    }

    pub fn build_mixture(&self) -> Result<Option<GaussianMixtureModel>> {
        Ok(match *self {
            ModelSpec::Mixture2 { t } => Some(GaussianMixtureModel::mixture2(t)?),
            ModelSpec::Mixture10 { t, prior_seed } => {
                Some(GaussianMixtureModel::mixture10(t, prior_seed)?)
            }
            _ => None,
        })
    }

    pub fn observation_count(&self) -> Option<usize> {
        match *self {
            ModelSpec::Mixture2 { t } | ModelSpec::Mixture10 { t, .. } => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Draws `T` observations from the model's likelihood at `theta_true`,
    /// or at a prior draw when `theta_true` is omitted.
    Generate {
        #[serde(default)]
        theta_true: Option<Vec<f64>>,
        seed: u64,
        sweeps: u64,
    },
    /// Loads observations from a CSV with header `y`; relative paths are
    /// resolved against the config file's directory.
    Csv { path: PathBuf, sweeps: u64 },
}

impl DatasetSpec {
    pub fn sweeps(&self) -> u64 {
        match *self {
            DatasetSpec::Generate { sweeps, .. } | DatasetSpec::Csv { sweeps, .. } => sweeps,
        }
    }
}

/// Metropolis–Hastings ground-truth chain run once per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub iterations: u64,
    pub seed: u64,
    #[serde(default = "one")]
    pub thin: u64,
    #[serde(default = "default_reference_burn_in")]
    pub burn_in_fraction: f64,
    /// Start of the chain; defaults to the generating parameter when known,
    /// otherwise to the samplers' `theta0`.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    /// Grid spacing, in iterations, of the posterior-mean curves.
    pub curve_every: u64,
    /// Grid spacing, in iterations, of the W1-to-reference curves.
    pub w1_every: u64,
    /// Fraction of each prefix discarded before the W1 at that prefix.
    pub w1_burn_in: f64,
    pub w1_threshold: f64,
    /// 1-based marginals that must all reach the threshold for a trial to
    /// count as crossed; all marginals when omitted.
    pub crossing_marginals: Option<Vec<usize>>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            curve_every: 100,
            w1_every: 500,
            w1_burn_in: 0.2,
            w1_threshold: 0.3,
            crossing_marginals: None,
        }
    }
}

fn one() -> u64 {
    1
}

fn default_reference_burn_in() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    pub algorithms: Vec<Algorithm>,
    /// Settings shared by every algorithm.
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Partial per-algorithm overrides of `sampler`.
    #[serde(default)]
    pub per_algorithm: BTreeMap<Algorithm, Map<String, Value>>,
    pub trials: usize,
    /// Defaults to one pass over the augmented dataset (`sweeps · T`).
    #[serde(default)]
    pub iterations: Option<u64>,
    /// Trial `t` uses seed `seed + t`.
    #[serde(default)]
    pub seed: u64,
    pub init: InitSpec,
    #[serde(default = "one")]
    pub thin: u64,
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default)]
    pub record_cost: bool,
    #[serde(default = "default_true")]
    pub write_trajectories: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads for trials; defaults to the available cores.
    #[serde(default)]
    pub max_parallel: Option<usize>,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

/// Deserializes JSON, reporting the offending field path with the serde
/// message (which carries line and column).
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("{origin}: at `{path}`: {}", e.inner()))
    })
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative dataset paths are
    /// resolved against the file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        if let Some(DatasetSpec::Csv { path: data, .. }) = cfg.dataset.as_mut() {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = parse_json(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `sampler` overlaid with the algorithm's overrides.
    pub fn sampler_for(&self, algorithm: Algorithm) -> Result<SamplerConfig> {
        let Some(over) = self.per_algorithm.get(&algorithm) else {
            return Ok(self.sampler.clone());
        };
        let mut base = serde_json::to_value(&self.sampler)?;
        let obj = base
            .as_object_mut()
            .expect("config serializes to an object");
        for (k, v) in over {
            obj.insert(k.clone(), v.clone());
        }
        parse_json(&base.to_string(), &format!("per_algorithm.{algorithm}"))
    }

    pub fn iterations(&self) -> Result<u64> {
        if let Some(it) = self.iterations {
            return Ok(it);
        }
        match (&self.dataset, self.model.observation_count()) {
            (Some(d), Some(t)) => Ok(d.sweeps() * t as u64),
            _ => Err(Error::config(
                "`iterations` is required when there is no dataset to sweep",
            )),
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
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
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return Err(Error::config(format!("algorithm `{a}` is listed twice")));
            }
        }
        if self.trials == 0 {
            return Err(Error::config("`trials` must be >= 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("`thin` must be >= 1"));
        }
        let model = self.model.build()?;
        let n = model.dim();
        if self.init.theta0.len() != n {
            return Err(Error::config(format!(
                "`init.theta0` has {} entries but the model has dimension {n}",
                self.init.theta0.len()
            )));
        }
        let is_mixture = self.model.observation_count().is_some();
        match (&self.dataset, is_mixture) {
            (None, true) => return Err(Error::config("mixture models need a `dataset`")),
            (Some(_), false) => {
                return Err(Error::config("`dataset` only applies to mixture models"))
            }
            _ => {}
        }
        if let Some(DatasetSpec::Generate {
            theta_true: Some(t),
            ..
        }) = &self.dataset
        {
            if t.len() != n {
                return Err(Error::config(format!(
                    "`dataset.theta_true` has {} entries, expected {n}",
                    t.len()
                )));
            }
        }
        if let Some(d) = &self.dataset {
            if d.sweeps() == 0 {
                return Err(Error::config("`dataset.sweeps` must be >= 1"));
            }
        }
        let iterations = self.iterations()?;
        if iterations == 0 {
            return Err(Error::config("`iterations` must be >= 1"));
        }
        for a in self.per_algorithm.keys() {
            if !self.algorithms.contains(a) && !(*a == Algorithm::Mh && self.reference.is_some()) {
                return Err(Error::config(format!(
                    "`per_algorithm.{a}` given but `{a}` is not run"
                )));
            }
        }
        for &a in &self.algorithms {
            self.sampler_for(a)?
                .validate(a)
                .map_err(|e| Error::config(format!("sampler settings for `{a}`: {e}")))?;
        }
        let m = &self.metrics;
        for (name, every) in [
            ("metrics.curve_every", m.curve_every),
            ("metrics.w1_every", m.w1_every),
        ] {
            if every == 0 || every % self.thin != 0 {
                return Err(Error::config(format!(
                    "`{name}` must be a positive multiple of `thin` ({})",
                    self.thin
                )));
            }
        }
        if !(0.0..1.0).contains(&m.w1_burn_in) {
            return Err(Error::config("`metrics.w1_burn_in` must lie in [0, 1)"));
        }
        if let Some(ms) = &m.crossing_marginals {
            if ms.is_empty() || ms.iter().any(|&i| i == 0 || i > n) {
                return Err(Error::config(format!(
                    "`metrics.crossing_marginals` must be non-empty 1-based indices up to {n}"
                )));
            }
        }
        if let Some(r) = &self.reference {
            if !is_mixture {
                return Err(Error::config(
                    "`reference` needs a mixture model with a dataset",
                ));
            }
            if r.iterations == 0 || r.thin == 0 {
                return Err(Error::config(
                    "`reference.iterations` and `reference.thin` must be >= 1",
                ));
            }
            if !(0.0..1.0).contains(&r.burn_in_fraction) {
                return Err(Error::config(
                    "`reference.burn_in_fraction` must lie in [0, 1)",
                ));
            }
            if r.theta0.as_ref().is_some_and(|t| t.len() != n) {
                return Err(Error::config(format!(
                    "`reference.theta0` must have {n} entries"
                )));
            }
            self.sampler_for(Algorithm::Mh)?
                .validate(Algorithm::Mh)
                .map_err(|e| Error::config(format!("sampler settings for `mh`: {e}")))?;
        }
        if self.max_parallel == Some(0) {
            return Err(Error::config("`max_parallel` must be >= 1"));
        }
        Ok(())
    }

    /// Builds (or loads) the dataset. Generation uses streams of
    /// `dataset.seed` only, so it is independent of the trial seeds.
    pub fn build_dataset(&self) -> Result<Option<DataSet>> {
        let Some(spec) = &self.dataset else {
            return Ok(None);
        };
        let model = self
            .model
            .build_mixture()?
            .ok_or_else(|| Error::config("`dataset` only applies to mixture models"))?;
        let t = model.observation_count();
        let data = match spec {
            DatasetSpec::Generate {
                theta_true, seed, ..
            } => {
                let truth = match theta_true {
                    Some(v) => v.clone(),
                    None => model.sample_prior(&mut stream(*seed, STREAM_DATASET_TRUTH)),
                };
                model.generate_dataset(&truth, t, &mut stream(*seed, STREAM_DATASET_OBS))?
            }
            DatasetSpec::Csv { path, .. } => {
                let d = DataSet::read_csv(path)?;
                if d.len() != t {
                    return Err(Error::config(format!(
                        "dataset {} has {} observations but the model expects T = {t}",
                        path.display(),
                        d.len()
                    )));
                }
                d
            }
        };
        Ok(Some(data))
    }
}
