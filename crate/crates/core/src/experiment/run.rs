use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_trials, running_posterior_mean, w1_curve, wasserstein1, MarginalCdf, TrialSummary,
};
use crate::models::{CostModel, DataSet};
use crate::samplers::{run_sampler, Algorithm, InitSpec, RunSpec, Trajectory};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const REFERENCE_FILE: &str = "reference.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const FINAL_W1_FILE: &str = "final_w1.csv";

/// Per-(algorithm, trial) results kept after the trajectory is dropped.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    /// Running posterior mean of each coordinate on the curve grid.
    pub mean_curves: Vec<Vec<(u64, f64)>>,
    /// W1 to the reference per marginal on the W1 grid (empty without a
    /// reference).
    pub w1_curves: Vec<Vec<(u64, f64)>>,
    /// First grid iteration at which every crossing marginal is at or below
    /// the threshold.
    pub crossing: Option<u64>,
    /// W1 between the post-burn-in samples of the whole run and the
    /// reference, per marginal.
    pub final_w1: Vec<f64>,
    pub final_skew: Option<Vec<f64>>,
    pub accepted: u64,
    pub trajectory_file: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub mean_curves: Vec<TrialSummary>,
    pub w1_curves: Vec<TrialSummary>,
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<AlgorithmSummary>,
    pub reference: Option<Vec<MarginalCdf>>,
    pub files: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn trials_of(&self, algorithm: Algorithm) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(move |t| t.algorithm == algorithm)
    }

    pub fn summary(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    pub trajectory: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub crate_version: String,
    pub seed_policy: String,
    pub base_seed: u64,
    pub resolved_config: String,
    pub runs: Vec<ManifestEntry>,
    pub files: Vec<String>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

/// Runs every (algorithm, trial) pair of `config` and writes its outputs
/// under `out_dir`:
///
/// * `resolved_config.json`, `manifest.json`
/// * `dataset.csv` and `reference.csv` when applicable
/// * `trajectories/<alg>_trial<t>.csv` (and `_skew.csv` snapshots)
/// * `curves/mean_<alg>_theta_<i>.csv`, `curves/w1_<alg>_theta_<i>.csv`
/// * `trials.csv` (`algorithm,trial,seed,crossing_k,accepted`) and
///   `final_w1.csv` (`algorithm,trial,marginal,w1`)
///
/// Output bytes depend only on the config, never on worker scheduling.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let resolved = out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved, serde_json::to_string_pretty(config)? + "\n")?;
    files.push(resolved);

    let model = config.model.build()?;
    let dataset = config.build_dataset()?;
    if let Some(d) = &dataset {
        let p = out_dir.join(DATASET_FILE);
        d.write_csv(&p)?;
        files.push(p);
    }

    let reference = match &config.reference {
        Some(spec) => {
            let theta0 = spec
                .theta0
                .clone()
                .or_else(|| dataset.as_ref().and_then(|d| d.true_theta.clone()))
                .unwrap_or_else(|| config.init.theta0.clone());
            let traj = run_sampler(
                Algorithm::Mh,
                model.as_ref(),
                dataset.as_ref(),
                &config.sampler_for(Algorithm::Mh)?,
                &InitSpec::at(theta0),
                &RunSpec {
                    iterations: spec.iterations,
                    seed: spec.seed,
                    thin: spec.thin,
                    ..RunSpec::default()
                },
            )?;
            log::info!(
                "reference: {} MH steps, acceptance {:.3}",
                spec.iterations,
                traj.accepted as f64 / spec.iterations as f64
            );
            let p = out_dir.join(REFERENCE_FILE);
            traj.write_csv(&p)?;
            files.push(p);
            Some(
                (0..model.dim())
                    .map(|i| {
                        MarginalCdf::new(traj.marginal_samples(i, spec.burn_in_fraction, false))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };

    let traj_dir = out_dir.join("trajectories");
    if config.write_trajectories {
        fs::create_dir_all(&traj_dir)?;
    }
    let jobs: Vec<(Algorithm, usize)> = config
        .algorithms
        .iter()
        .flat_map(|&a| (0..config.trials).map(move |t| (a, t)))
        .collect();
    let workers = config.max_parallel.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    let ctx = TrialContext {
        config,
        model: model.as_ref(),
        dataset: dataset.as_ref(),
        reference: reference.as_deref(),
        traj_dir: config.write_trajectories.then_some(traj_dir.as_path()),
    };
    // Indexed collection keeps results in job order whatever the schedule.
    let trials: Vec<TrialResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, t)| ctx.run(a, t))
            .collect::<Result<Vec<_>>>()
    })?;
    for t in &trials {
        if let Some(p) = &t.trajectory_file {
            files.push(p.clone());
        }
    }

    let curve_dir = out_dir.join("curves");
    fs::create_dir_all(&curve_dir)?;
    let mut summaries = Vec::new();
    for &a in &config.algorithms {
        let mine: Vec<&TrialResult> = trials.iter().filter(|t| t.algorithm == a).collect();
        let mut mean_curves = Vec::new();
        let mut w1_curves = Vec::new();
        for i in 0..model.dim() {
            let s = aggregate_trials(
                &mine
                    .iter()
                    .map(|t| t.mean_curves[i].clone())
                    .collect::<Vec<_>>(),
            )?;
            let p = curve_dir.join(format!("mean_{a}_theta_{}.csv", i + 1));
            s.write_csv(&p)?;
            files.push(p);
            mean_curves.push(s);
            if reference.is_some() {
                let s = aggregate_trials(
                    &mine
                        .iter()
                        .map(|t| t.w1_curves[i].clone())
                        .collect::<Vec<_>>(),
                )?;
                let p = curve_dir.join(format!("w1_{a}_theta_{}.csv", i + 1));
                s.write_csv(&p)?;
                files.push(p);
                w1_curves.push(s);
            }
        }
        summaries.push(AlgorithmSummary {
            algorithm: a,
            mean_curves,
            w1_curves,
        });
    }

    let p = out_dir.join(TRIALS_FILE);
    write_trials_csv(&p, &trials)?;
    files.push(p);
    if reference.is_some() {
        let p = out_dir.join(FINAL_W1_FILE);
        write_final_w1_csv(&p, &trials)?;
        files.push(p);
    }

    let wall = started.elapsed().as_secs_f64();
    let manifest = Manifest {
        name: config.name.clone(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed_policy: "trial t uses seed + t".into(),
        base_seed: config.seed,
        resolved_config: RESOLVED_CONFIG_FILE.into(),
        runs: trials
            .iter()
            .map(|t| ManifestEntry {
                algorithm: t.algorithm,
                trial: t.trial,
                seed: t.seed,
                trajectory: t.trajectory_file.as_ref().map(|p| relative(out_dir, p)),
            })
            .collect(),
        files: files.iter().map(|p| relative(out_dir, p)).collect(),
        started_unix_seconds: started_unix,
        wall_clock_seconds: wall,
    };
    let p = out_dir.join(MANIFEST_FILE);
    fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(p);

    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        trials,
        summaries,
        reference,
        files,
        wall_clock_seconds: wall,
    })
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

struct TrialContext<'a> {
    config: &'a ExperimentConfig,
    model: &'a dyn CostModel,
    dataset: Option<&'a DataSet>,
    reference: Option<&'a [MarginalCdf]>,
    traj_dir: Option<&'a Path>,
}

impl TrialContext<'_> {
    fn run(&self, algorithm: Algorithm, trial: usize) -> Result<TrialResult> {
        let seed = self.config.trial_seed(trial);
        self.run_inner(algorithm, trial, seed)
            .map_err(|e| Error::Trial {
                trial,
                seed,
                source: Box::new(e),
            })
    }

    fn run_inner(&self, algorithm: Algorithm, trial: usize, seed: u64) -> Result<TrialResult> {
        let cfg = self.config;
        let sampler = cfg.sampler_for(algorithm)?;
        let iterations = cfg.iterations()?;
        let traj = run_sampler(
            algorithm,
            self.model,
            self.dataset,
            &sampler,
            &cfg.init,
            &RunSpec {
                iterations,
                seed,
                thin: cfg.thin,
                snapshot_every: cfg.snapshot_every,
                record_cost: cfg.record_cost,
            },
        )?;

        let trajectory_file = match self.traj_dir {
            Some(dir) => {
                let p = dir.join(format!("{algorithm}_trial{trial}.csv"));
                traj.write_csv(&p)?;
                if !traj.skew_snapshots().is_empty() {
                    traj.write_skew_csv(dir.join(format!("{algorithm}_trial{trial}_skew.csv")))?;
                }
                Some(p)
            }
            None => None,
        };

        let n = traj.dim();
        let mut mean_curves = Vec::with_capacity(n);
        for i in 0..n {
            let full = running_posterior_mean(&traj, i, sampler.burn_in_fraction)?;
            mean_curves.push(on_grid(&full, cfg.metrics.curve_every));
        }

        let mut w1_curves = Vec::new();
        let mut final_w1 = Vec::new();
        let mut crossing = None;
        if let Some(reference) = self.reference {
            let stride = (cfg.metrics.w1_every / cfg.thin) as usize;
            for (i, r) in reference.iter().enumerate() {
                w1_curves.push(w1_curve(&traj, i, r, cfg.metrics.w1_burn_in, stride)?);
                let own =
                    MarginalCdf::new(traj.marginal_samples(i, sampler.burn_in_fraction, false))?;
                final_w1.push(wasserstein1(&own, r));
            }
            crossing = joint_crossing(&w1_curves, cfg, n);
        }

        Ok(TrialResult {
            algorithm,
            trial,
            seed,
            mean_curves,
            w1_curves,
            crossing,
            final_w1,
            final_skew: traj
                .skew_snapshots()
                .last()
                .map(|(_, s)| s.upper().to_vec()),
            accepted: traj.accepted,
            trajectory_file,
        })
    }
}

/// Keeps the points whose iteration is a multiple of `every`, plus the last.
fn on_grid(curve: &[(u64, f64)], every: u64) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = curve
        .iter()
        .copied()
        .filter(|(k, _)| k % every == 0)
        .collect();
    if let Some(&last) = curve.last() {
        if out.last().map(|p| p.0) != Some(last.0) {
            out.push(last);
        }
    }
    out
}

/// First grid point at which every crossing marginal is at or below the
/// threshold simultaneously.
fn joint_crossing(curves: &[Vec<(u64, f64)>], cfg: &ExperimentConfig, n: usize) -> Option<u64> {
    let marginals: Vec<usize> = match &cfg.metrics.crossing_marginals {
        Some(ms) => ms.iter().map(|m| m - 1).collect(),
        None => (0..n).collect(),
    };
    let len = curves[marginals[0]].len();
    (0..len)
        .find(|&p| {
            marginals
                .iter()
                .all(|&i| curves[i][p].1 <= cfg.metrics.w1_threshold)
        })
        .map(|p| curves[marginals[0]][p].0)
}

fn write_trials_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "trial", "seed", "crossing_k", "accepted"])?;
    for t in trials {
        w.write_record([
            t.algorithm.to_string(),
            t.trial.to_string(),
            t.seed.to_string(),
            t.crossing.map(|k| k.to_string()).unwrap_or_default(),
            t.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_final_w1_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "trial", "marginal", "w1"])?;
    for t in trials {
        for (i, v) in t.final_w1.iter().enumerate() {
            w.write_record([
                t.algorithm.to_string(),
                t.trial.to_string(),
                (i + 1).to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the trajectory CSV of one (algorithm, trial) from a run directory.
pub fn load_trajectory(run_dir: &Path, algorithm: Algorithm, trial: usize) -> Result<Trajectory> {
    Trajectory::read_csv(
        run_dir
            .join("trajectories")
            .join(format!("{algorithm}_trial{trial}.csv")),
    )
}
