use std::fs;
use std::path::{Path, PathBuf};

use super::config::{parse_json, ExperimentConfig};
use super::run::{DATASET_FILE, FINAL_W1_FILE, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::models::DataSet;
use crate::samplers::Algorithm;

pub const COMPARISON_CURVES_FILE: &str = "comparison_curves.csv";
pub const COMPARISON_W1_FILE: &str = "comparison_w1.csv";

/// One labelled run directory loaded for comparison.
#[derive(Debug)]
pub struct RunDir {
    pub label: String,
    pub path: PathBuf,
    pub config: ExperimentConfig,
    pub dataset: Option<DataSet>,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self> {
        let cfg_path = path.join(RESOLVED_CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| {
            Error::invalid(format!("{} is not a run directory: {e}", path.display()))
        })?;
        let config: ExperimentConfig = parse_json(&text, &cfg_path.display().to_string())?;
        let data_path = path.join(DATASET_FILE);
        let dataset = if data_path.exists() {
            Some(DataSet::read_csv(&data_path)?)
        } else {
            None
        };
        let label = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self {
            label,
            path: path.to_path_buf(),
            config,
            dataset,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub source: String,
    pub algorithm: Algorithm,
    pub coordinate: usize,
    pub k: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct W1Row {
    pub source: String,
    pub algorithm: Algorithm,
    pub marginal: usize,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug)]
pub struct Comparison {
    pub curves: Vec<CurveRow>,
    pub w1: Vec<W1Row>,
}

/// Merges the posterior-mean curves and final W1-to-reference values of
/// several run directories into long-format CSVs under `out_dir`:
///
/// * `comparison_curves.csv`: `source,algorithm,coordinate,k,mean,std`
/// * `comparison_w1.csv`: `source,algorithm,marginal,w1_mean,w1_std,trials`
///
/// Runs must share the model, the dataset and the recording grid.
pub fn compare_runs(dirs: &[PathBuf], out_dir: &Path) -> Result<Comparison> {
    if dirs.is_empty() {
        return Err(Error::invalid("compare needs at least one run directory"));
    }
    let runs: Vec<RunDir> = dirs
        .iter()
        .map(|d| RunDir::open(d))
        .collect::<Result<_>>()?;
    check_compatible(&runs)?;

    let mut labels: Vec<String> = Vec::new();
    let mut curves = Vec::new();
    let mut w1 = Vec::new();
    for run in &runs {
        let mut label = run.label.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{}#{n}", run.label);
            n += 1;
        }
        labels.push(label.clone());
        let dim = run.config.init.theta0.len();
        for &a in &run.config.algorithms {
            for i in 0..dim {
                let p = run
                    .path
                    .join("curves")
                    .join(format!("mean_{a}_theta_{}.csv", i + 1));
                for (k, mean, std) in read_summary(&p)? {
                    curves.push(CurveRow {
                        source: label.clone(),
                        algorithm: a,
                        coordinate: i + 1,
                        k,
                        mean,
                        std,
                    });
                }
            }
        }
        let w1_path = run.path.join(FINAL_W1_FILE);
        if w1_path.exists() {
            w1.extend(read_final_w1(&w1_path, &label, dim)?);
        }
    }

    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join(COMPARISON_CURVES_FILE))?;
    w.write_record(["source", "algorithm", "coordinate", "k", "mean", "std"])?;
    for r in &curves {
        w.write_record([
            r.source.clone(),
            r.algorithm.to_string(),
            r.coordinate.to_string(),
            r.k.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out_dir.join(COMPARISON_W1_FILE))?;
    w.write_record([
        "source",
        "algorithm",
        "marginal",
        "w1_mean",
        "w1_std",
        "trials",
    ])?;
    for r in &w1 {
        w.write_record([
            r.source.clone(),
            r.algorithm.to_string(),
            r.marginal.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(Comparison { curves, w1 })
}

fn check_compatible(runs: &[RunDir]) -> Result<()> {
    let first = &runs[0];
    for run in &runs[1..] {
        let a = &first.config;
        let b = &run.config;
        let mismatch = |what: &str| {
            Err(Error::Mismatch(format!(
                "{} and {} have different {what}",
                first.path.display(),
                run.path.display()
            )))
        };
        if a.model != b.model {
            return mismatch("models");
        }
        if first.dataset.as_ref().map(|d| d.observations())
            != run.dataset.as_ref().map(|d| d.observations())
        {
            return mismatch("datasets");
        }
        if a.iterations()? != b.iterations()?
            || a.thin != b.thin
            || a.metrics.curve_every != b.metrics.curve_every
            || a.sampler.burn_in_fraction != b.sampler.burn_in_fraction
        {
            return mismatch("recording grids");
        }
        if a.reference != b.reference {
            return mismatch("reference chains");
        }
    }
    Ok(())
}

fn read_summary(path: &Path) -> Result<Vec<(u64, f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<(u64, f64, f64)>() {
        out.push(row?);
    }
    Ok(out)
}

fn read_final_w1(path: &Path, label: &str, dim: usize) -> Result<Vec<W1Row>> {
    let mut r = csv::Reader::from_path(path)?;
    // (algorithm, marginal) -> values, in first-seen order.
    let mut groups: Vec<(Algorithm, usize, Vec<f64>)> = Vec::new();
    for row in r.deserialize::<(String, usize, usize, f64)>() {
        let (alg, _trial, marginal, w1) = row?;
        let alg: Algorithm = alg.parse()?;
        if marginal == 0 || marginal > dim {
            return Err(Error::invalid(format!(
                "{}: marginal {marginal} out of range",
                path.display()
            )));
        }
        match groups.iter_mut().find(|g| g.0 == alg && g.1 == marginal) {
            Some(g) => g.2.push(w1),
            None => groups.push((alg, marginal, vec![w1])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(algorithm, marginal, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            W1Row {
                source: label.to_string(),
                algorithm,
                marginal,
                mean,
                std,
                trials: v.len(),
            }
        })
        .collect())
}
