//! Posterior summaries and distances between sample sets.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::samplers::Trajectory;

/// Running mean of coordinate `i` over the post-burn-in records: entry `r` is
/// the mean over records `(burn-in, r]`.
pub fn running_posterior_mean(
    traj: &Trajectory,
    i: usize,
    burn_in_fraction: f64,
) -> Result<Vec<(u64, f64)>> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory has no records".into()));
    }
    if i >= traj.dim() {
        return Err(Error::invalid(format!("coordinate {i} out of range")));
    }
    let start = traj.burn_in_start(burn_in_fraction);
    if start >= traj.len() {
        return Err(Error::Empty("burn-in consumes every record".into()));
    }
    let mut sum = 0.0;
    Ok(traj
        .coordinate(i)
        .zip(traj.ks())
        .skip(start)
        .enumerate()
        .map(|(n, (x, &k))| {
            sum += x;
            (k, sum / (n + 1) as f64)
        })
        .collect())
}

/// Empirical CDF of one marginal, a right-continuous step function.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCdf {
    sorted: Vec<f64>,
}

impl MarginalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("marginal needs at least one sample".into()));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("marginal samples contain NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `F(x) = #{samples ≤ x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }
}

/// `∫ |F_a − F_b|`. Equal sizes use the sorted pairing
/// `mean |a_(r) − b_(r)|`; otherwise the step CDFs are integrated exactly over
/// the merged breakpoints.
pub fn wasserstein1(a: &MarginalCdf, b: &MarginalCdf) -> f64 {
    if a.len() == b.len() {
        let total: f64 = a
            .sorted
            .iter()
            .zip(&b.sorted)
            .map(|(x, y)| (x - y).abs())
            .sum();
        total / a.len() as f64
    } else {
        wasserstein1_cdf_integral(a, b)
    }
}

fn wasserstein1_cdf_integral(a: &MarginalCdf, b: &MarginalCdf) -> f64 {
    let (xa, xb) = (&a.sorted, &b.sorted);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = xa[0].min(xb[0]);
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (next - prev);
        while i < xa.len() && xa[i] <= next {
            i += 1;
        }
        while j < xb.len() && xb[j] <= next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// W1 between coordinate `i` of a trajectory and a reference marginal,
/// evaluated every `every` records on the window `(fraction·r, r]`.
pub fn w1_curve(
    traj: &Trajectory,
    i: usize,
    reference: &MarginalCdf,
    burn_in_fraction: f64,
    every: usize,
) -> Result<Vec<(u64, f64)>> {
    if every == 0 {
        return Err(Error::invalid("w1 curve stride must be positive"));
    }
    if traj.is_empty() {
        return Err(Error::Empty("trajectory has no records".into()));
    }
    let xs: Vec<f64> = traj.coordinate(i).collect();
    let mut out = Vec::with_capacity(xs.len() / every + 1);
    let mut r = every;
    loop {
        let r_end = r.min(xs.len());
        let start = ((r_end as f64) * burn_in_fraction).floor() as usize;
        let window = xs[start.min(r_end - 1)..r_end].to_vec();
        let cdf = MarginalCdf::new(window)?;
        out.push((traj.ks()[r_end - 1], wasserstein1(&cdf, reference)));
        if r_end == xs.len() {
            break;
        }
        r += every;
    }
    Ok(out)
}

/// First iteration at which `curve` drops to `threshold` or below.
pub fn first_crossing(curve: &[(u64, f64)], threshold: f64) -> Option<u64> {
    curve.iter().find(|(_, v)| *v <= threshold).map(|(k, _)| *k)
}

/// Normalized 1-D histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1d {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
    /// Samples outside `[lo, hi]` that were dropped.
    pub clipped: usize,
}

impl Histogram1d {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.masses.len() as f64
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.bin_width();
        (0..self.masses.len()).map(move |b| self.lo + (b as f64 + 0.5) * w)
    }

    /// Mass divided by bin width.
    pub fn densities(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.bin_width();
        self.masses.iter().map(move |m| m / w)
    }

    pub fn argmax(&self) -> usize {
        self.masses
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(x >= lo && x <= hi) {
        return None;
    }
    let b = ((x - lo) / (hi - lo) * bins as f64).floor() as usize;
    Some(b.min(bins - 1))
}

fn check_range(range: (f64, f64), bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(range.0 < range.1) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::invalid(format!(
            "histogram range {range:?} is empty"
        )));
    }
    Ok(())
}

/// Histogram of `samples` on `range` with masses summing to one. Samples
/// outside the range are an error unless `clip` is set, in which case they
/// are dropped and counted.
pub fn histogram_1d(
    samples: &[f64],
    bins: usize,
    range: (f64, f64),
    clip: bool,
) -> Result<Histogram1d> {
    check_range(range, bins)?;
    let mut counts = vec![0usize; bins];
    let mut clipped = 0;
    for &x in samples {
        match bin_of(x, range.0, range.1, bins) {
            Some(b) => counts[b] += 1,
            None if clip => clipped += 1,
            None => {
                return Err(Error::invalid(format!(
                    "sample {x} outside histogram range {range:?}"
                )))
            }
        }
    }
    let kept = samples.len() - clipped;
    if kept == 0 {
        return Err(Error::Empty("no samples fall inside the histogram".into()));
    }
    Ok(Histogram1d {
        lo: range.0,
        hi: range.1,
        masses: counts.iter().map(|&c| c as f64 / kept as f64).collect(),
        clipped,
    })
}

/// 1-D histogram of one trajectory coordinate after burn-in.
pub fn histogram_density(
    traj: &Trajectory,
    i: usize,
    bins: usize,
    range: (f64, f64),
    burn_in_fraction: f64,
    clip: bool,
) -> Result<Histogram1d> {
    let samples = traj.marginal_samples(i, burn_in_fraction, true);
    if samples.is_empty() {
        return Err(Error::Empty("no post-burn-in samples".into()));
    }
    histogram_1d(&samples, bins, range, clip)
}

/// Normalized 2-D histogram, row-major `[bx * bins_y + by]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub bins: (usize, usize),
    pub masses: Vec<f64>,
    pub clipped: usize,
}

/// Joint histogram of coordinates `(i, j)` after burn-in.
pub fn histogram_density_2d(
    traj: &Trajectory,
    coords: (usize, usize),
    bins: (usize, usize),
    ranges: ((f64, f64), (f64, f64)),
    burn_in_fraction: f64,
    clip: bool,
) -> Result<Histogram2d> {
    check_range(ranges.0, bins.0)?;
    check_range(ranges.1, bins.1)?;
    let start = traj.burn_in_start(burn_in_fraction);
    if start >= traj.len() {
        return Err(Error::Empty("no post-burn-in samples".into()));
    }
    let mut counts = vec![0usize; bins.0 * bins.1];
    let mut clipped = 0;
    for r in start..traj.len() {
        let th = traj.theta(r);
        let (x, y) = (th[coords.0], th[coords.1]);
        match (
            bin_of(x, ranges.0 .0, ranges.0 .1, bins.0),
            bin_of(y, ranges.1 .0, ranges.1 .1, bins.1),
        ) {
            (Some(bx), Some(by)) => counts[bx * bins.1 + by] += 1,
            _ if clip => clipped += 1,
            _ => {
                return Err(Error::invalid(format!(
                    "sample ({x}, {y}) outside histogram ranges"
                )))
            }
        }
    }
    let kept: usize = counts.iter().sum();
    if kept == 0 {
        return Err(Error::Empty("no samples fall inside the histogram".into()));
    }
    Ok(Histogram2d {
        x_range: ranges.0,
        y_range: ranges.1,
        bins,
        masses: counts.iter().map(|&c| c as f64 / kept as f64).collect(),
        clipped,
    })
}

/// Least-squares fit of `log density` on `−β C(bin centre)` over occupied
/// bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub bins_used: usize,
}

pub fn gibbs_regression(
    hist: &Histogram1d,
    cost: impl Fn(f64) -> f64,
    beta: f64,
) -> Result<GibbsFit> {
    let pts: Vec<(f64, f64)> = hist
        .centers()
        .zip(hist.densities())
        .filter(|(_, d)| *d > 0.0)
        .map(|(c, d)| (-beta * cost(c), d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Empty("fewer than three occupied bins".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("degenerate regression"));
    }
    let slope = sxy / sxx;
    Ok(GibbsFit {
        slope,
        intercept: my - slope * mx,
        r_squared: sxy * sxy / (sxx * syy),
        bins_used: pts.len(),
    })
}

/// Sample covariance (row-major `N × N`, denominator `n − 1`) of the
/// post-burn-in records.
pub fn sample_covariance(traj: &Trajectory, burn_in_fraction: f64) -> Result<Vec<f64>> {
    let start = traj.burn_in_start(burn_in_fraction);
    let n = traj.len().saturating_sub(start);
    if n < 2 {
        return Err(Error::Empty(
            "need at least two post-burn-in records".into(),
        ));
    }
    let d = traj.dim();
    let mut mean = vec![0.0; d];
    for r in start..traj.len() {
        for (m, x) in mean.iter_mut().zip(traj.theta(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for r in start..traj.len() {
        let th = traj.theta(r);
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (th[a] - mean[a]) * (th[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    Ok(cov)
}

/// Pointwise mean and population standard deviation of several curves on a
/// common grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub ks: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub trials: usize,
}

impl TrialSummary {
    /// CSV `k,mean,std`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["k", "mean", "std"])?;
        for ((k, m), s) in self.ks.iter().zip(&self.mean).zip(&self.std) {
            w.write_record([k.to_string(), m.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn aggregate_trials(curves: &[Vec<(u64, f64)>]) -> Result<TrialSummary> {
    if curves.is_empty() {
        return Err(Error::Empty("aggregation needs at least one trial".into()));
    }
    let grid: Vec<u64> = curves[0].iter().map(|(k, _)| *k).collect();
    for (t, c) in curves.iter().enumerate().skip(1) {
        if c.len() != grid.len() || c.iter().zip(&grid).any(|((k, _), g)| k != g) {
            return Err(Error::Mismatch(format!(
                "trial {t} is recorded on a different grid than trial 0"
            )));
        }
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; grid.len()];
    let mut std = vec![0.0; grid.len()];
    for (p, (m, s)) in mean.iter_mut().zip(std.iter_mut()).enumerate() {
        *m = curves.iter().map(|c| c[p].1).sum::<f64>() / n;
        *s = (curves.iter().map(|c| (c[p].1 - *m).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok(TrialSummary {
        ks: grid,
        mean,
        std,
        trials: curves.len(),
    })
}
