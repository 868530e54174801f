//! Skew-symmetric matrices stored as their strict upper triangle.
//!
//! Only the entries `s(i, j)` with `i < j` are stored, row-major over the
//! triangle. The lower triangle and the zero diagonal are implied, so
//! `Sᵀ = −S` holds exactly for every value of this type.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default box `[S⁻, S⁺]` for adapted skew entries.
pub const DEFAULT_SKEW_BOUNDS: (f64, f64) = (-10.0, 10.0);

/// Number of free entries of an `n × n` skew-symmetric matrix.
pub fn upper_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of `(i, j)`, `i < j`, in row-major strict-upper storage.
#[inline]
pub fn upper_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Iterator over the `(i, j)` pairs, `i < j`, in storage order.
pub fn upper_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl SkewMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; upper_len(dim)],
        }
    }

    pub fn from_upper(dim: usize, upper: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("skew matrix dimension must be positive"));
        }
        if upper.len() != upper_len(dim) {
            return Err(Error::DimensionMismatch {
                expected: upper_len(dim),
                got: upper.len(),
            });
        }
        Ok(Self { dim, upper })
    }

    /// Builds from a dense row-major matrix, reading only the strict upper
    /// triangle.
    pub fn from_dense_upper(dim: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: dense.len(),
            });
        }
        let upper = upper_pairs(dim).map(|(i, j)| dense[i * dim + j]).collect();
        Self::from_upper(dim, upper)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn upper_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }

    /// Full-matrix entry `S(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.upper[upper_index(self.dim, i, j)],
            Greater => -self.upper[upper_index(self.dim, j, i)],
            Equal => 0.0,
        }
    }

    /// Sets `S(i, j) = value` (and therefore `S(j, i) = −value`).
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= self.dim || j >= self.dim {
            return Err(Error::invalid(format!(
                "index ({i}, {j}) out of range for dimension {}",
                self.dim
            )));
        }
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.upper[upper_index(self.dim, i, j)] = value,
            Greater => self.upper[upper_index(self.dim, j, i)] = -value,
            Equal => return Err(Error::invalid("diagonal of a skew matrix is fixed at zero")),
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for ((i, j), &s) in upper_pairs(n).zip(&self.upper) {
            out[i * n + j] = s;
            out[j * n + i] = -s;
        }
        out
    }

    /// `S x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// `out = S x` without allocating. Lengths are the caller's
    /// responsibility.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.apply_add(x, 1.0, out);
    }

    /// `out += scale · S x`, iterating the stored triangle.
    pub fn apply_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.dim;
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                let s = scale * self.upper[idx];
                out[i] += s * x[j];
                out[j] -= s * x[i];
                idx += 1;
            }
        }
    }

    /// `(I + S) x`.
    pub fn apply_identity_plus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = x.to_vec();
        self.apply_add(x, 1.0, &mut out);
        Ok(out)
    }

    /// Clamps every stored entry into `[lo, hi]`.
    pub fn project(&self, lo: f64, hi: f64) -> Result<Self> {
        let mut out = self.clone();
        out.project_in_place(lo, hi)?;
        Ok(out)
    }

    pub fn project_in_place(&mut self, lo: f64, hi: f64) -> Result<()> {
        check_bounds(lo, hi)?;
        for v in &mut self.upper {
            *v = v.clamp(lo, hi);
        }
        Ok(())
    }

    /// Tridiagonal initialization: `s(i, i+1) ~ N(0, 1)`, all other entries
    /// zero. For `dim = 2` this is `[[0, s], [−s, 0]]` with a single normal
    /// draw.
    pub fn init_tridiagonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("tridiagonal skew init needs dim >= 2"));
        }
        let mut out = Self::zeros(dim);
        for i in 0..dim - 1 {
            out.upper[upper_index(dim, i, i + 1)] = rng.sample(StandardNormal);
        }
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }
}

pub(crate) fn check_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo <= hi) {
        return Err(Error::invalid(format!(
            "projection interval [{lo}, {hi}] is empty"
        )));
    }
    Ok(())
}

/// Random skew-symmetric direction with Rademacher upper entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationMatrix {
    dim: usize,
    upper: Vec<i8>,
}

impl PerturbationMatrix {
    /// Draws each upper entry independently as ±1 with probability ½.
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(
                "perturbation matrix needs dim >= 2 (no free entries)",
            ));
        }
        let upper = (0..upper_len(dim))
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Ok(Self { dim, upper })
    }

    pub fn from_upper(dim: usize, upper: Vec<i8>) -> Result<Self> {
        if upper.len() != upper_len(dim) {
            return Err(Error::DimensionMismatch {
                expected: upper_len(dim),
                got: upper.len(),
            });
        }
        if upper.iter().any(|&d| d != 1 && d != -1) {
            return Err(Error::invalid("perturbation entries must be +1 or -1"));
        }
        Ok(Self { dim, upper })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn upper(&self) -> &[i8] {
        &self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => f64::from(self.upper[upper_index(self.dim, i, j)]),
            Greater => -f64::from(self.upper[upper_index(self.dim, j, i)]),
            Equal => 0.0,
        }
    }

    /// `out += scale · Δ x`.
    pub fn apply_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.dim;
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                let d = scale * f64::from(self.upper[idx]);
                out[i] += d * x[j];
                out[j] -= d * x[i];
                idx += 1;
            }
        }
    }

    pub fn to_skew(&self) -> SkewMatrix {
        SkewMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|&d| f64::from(d)).collect(),
        }
    }
}
