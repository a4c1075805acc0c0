//! Dense parameter vectors.
//!
//! Every model copy, gradient and momentum buffer in a run is a
//! [`ParamVector`] of one fixed dimension. Arithmetic checks dimensions and
//! rejects non-finite results, so a diverging run surfaces as an error at the
//! first bad step instead of propagating NaNs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Returns `a * self`.
    pub fn scaled(&self, a: f64) -> Result<ParamVector> {
        let out: Vec<f64> = self.0.iter().map(|v| a * v).collect();
        check_finite(&out)?;
        Ok(ParamVector(out))
    }

    /// In-place `self <- a * x + self`; same arithmetic as [`axpy`].
    pub fn axpy_assign(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_dim(x)?;
        for (y, xv) in self.0.iter_mut().zip(&x.0) {
            *y += a * xv;
        }
        check_finite(&self.0)
    }

    /// In-place convex-style combination `self <- s * self + t * x`.
    pub fn combine_assign(&mut self, s: f64, t: f64, x: &ParamVector) -> Result<()> {
        self.check_dim(x)?;
        for (y, xv) in self.0.iter_mut().zip(&x.0) {
            *y = s * *y + t * xv;
        }
        check_finite(&self.0)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub(crate) fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        check_finite(&self.0)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Returns `a * x + y`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    let mut out = y.clone();
    out.axpy_assign(a, x)?;
    Ok(out)
}

/// Arithmetic mean, summed left to right over the slice and then divided by
/// its length. All cross-worker averages go through here so replays are
/// bit-exact.
pub fn mean(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("vectors", "cannot average an empty set"))?;
    let mut acc = first.clone();
    for v in &vectors[1..] {
        acc.axpy_assign(1.0, v)?;
    }
    let n = vectors.len() as f64;
    for a in acc.values_mut() {
        *a /= n;
    }
    Ok(acc)
}
