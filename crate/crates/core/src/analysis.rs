//! Convergence-bound apparatus: the theorem learning rate, the iteration
//! threshold, the four-term bound, and rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Ensemble;
use crate::vector::ParamVector;

/// `eta = (1/L) sqrt(m/K)`.
pub fn theorem_lr(smoothness: f64, m: usize, iterations: usize) -> Result<f64> {
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(Error::invalid("L", format!("{smoothness} must be positive")));
    }
    if iterations == 0 || m == 0 {
        return Err(Error::invalid("K", "m and K must be at least 1"));
    }
    Ok((m as f64 / iterations as f64).sqrt() / smoothness)
}

/// `ceil(60 m tau^2 / alpha^2)`.
pub fn min_iterations(m: usize, tau: usize, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    let exact = 60.0 * m as f64 * (tau * tau) as f64 / (alpha * alpha);
    // Absorb rounding in alpha^2 so that exact integers are not bumped up.
    Ok((exact * (1.0 - 4.0 * f64::EPSILON)).ceil() as usize)
}

/// `D = 15 eta^2 L^2 tau^2 / alpha^2`.
pub fn d_constant(eta: f64, smoothness: f64, tau: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    let t = tau as f64;
    Ok(15.0 * eta * eta * smoothness * smoothness * t * t / (alpha * alpha))
}

/// Every symbol of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(rename = "L")]
    pub smoothness: f64,
    /// `F(y_0) - F_inf`.
    pub gap: f64,
    pub sigma2: f64,
    pub kappa2: f64,
    pub m: usize,
    pub tau: usize,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub iterations: usize,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("L", self.smoothness),
            ("gap", self.gap),
            ("sigma2", self.sigma2),
            ("kappa2", self.kappa2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("{} is outside (0, 1)", self.alpha)));
        }
        if self.iterations == 0 || self.m == 0 || self.tau == 0 {
            return Err(Error::invalid("K", "m, tau and K must be at least 1"));
        }
        Ok(())
    }

    /// The four terms in order: initial gap, noise, local-drift noise,
    /// heterogeneity.
    pub fn terms(&self) -> Result<[f64; 4]> {
        self.validate()?;
        let (l, a) = (self.smoothness, self.alpha);
        let (m, k, t) = (self.m as f64, self.iterations as f64, self.tau as f64);
        let root = (m * k).sqrt();
        Ok([
            4.0 * l * self.gap / ((1.0 - a) * root),
            2.0 * (1.0 - a) * self.sigma2 / root,
            (2.0 * m * self.sigma2 / k) * (2.0 * t / ((2.0 - a) * a) - 1.0),
            2.0 * m * t * t * self.kappa2 / (a * a * k),
        ])
    }

    pub fn below_threshold(&self) -> bool {
        min_iterations(self.m, self.tau, self.alpha).is_ok_and(|k| self.iterations < k)
    }
}

/// Right-hand side of the bound on `(1/K) sum_k E|grad F(y_k)|^2`.
pub fn theorem_rhs(b: &BoundInputs) -> Result<f64> {
    Ok(b.terms()?.iter().sum())
}

/// `|grad F(y_k)|^2` for each virtual point.
pub fn grad_norm_series(points: &[ParamVector], ensemble: &Ensemble) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("points", "no virtual points recorded"));
    }
    points.iter().map(|y| Ok(ensemble.global_grad(y)?.norm_sq())).collect()
}

pub fn avg_grad_norm(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::invalid("series", "empty"));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Least-squares line through `(log(mK), log(value))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

/// Fits `log(value)` against `log(mk)` for `(mk, value)` pairs.
pub fn rate_slope(samples: &[(f64, f64)]) -> Result<RateFit> {
    if samples.len() < 3 {
        return Err(Error::invalid("samples", "need at least 3 points"));
    }
    if samples.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::invalid("samples", "values must be positive to take logs"));
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 1e-12) {
        return Err(Error::invalid("samples", "all mK values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        points,
        slope,
        intercept,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BoundHolds,
    BoundViolated,
}

/// Empirical check of the bound over a seed ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub eta: f64,
    pub min_iterations: usize,
    pub seeds: Vec<u64>,
    pub per_seed_lhs: Vec<f64>,
    pub mean_lhs: f64,
    pub rhs: f64,
    pub rhs_terms: [f64; 4],
    /// `rhs / mean_lhs`.
    pub slack: f64,
    pub verdict: Verdict,
}

impl BoundReport {
    pub fn new(inputs: BoundInputs, eta: f64, seeds: Vec<u64>, per_seed_lhs: Vec<f64>) -> Result<Self> {
        if seeds.len() != per_seed_lhs.len() || seeds.is_empty() {
            return Err(Error::invalid("seeds", "need one LHS value per seed"));
        }
        let rhs_terms = inputs.terms()?;
        let rhs: f64 = rhs_terms.iter().sum();
        let mean_lhs = avg_grad_norm(&per_seed_lhs)?;
        Ok(Self {
            inputs,
            eta,
            min_iterations: min_iterations(inputs.m, inputs.tau, inputs.alpha)?,
            seeds,
            per_seed_lhs,
            mean_lhs,
            rhs,
            rhs_terms,
            slack: rhs / mean_lhs,
            verdict: if mean_lhs <= rhs {
                Verdict::BoundHolds
            } else {
                Verdict::BoundViolated
            },
        })
    }
}
