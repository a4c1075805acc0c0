use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate: a fixed value or derived from the objective's smoothness
/// constant as `(1/L) * sqrt(m/K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Fixed(f64),
    Derived(DerivedRate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivedRate {
    Theorem,
}

impl LearningRate {
    pub const THEOREM: LearningRate = LearningRate::Derived(DerivedRate::Theorem);

    /// Resolves to a number. `smoothness` is required for the derived rate.
    pub fn resolve(self, smoothness: Option<f64>, m: usize, iterations: usize) -> Result<f64> {
        match self {
            LearningRate::Fixed(eta) => Ok(eta),
            LearningRate::Derived(DerivedRate::Theorem) => {
                let l = smoothness.ok_or_else(|| {
                    Error::invalid("eta", "the theorem learning rate needs an exact smoothness constant")
                })?;
                crate::analysis::theorem_lr(l, m, iterations)
            }
        }
    }
}

/// How strictly `alpha` is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Degenerate `alpha in {0, 1}` allowed.
    Verification,
    /// Convergence-bound runs; `alpha` must lie strictly inside (0, 1).
    BoundCheck,
}

/// Full configuration of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub m: usize,
    pub d: usize,
    pub tau: usize,
    pub alpha: f64,
    pub eta: LearningRate,
    pub beta: f64,
    pub mu: f64,
    #[serde(rename = "K")]
    pub iterations: usize,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("m", "worker count must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d", "dimension must be at least 1"));
        }
        if self.tau == 0 {
            return Err(Error::invalid("tau", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("K", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if mode == Mode::BoundCheck && (self.alpha == 0.0 || self.alpha == 1.0) {
            return Err(Error::invalid("alpha", "0 and 1 are only allowed in verification mode"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid("beta", format!("{} is outside [0, 1)", self.beta)));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::invalid("mu", format!("{} is outside [0, 1)", self.mu)));
        }
        if let LearningRate::Fixed(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid("eta", format!("{eta} is not a positive finite number")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> HyperParams {
        HyperParams {
            m: 4,
            d: 3,
            tau: 2,
            alpha: 0.6,
            eta: LearningRate::Fixed(0.1),
            beta: 0.7,
            mu: 0.0,
            iterations: 10,
            seed: 1,
        }
    }

    #[test]
    fn degenerate_alpha_only_in_verification() {
        let hp = HyperParams { alpha: 1.0, ..base() };
        assert!(hp.validate(Mode::Verification).is_ok());
        assert!(hp.validate(Mode::BoundCheck).is_err());
        let hp = HyperParams { alpha: 1.5, ..base() };
        assert!(hp.validate(Mode::Verification).is_err());
    }

    #[test]
    fn theorem_rate_needs_smoothness() {
        assert!(LearningRate::THEOREM.resolve(None, 4, 400).is_err());
        assert_eq!(LearningRate::THEOREM.resolve(Some(2.0), 4, 400).unwrap(), 0.05);
    }

    #[test]
    fn eta_serde_forms() {
        let t: LearningRate = serde_json::from_str("\"theorem\"").unwrap();
        assert_eq!(t, LearningRate::THEOREM);
        let f: LearningRate = serde_json::from_str("0.25").unwrap();
        assert_eq!(f, LearningRate::Fixed(0.25));
    }
}
