//! Exponentially tailed losses `ℓ(u) = exp(−φ(u))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const INVERSE_TOLERANCE: f64 = 1e-12;
const BRACKET_LIMIT: f64 = 1e300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("value {0} is outside the representable range of phi")]
    Range(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `φ(u) = u`.
    Exponential,
    /// `φ(u) = −log log(1 + e^{−u})`.
    Logistic,
}

/// `log(1 + x) / x`, continuous at 0.
fn log1p_over_x(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x.ln_1p() / x
    }
}

/// Numerically stable `log(1 + e^{−u})`.
fn softplus_neg(u: f64) -> f64 {
    if u >= 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}

impl LossSpec {
    pub fn phi(self, u: f64) -> f64 {
        match self {
            LossSpec::Exponential => u,
            LossSpec::Logistic => -self.log_loss(u),
        }
    }

    /// `log ℓ(u) = −φ(u)`, accurate for large `u` where `ℓ` underflows.
    pub fn log_loss(self, u: f64) -> f64 {
        match self {
            LossSpec::Exponential => -u,
            LossSpec::Logistic => {
                if u > 30.0 {
                    let x = (-u).exp();
                    -u + log1p_over_x(x).ln()
                } else {
                    softplus_neg(u).ln()
                }
            }
        }
    }

    pub fn loss(self, u: f64) -> f64 {
        match self {
            LossSpec::Exponential => (-u).exp(),
            LossSpec::Logistic => softplus_neg(u),
        }
    }

    pub fn phi_prime(self, u: f64) -> f64 {
        match self {
            LossSpec::Exponential => 1.0,
            LossSpec::Logistic => {
                // φ'(u) = 1 / ((1 + e^u) · log(1 + e^{−u}))
                let denom = if u >= 0.0 {
                    let x = (-u).exp();
                    x.ln_1p() + log1p_over_x(x)
                } else {
                    (1.0 + u.exp()) * softplus_neg(u)
                };
                1.0 / denom
            }
        }
    }

    /// `ℓ'(u) = −φ'(u) · ℓ(u)`.
    pub fn loss_derivative(self, u: f64) -> f64 {
        -self.phi_prime(u) * self.loss(u)
    }

    pub fn phi_inv(self, v: f64) -> Result<f64, LossError> {
        if !v.is_finite() {
            return Err(LossError::Range(v));
        }
        match self {
            LossSpec::Exponential => Ok(v),
            LossSpec::Logistic => self.invert_monotone(v),
        }
    }

    /// `(φ⁻¹)'(v) = 1 / φ'(φ⁻¹(v))`.
    pub fn phi_inv_prime(self, v: f64) -> Result<f64, LossError> {
        Ok(1.0 / self.phi_prime(self.phi_inv(v)?))
    }

    /// Bracketing plus safeguarded Newton on the increasing map `φ`.
    fn invert_monotone(self, v: f64) -> Result<f64, LossError> {
        let f = |u: f64| self.phi(u) - v;
        let (mut lo, mut hi) = (v - 1.0, v + 1.0);
        let mut width = 1.0;
        while f(lo) > 0.0 {
            width *= 2.0;
            lo = v - width;
            if lo < -BRACKET_LIMIT {
                return Err(LossError::Range(v));
            }
        }
        width = 1.0;
        while f(hi) < 0.0 {
            width *= 2.0;
            hi = v + width;
            if hi > BRACKET_LIMIT {
                return Err(LossError::Range(v));
            }
        }
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fu = f(u);
            if fu == 0.0 {
                return Ok(u);
            }
            if fu > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let newton = u - fu / self.phi_prime(u);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - u).abs() <= INVERSE_TOLERANCE * (1.0 + u.abs()) {
                return Ok(next);
            }
            u = next;
        }
        Ok(u)
    }

    /// `Σ_i ℓ(z_i)`.
    pub fn total_loss(self, margins: &[f64]) -> f64 {
        margins.iter().map(|&z| self.loss(z)).sum()
    }

    /// `log Σ_i ℓ(z_i)` by log-sum-exp over `−φ(z_i)`; `−∞` for an empty set.
    pub fn log_total_loss(self, margins: &[f64]) -> f64 {
        let logs: Vec<f64> = margins.iter().map(|&z| self.log_loss(z)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_is_identity() {
        let s = LossSpec::Exponential;
        assert_eq!(s.phi(3.0), 3.0);
        assert_eq!(s.phi_inv(3.0).unwrap(), 3.0);
        assert_eq!(s.phi_prime(-17.0), 1.0);
    }

    #[test]
    fn logistic_values() {
        let s = LossSpec::Logistic;
        let expected = -(2f64.ln().ln());
        assert!((s.phi(0.0) - expected).abs() < 1e-15);
        assert!((s.phi(0.0) - 0.3665129).abs() < 1e-7);
        let u = s.phi_inv(s.phi(1.7)).unwrap();
        assert!((u - 1.7).abs() < 1e-10);
        assert!((s.phi_prime(0.0) - 1.0 / (2.0 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn logistic_extremes() {
        let s = LossSpec::Logistic;
        // deep in the tail φ(u) ≈ u
        assert!((s.phi(800.0) - 800.0).abs() < 1e-9);
        assert!((s.phi_prime(800.0) - 1.0).abs() < 1e-12);
        for v in [-8.0, -3.0, 0.0, 5.0, 40.0, 700.0] {
            let u = s.phi_inv(v).unwrap();
            assert!((s.phi(u) - v).abs() <= 1e-10 * (1.0 + v.abs()), "v={v}");
        }
        assert!(s.phi_inv(f64::NAN).is_err());
        assert!(s.phi_inv(-800.0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for s in [LossSpec::Exponential, LossSpec::Logistic] {
            for &u in &[-5.0, -0.3, 0.0, 0.7, 12.0] {
                let h = 1e-6;
                let fd = (s.phi(u + h) - s.phi(u - h)) / (2.0 * h);
                assert!((fd - s.phi_prime(u)).abs() < 1e-7, "{s:?} at {u}");
            }
        }
    }

    #[test]
    fn total_loss_examples() {
        let s = LossSpec::Exponential;
        let v = s.total_loss(&[3.0, 4.0]);
        assert!((v - ((-3f64).exp() + (-4f64).exp())).abs() < 1e-16);
        assert!((v - 0.0681028).abs() < 1e-7);
        assert_eq!(s.total_loss(&[]), 0.0);
        assert_eq!(LossSpec::Logistic.total_loss(&[]), 0.0);
        assert_eq!(s.total_loss(&[0.0, 0.0]), 2.0);
        assert!((s.log_total_loss(&[3.0, 4.0]) - v.ln()).abs() < 1e-14);
        assert_eq!(s.log_total_loss(&[]), f64::NEG_INFINITY);
    }
}
