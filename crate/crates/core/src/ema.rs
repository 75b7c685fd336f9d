//! Continuous-time exponential moving averages `dm/dt = c (g − m)`, `m(0) = 0`.
//!
//! Updates integrate the ODE exactly for an input held constant over the step,
//! so `dt = 1` reproduces discrete momentum with `β = e^{−c}`.

use thiserror::Error;

/// `−log 0.9`: continuous analogue of `β₁ = 0.9`.
pub fn default_c1() -> f64 {
    -(0.9f64.ln())
}

/// `−log 0.999`: continuous analogue of `β₂ = 0.999`.
pub fn default_c2() -> f64 {
    -(0.999f64.ln())
}

/// Continuous rate matching a discrete momentum coefficient.
pub fn rate_from_beta(beta: f64) -> f64 {
    -beta.ln()
}

/// `c₁ / sqrt(c₂ (2c₁ − c₂))`, the uniform bound on `A(|g|, c₁) / sqrt(A(g², c₂))`.
pub fn adam_ratio_bound(c1: f64, c2: f64) -> f64 {
    c1 / (c2 * (2.0 * c1 - c2)).sqrt()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmaError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("bias correction is undefined at elapsed time 0")]
    UndefinedCorrection,
    #[error("sample has {actual} entries, state has {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    value: Vec<f64>,
    rate: f64,
    elapsed: f64,
}

impl EmaState {
    pub fn new(len: usize, rate: f64) -> Self {
        assert!(rate > 0.0, "EMA rate must be positive");
        Self { value: vec![0.0; len], rate, elapsed: 0.0 }
    }

    pub fn scalar(rate: f64) -> Self {
        Self::new(1, rate)
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// `m ← e^{−c dt} m + (1 − e^{−c dt}) g`.
    pub fn update(&mut self, g: &[f64], dt: f64) -> Result<(), EmaError> {
        self.update_with(g, dt, |v| v)
    }

    /// Update with `f(g_j)` as the input, e.g. `g²` for a second moment.
    pub fn update_with(&mut self, g: &[f64], dt: f64, f: impl Fn(f64) -> f64) -> Result<(), EmaError> {
        if !(dt > 0.0) {
            return Err(EmaError::NonPositiveStep(dt));
        }
        if g.len() != self.value.len() {
            return Err(EmaError::LengthMismatch { expected: self.value.len(), actual: g.len() });
        }
        let keep = (-self.rate * dt).exp();
        let gain = -(-self.rate * dt).exp_m1();
        for (m, &x) in self.value.iter_mut().zip(g) {
            *m = keep * *m + gain * f(x);
        }
        self.elapsed += dt;
        Ok(())
    }

    pub fn update_scalar(&mut self, g: f64, dt: f64) -> Result<(), EmaError> {
        self.update(&[g], dt)
    }

    /// `1 − e^{−c t}` for the current elapsed time.
    pub fn correction_factor(&self) -> Result<f64, EmaError> {
        if self.elapsed <= 0.0 {
            return Err(EmaError::UndefinedCorrection);
        }
        Ok(-(-self.rate * self.elapsed).exp_m1())
    }

    pub fn bias_correct(&self) -> Result<Vec<f64>, EmaError> {
        let c = self.correction_factor()?;
        Ok(self.value.iter().map(|v| v / c).collect())
    }
}

/// Outcome of [`ratio_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioProbe {
    pub ratio: f64,
    /// `c / (c − k)` when `k < c`; the ratio diverges otherwise.
    pub expected: Option<f64>,
    pub deviation: Option<f64>,
}

/// Runs `A(g, c)` to `horizon` and reports `A(g, c)(T) / g(T)`.
///
/// `g` is sampled at step midpoints, which makes the piecewise-constant
/// integration second-order accurate in `dt`.
pub fn ratio_probe(g: impl Fn(f64) -> f64, c: f64, k_expected: f64, horizon: f64, dt: f64) -> Result<RatioProbe, EmaError> {
    if !(dt > 0.0) {
        return Err(EmaError::NonPositiveStep(dt));
    }
    let steps = (horizon / dt).round() as usize;
    let mut ema = EmaState::scalar(c);
    for n in 0..steps {
        let t_mid = (n as f64 + 0.5) * dt;
        ema.update_scalar(g(t_mid), dt)?;
    }
    let ratio = ema.value()[0] / g(steps as f64 * dt);
    let expected = (k_expected < c).then(|| c / (c - k_expected));
    Ok(RatioProbe { ratio, expected, deviation: expected.map(|e| (ratio - e).abs()) })
}
