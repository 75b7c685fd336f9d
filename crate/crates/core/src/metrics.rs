//! Margins, alignment, approximate-KKT residuals, and Adam probes.

use thiserror::Error;

use crate::data::Dataset;
use crate::losses::{LossError, LossSpec};
use crate::models::{evaluate, Evaluation, ModelError, ModelSpec};
use crate::norms::{NormError, NormSpec};
use crate::params::ParamVector;

/// Relative tolerance for membership in the ℓ∞ active set.
pub const ACTIVE_SET_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("minimum margin {0} is not positive; no rescaling makes the point feasible")]
    Infeasible(f64),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub q_min: f64,
    /// `q_min / ‖θ‖^L`.
    pub hard_margin: f64,
    /// `φ⁻¹(log 1/L) / ‖θ‖^L`, defined once `log 1/L > φ(0)`.
    pub soft_margin: Option<f64>,
    pub norm_value: f64,
    pub margins: Vec<f64>,
}

/// Margin report from margins already computed, e.g. by [`evaluate`].
pub fn margin_report(loss: LossSpec, norm: &NormSpec, theta: &ParamVector, degree: f64, margins: Vec<f64>) -> Result<MarginReport, MetricsError> {
    let norm_value = norm.norm(theta)?;
    if norm_value == 0.0 {
        return Err(MetricsError::Degenerate("margins of θ = 0".into()));
    }
    let scale = norm_value.powf(degree);
    let q_min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let log_inv_loss = -loss.log_total_loss(&margins);
    let soft_margin = if log_inv_loss > loss.phi(0.0) {
        Some(loss.phi_inv(log_inv_loss)? / scale)
    } else {
        None
    };
    Ok(MarginReport { q_min, hard_margin: q_min / scale, soft_margin, norm_value, margins })
}

pub fn margins(model: &ModelSpec, loss: LossSpec, norm: &NormSpec, theta: &ParamVector, data: &Dataset) -> Result<MarginReport, MetricsError> {
    let z = model.margins(theta, data)?;
    margin_report(loss, norm, theta, model.degree(), z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    /// `⟨Δθ / (dt·ν), −g/‖g‖_⋆⟩`.
    pub r: f64,
    pub nu_used: f64,
    /// `⟨θ/‖θ‖, −g/‖g‖_⋆⟩`.
    pub parameter_alignment: f64,
    /// `‖θ‖ / ∫η`; `None` before any step.
    pub ratio_norm_over_int_eta: Option<f64>,
}

pub fn alignment(norm: &NormSpec, theta: &ParamVector, g: &ParamVector, delta: &ParamVector, dt: f64, nu: f64, int_eta: f64) -> Result<AlignmentReport, MetricsError> {
    if !(nu > 0.0) || !(dt > 0.0) {
        return Err(MetricsError::Degenerate(format!("alignment needs ν > 0 and dt > 0, got ν={nu}, dt={dt}")));
    }
    let dual = norm.dual_norm(g)?;
    let theta_norm = norm.norm(theta)?;
    if dual == 0.0 || theta_norm == 0.0 {
        return Err(MetricsError::Degenerate("alignment with a zero gradient or zero parameters".into()));
    }
    let r = -delta.dot(g) / (dt * nu * dual);
    let parameter_alignment = -theta.dot(g) / (theta_norm * dual);
    let ratio_norm_over_int_eta = (int_eta > 0.0).then(|| theta_norm / int_eta);
    Ok(AlignmentReport { r, nu_used: nu, parameter_alignment, ratio_norm_over_int_eta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KKTReport {
    /// Stationarity residual; `None` where the subdifferential is not implemented.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    /// `1 − ⟨θ/‖θ‖, −g/‖g‖_⋆⟩`.
    pub alignment_gap: f64,
    pub q_min: f64,
    /// `‖θ̂‖` with `θ̂ = θ / q_min^{1/L}`.
    pub scaled_norm: f64,
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Euclidean distance from `u` to `∂‖θ‖` for ℓ2, ℓ∞ and ℓ1; `None` otherwise.
pub fn distance_to_subdifferential(norm: &NormSpec, theta: &[f64], u: &[f64]) -> Option<f64> {
    match norm {
        NormSpec::L2 => {
            let n = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            Some(theta.iter().zip(u).map(|(t, v)| (v - t / n).powi(2)).sum::<f64>().sqrt())
        }
        NormSpec::Linf => {
            let max = theta.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let threshold = (1.0 - ACTIVE_SET_TOLERANCE) * max;
            let mut inactive = 0.0;
            let mut signed = Vec::new();
            for (&t, &v) in theta.iter().zip(u) {
                if t.abs() >= threshold {
                    signed.push(t.signum() * v);
                } else {
                    inactive += v * v;
                }
            }
            let proj = project_simplex(&signed);
            let on_active: f64 = signed.iter().zip(&proj).map(|(s, p)| (s - p).powi(2)).sum();
            Some((inactive + on_active).sqrt())
        }
        NormSpec::L1 => Some(
            theta
                .iter()
                .zip(u)
                .map(|(&t, &v)| if t != 0.0 { (v - t.signum()).powi(2) } else { (v.abs() - 1.0).max(0.0).powi(2) })
                .sum::<f64>()
                .sqrt(),
        ),
        NormSpec::SpectralPerMatrix | NormSpec::MaxOfGroups(_) => None,
    }
}

/// Approximate-KKT residuals at `θ` from a precomputed evaluation.
///
/// With `θ̂ = θ / q_min^{1/L}` and `λ_i = ‖θ̂‖ q_min^{1−1/L} ℓ(z_i) φ'(z_i) / ‖g‖_⋆`,
/// the stationarity combination `Σ λ_i y_i ∇f(x_i; θ̂)` equals `−‖θ̂‖ g / ‖g‖_⋆`.
pub fn kkt_from_evaluation(loss: LossSpec, norm: &NormSpec, degree: f64, theta: &ParamVector, eval: &Evaluation) -> Result<KKTReport, MetricsError> {
    let q_min = eval.margins.iter().copied().fold(f64::INFINITY, f64::min);
    if !(q_min > 0.0) {
        return Err(MetricsError::Infeasible(q_min));
    }
    let dual = norm.dual_norm(&eval.grad)?;
    if dual == 0.0 {
        return Err(MetricsError::Degenerate("zero gradient".into()));
    }
    let theta_norm = norm.norm(theta)?;
    let scaled_norm = theta_norm / q_min.powf(1.0 / degree);
    let coef = scaled_norm * q_min.powf(1.0 - 1.0 / degree) / dual;
    let lambdas: Vec<f64> = eval.margins.iter().map(|&z| coef * loss.loss(z) * loss.phi_prime(z)).collect();
    let delta = lambdas.iter().zip(&eval.margins).map(|(l, &z)| l * (z / q_min - 1.0)).sum();
    let u: Vec<f64> = eval.grad.as_slice().iter().map(|g| -g / dual).collect();
    let epsilon = distance_to_subdifferential(norm, theta.as_slice(), &u).map(|d| scaled_norm * d);
    let parameter_alignment = -theta.dot(&eval.grad) / (theta_norm * dual);
    Ok(KKTReport { epsilon, delta, lambdas, alignment_gap: 1.0 - parameter_alignment, q_min, scaled_norm })
}

pub fn kkt_residuals(model: &ModelSpec, loss: LossSpec, norm: &NormSpec, theta: &ParamVector, data: &Dataset) -> Result<KKTReport, MetricsError> {
    let eval = evaluate(model, loss, theta, data)?;
    kkt_from_evaluation(loss, norm, model.degree(), theta, &eval)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignAgreement {
    /// `J = {j : |g_j| / ‖g‖₁ > ε_J}`.
    pub active: Vec<usize>,
    /// Mean over `J` of `|m̂_j / sqrt(v̂_j) − sign(g_j)|`.
    pub statistic: f64,
}

/// `None` when `J` is empty or `v̂` vanishes on it.
pub fn adam_sign_agreement(m_hat: &[f64], v_hat: &[f64], g: &[f64], eps_j: f64) -> Option<SignAgreement> {
    let l1: f64 = g.iter().map(|x| x.abs()).sum();
    if l1 == 0.0 {
        return None;
    }
    let active: Vec<usize> = (0..g.len()).filter(|&j| g[j].abs() / l1 > eps_j).collect();
    if active.is_empty() || active.iter().any(|&j| !(v_hat[j] > 0.0)) {
        return None;
    }
    let statistic = active.iter().map(|&j| (m_hat[j] / v_hat[j].sqrt() - g[j].signum()).abs()).sum::<f64>() / active.len() as f64;
    Some(SignAgreement { active, statistic })
}

/// `max_j |θ_t[j] − θ_0[j]| / ∫₀^t η`, the per-coordinate path ratio at one time.
pub fn path_ratio(theta: &[f64], theta0: &[f64], int_eta: f64) -> Option<f64> {
    (int_eta > 0.0).then(|| theta.iter().zip(theta0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / int_eta)
}

/// Running maximum of [`path_ratio`] over a trace, skipping the first `burn_in` points.
pub fn adam_path_bound(trace: &[Vec<f64>], int_eta: &[f64], theta0: &[f64], burn_in: usize) -> Option<f64> {
    trace
        .iter()
        .zip(int_eta)
        .skip(burn_in)
        .filter_map(|(th, &n)| path_ratio(th, theta0, n))
        .reduce(f64::max)
}
