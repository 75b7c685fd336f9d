//! Property suites behind the `verify` command.
//!
//! Each suite is deterministic (fixed seeds) and returns a report whose
//! checks carry the worst observed error next to the allowed limit.

use std::fmt::Display;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::data::{synth_separable, Dataset};
use crate::ema::{self, EmaState};
use crate::linalg::{self, Matrix};
use crate::losses::LossSpec;
use crate::metrics;
use crate::models::ModelSpec;
use crate::norms::{GroupNorm, NormSpec};
use crate::params::{Layout, ParamVector, Shape};
use crate::runner::{self, ExperimentConfig};

pub const SUITES: [&str; 7] = ["linalg", "norms", "ema", "models", "metrics", "nsd-monotonicity", "adam-bounds"];

/// Config driving the `nsd-monotonicity` suite; also committed under `configs/`.
pub const NSD_MONOTONICITY_CONFIG: &str = include_str!("../../../configs/nsd_monotonicity.json");

/// Largest allowed fraction of soft-margin decreases per run.
pub const MONOTONICITY_BUDGET: f64 = 0.01;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unknown suite `{0}`; expected one of {list}", list = SUITES.join(", "))]
    UnknownSuite(String),
    #[error("suite aborted: {0}")]
    Aborted(String),
}

fn abort(e: impl Display) -> VerifyError {
    VerifyError::Aborted(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst error (or statistic) over all cases.
    pub observed: f64,
    pub limit: f64,
    pub cases: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    fn at_most(name: impl Into<String>, observed: f64, limit: f64, cases: usize) -> Self {
        Check { name: name.into(), passed: observed <= limit, observed, limit, cases, note: None }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub elapsed_secs: f64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn run_suite(name: &str) -> Result<SuiteReport, VerifyError> {
    let start = Instant::now();
    let checks = match name {
        "linalg" => linalg_suite()?,
        "norms" => norms_suite()?,
        "ema" => ema_suite()?,
        "models" => models_suite()?,
        "metrics" => metrics_suite()?,
        "nsd-monotonicity" => nsd_monotonicity_suite()?,
        "adam-bounds" => adam_bounds_suite()?,
        other => return Err(VerifyError::UnknownSuite(other.to_string())),
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        passed: checks.iter().all(|c| c.passed),
        elapsed_secs: start.elapsed().as_secs_f64(),
        checks,
    })
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

fn worst(acc: &mut f64, v: f64) {
    if v.is_nan() || v > *acc {
        *acc = if v.is_nan() { f64::INFINITY } else { v };
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: Option<usize>) -> Matrix {
    match rank {
        Some(k) => {
            let a = Matrix::from_vec(rows, k, gaussian(rng, rows * k)).expect("shape");
            let b = Matrix::from_vec(k, cols, gaussian(rng, k * cols)).expect("shape");
            a.matmul(&b).expect("shape")
        }
        None => Matrix::from_vec(rows, cols, gaussian(rng, rows * cols)).expect("shape"),
    }
}

fn linalg_suite() -> Result<Vec<Check>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut recon, mut inner, mut spec, mut iso, mut bounds) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let n = 500;
    for i in 0..n {
        let rows = rng.random_range(1..=32);
        let cols = rng.random_range(1..=32);
        let rank = (i % 5 == 4).then(|| rng.random_range(1..=rows.min(cols)));
        let m = random_matrix(&mut rng, rows, cols, rank);
        let svd = linalg::svd_reduced(&m).map_err(abort)?;
        let mut diff = svd.reconstruct();
        diff.as_mut_slice().iter_mut().zip(m.as_slice()).for_each(|(d, x)| *d -= x);
        worst(&mut recon, diff.frobenius_norm() / m.frobenius_norm());

        let q = linalg::orthogonalize(&m).map_err(abort)?;
        let nuc = linalg::nuclear_norm(&m).map_err(abort)?;
        worst(&mut inner, rel(q.inner(&m), nuc));
        worst(&mut spec, (linalg::spectral_norm(&q).map_err(abort)? - 1.0).abs());
        // Q is a partial isometry: Q Qᵀ Q = Q.
        let qqtq = q.matmul(&q.transpose()).and_then(|p| p.matmul(&q)).map_err(abort)?;
        let mut e = qqtq;
        e.as_mut_slice().iter_mut().zip(q.as_slice()).for_each(|(d, x)| *d -= x);
        worst(&mut iso, e.frobenius_norm() / (svd.rank() as f64).sqrt());
        // ‖M‖_F ≤ ‖M‖_* ≤ sqrt(rank) ‖M‖_F
        let f = m.frobenius_norm();
        let slack = (f - nuc).max(nuc - (svd.rank() as f64).sqrt() * f).max(0.0) / f;
        worst(&mut bounds, slack);
    }
    Ok(vec![
        Check::at_most("svd_reconstruction", recon, 1e-10, n),
        Check::at_most("orthogonalize_inner_equals_nuclear", inner, 1e-9, n),
        Check::at_most("orthogonalize_spectral_norm_one", spec, 1e-9, n),
        Check::at_most("orthogonalize_partial_isometry", iso, 1e-9, n),
        Check::at_most("nuclear_between_frobenius_bounds", bounds, 1e-12, n),
    ])
}

fn mixed_layout() -> Arc<Layout> {
    Arc::new(
        Layout::new([
            ("W1", Shape::Matrix { rows: 4, cols: 3 }),
            ("W2", Shape::Matrix { rows: 3, cols: 5 }),
            ("b", Shape::Vector { len: 6 }),
        ])
        .expect("valid layout"),
    )
}

fn composite_norm() -> NormSpec {
    NormSpec::MaxOfGroups(vec![
        GroupNorm { groups: vec!["W1".into(), "W2".into()], scale: 2.0, norm: NormSpec::SpectralPerMatrix },
        GroupNorm { groups: vec!["b".into()], scale: 1.0, norm: NormSpec::Linf },
    ])
}

fn norms_suite() -> Result<Vec<Check>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layout = mixed_layout();
    let mut checks = Vec::new();
    let n = 200;
    let variants = [
        (NormSpec::L1, 1e-9),
        (NormSpec::L2, 1e-9),
        (NormSpec::Linf, 1e-9),
        (NormSpec::SpectralPerMatrix, 1e-6),
        (composite_norm(), 1e-6),
    ];
    for (norm, tol) in &variants {
        let (mut ident, mut unit, mut holder) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let g = ParamVector::from_vec(layout.clone(), gaussian(&mut rng, layout.len())).map_err(abort)?;
            let theta = ParamVector::from_vec(layout.clone(), gaussian(&mut rng, layout.len())).map_err(abort)?;
            let dual = norm.dual_norm(&g).map_err(abort)?;
            let u = norm.steepest_direction(&g).map_err(abort)?;
            worst(&mut ident, rel(u.dot(&g), -dual));
            worst(&mut unit, (norm.norm(&u).map_err(abort)? - 1.0).abs());
            let bound = norm.norm(&theta).map_err(abort)? * dual;
            worst(&mut holder, ((theta.dot(&g) - bound) / bound).max(0.0));
        }
        let label = norm.label();
        checks.push(Check::at_most(format!("{label}_direction_attains_dual"), ident, *tol, n));
        checks.push(Check::at_most(format!("{label}_direction_unit_norm"), unit, *tol, n));
        checks.push(Check::at_most(format!("{label}_holder_inequality"), holder, 1e-12, n));
    }

    // Brute force over the vertices of the unit ball.
    let (mut linf_err, mut l1_err) = (0.0, 0.0);
    for _ in 0..n {
        let p = rng.random_range(1..=12usize);
        let g = ParamVector::flat(gaussian(&mut rng, p));
        let gs = g.as_slice();
        let cube = (0..1u32 << p)
            .map(|mask| (0..p).map(|j| if mask >> j & 1 == 1 { gs[j] } else { -gs[j] }).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let u = NormSpec::Linf.steepest_direction(&g).map_err(abort)?;
        worst(&mut linf_err, rel(NormSpec::Linf.dual_norm(&g).map_err(abort)?, -cube).max(rel(u.dot(&g), cube)));
        let cross = gs.iter().flat_map(|&x| [x, -x]).fold(f64::INFINITY, f64::min);
        let u = NormSpec::L1.steepest_direction(&g).map_err(abort)?;
        worst(&mut l1_err, rel(NormSpec::L1.dual_norm(&g).map_err(abort)?, -cross).max(rel(u.dot(&g), cross)));
    }
    checks.push(Check::at_most("linf_vertex_oracle", linf_err, 1e-9, n));
    checks.push(Check::at_most("l1_vertex_oracle", l1_err, 1e-9, n));
    Ok(checks)
}

fn ema_suite() -> Result<Vec<Check>, VerifyError> {
    let mut checks = Vec::new();
    for (c, k) in [(1.0, 0.5), (1.0, 0.9), (2.0, 1.0)] {
        let probe = ema::ratio_probe(|t| (-k * t).exp(), c, k, 50.0, 1e-3).map_err(abort)?;
        let deviation = probe.deviation.unwrap_or(f64::INFINITY);
        checks.push(
            Check::at_most(format!("ratio_probe_c{c}_k{k}"), deviation, 1e-3, 1)
                .note(format!("ratio {:.6}, target {:.6}", probe.ratio, probe.expected.unwrap_or(f64::NAN))),
        );
    }

    // Piecewise-constant inputs are integrated exactly, so the step size cannot matter.
    let mut coarse = EmaState::scalar(0.7);
    let mut fine = EmaState::scalar(0.7);
    let mut exact_err: f64 = 0.0;
    for n in 0..40 {
        let g = (n as f64 * 0.37).sin() + 1.5;
        coarse.update_scalar(g, 1.0).map_err(abort)?;
        for _ in 0..8 {
            fine.update_scalar(g, 0.125).map_err(abort)?;
        }
        exact_err = exact_err.max(rel(coarse.value()[0], fine.value()[0]));
    }
    checks.push(Check::at_most("step_size_invariance", exact_err, 1e-12, 40));

    let mut constant = EmaState::new(3, 0.05);
    let target = [2.0, -1.0, 0.25];
    let mut corr_err: f64 = 0.0;
    for _ in 0..100 {
        constant.update(&target, 0.3).map_err(abort)?;
        let fixed = constant.bias_correct().map_err(abort)?;
        corr_err = fixed.iter().zip(&target).map(|(a, b)| rel(*a, *b)).fold(corr_err, f64::max);
    }
    checks.push(Check::at_most("bias_correction_recovers_constant", corr_err, 1e-12, 100));
    Ok(checks)
}

fn models_suite() -> Result<Vec<Check>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models = [
        ("linear", ModelSpec::Linear { dim: 6 }),
        ("two_layer_q1", ModelSpec::TwoLayer { dim: 5, hidden: 4, power: 1.0, output_as_row_matrix: false }),
        ("two_layer_q2", ModelSpec::TwoLayer { dim: 5, hidden: 4, power: 2.0, output_as_row_matrix: false }),
        ("two_layer_q3", ModelSpec::TwoLayer { dim: 5, hidden: 4, power: 3.0, output_as_row_matrix: true }),
    ];
    let n = 100;
    let mut checks = Vec::new();
    for (name, model) in &models {
        let layout = model.layout().map_err(abort)?;
        let degree = model.degree();
        let (mut homog, mut euler, mut fd) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let theta = ParamVector::from_vec(layout.clone(), gaussian(&mut rng, layout.len())).map_err(abort)?;
            let x = gaussian(&mut rng, model.input_dim());
            let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
            let f = model.forward(&theta, &x).map_err(abort)?;
            let f_scaled = model.forward(&theta.scaled(alpha), &x).map_err(abort)?;
            worst(&mut homog, rel(f_scaled, alpha.powf(degree) * f));
            let grad = model.grad(&theta, &x).map_err(abort)?;
            worst(&mut euler, rel(theta.dot(&grad), degree * f));
            if model.is_smooth() {
                let mut err: f64 = 0.0;
                let scale = grad.as_slice().iter().fold(0.0f64, |a, g| a.max(g.abs()));
                for j in 0..theta.len() {
                    let h = 1e-5 * theta.as_slice()[j].abs().max(1.0);
                    let mut plus = theta.clone();
                    plus.as_mut_slice()[j] += h;
                    let mut minus = theta.clone();
                    minus.as_mut_slice()[j] -= h;
                    let numeric = (model.forward(&plus, &x).map_err(abort)? - model.forward(&minus, &x).map_err(abort)?) / (2.0 * h);
                    err = err.max((numeric - grad.as_slice()[j]).abs());
                }
                if scale > 0.0 {
                    worst(&mut fd, err / scale);
                }
            }
        }
        checks.push(Check::at_most(format!("{name}_homogeneity"), homog, 1e-8, n));
        checks.push(Check::at_most(format!("{name}_euler_identity"), euler, 1e-8, n));
        if model.is_smooth() {
            checks.push(Check::at_most(format!("{name}_finite_difference_gradient"), fd, 1e-5, n));
        }
    }
    Ok(checks)
}

fn metrics_suite() -> Result<Vec<Check>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checks = Vec::new();
    let data = synth_separable(24, 5, 0.1, 9).map_err(abort)?;
    let model = ModelSpec::TwoLayer { dim: 5, hidden: 3, power: 2.0, output_as_row_matrix: false };
    let layout = model.layout().map_err(abort)?;
    let norms = [NormSpec::L2, NormSpec::Linf, NormSpec::SpectralPerMatrix];
    let n = 50;
    let (mut invariance, mut soft_above, mut gap_excess) = (0.0, 0.0, 0.0);
    let mut soft_cases = 0;
    for _ in 0..n {
        let theta = ParamVector::from_vec(layout.clone(), gaussian(&mut rng, layout.len())).map_err(abort)?;
        let alpha = 10f64.powf(rng.random_range(0.0..1.5));
        for norm in &norms {
            let a = metrics::margins(&model, LossSpec::Exponential, norm, &theta, &data).map_err(abort)?;
            let b = metrics::margins(&model, LossSpec::Exponential, norm, &theta.scaled(alpha), &data).map_err(abort)?;
            worst(&mut invariance, rel(a.hard_margin, b.hard_margin));
            if let Some(s) = b.soft_margin {
                soft_cases += 1;
                worst(&mut soft_above, ((s - b.hard_margin) / b.hard_margin.abs()).max(0.0));
                // Exponential loss: q_min − log m ≤ log(1/L) ≤ q_min.
                let scale = b.norm_value.powf(model.degree());
                let excess = (b.hard_margin - s) - (data.len() as f64).ln() / scale;
                worst(&mut gap_excess, (excess * scale).max(0.0));
            }
        }
    }
    checks.push(Check::at_most("hard_margin_scale_invariance", invariance, 1e-9, n * norms.len()));
    checks.push(Check::at_most("soft_margin_below_hard_margin", soft_above, 1e-12, soft_cases));
    checks.push(Check::at_most("soft_margin_gap_at_most_log_m", gap_excess, 1e-9, soft_cases));

    // Symmetric two-point problem whose max-margin direction is e₁ for ℓ2 and ℓ∞.
    let pair = Dataset::new(vec![1.0, 0.5, -1.0, 0.5], vec![1.0, -1.0], 2, "pair", 0).map_err(abort)?;
    let linear = ModelSpec::Linear { dim: 2 };
    let theta = ParamVector::from_vec(linear.layout().map_err(abort)?, vec![4.0, 0.0]).map_err(abort)?;
    let mut kkt = 0.0;
    for norm in [NormSpec::L2, NormSpec::Linf] {
        let r = metrics::kkt_residuals(&linear, LossSpec::Exponential, &norm, &theta, &pair).map_err(abort)?;
        worst(&mut kkt, r.epsilon.unwrap_or(f64::INFINITY).max(r.delta.abs()).max(r.alignment_gap.abs()));
    }
    checks.push(Check::at_most("kkt_vanishes_at_max_margin_point", kkt, 1e-12, 2));

    // Projection onto the simplex: w = max(v − τ, 0) for a single threshold τ.
    let mut proj: f64 = 0.0;
    for _ in 0..200 {
        let p = rng.random_range(1..=8usize);
        let v = gaussian(&mut rng, p);
        let w = metrics::project_simplex(&v);
        let tau = v.iter().zip(&w).filter(|(_, &wi)| wi > 0.0).map(|(vi, wi)| vi - wi).next().unwrap_or(f64::NAN);
        let mut err = (w.iter().sum::<f64>() - 1.0).abs();
        for (vi, wi) in v.iter().zip(&w) {
            err = err.max((wi - (vi - tau).max(0.0)).abs());
        }
        worst(&mut proj, err);
    }
    checks.push(Check::at_most("simplex_projection_threshold_form", proj, 1e-12, 200));

    // θ = −(steepest direction of g) is perfectly aligned with −g.
    let mixed = mixed_layout();
    let mut align = 0.0;
    for norm in [NormSpec::L2, NormSpec::Linf, NormSpec::SpectralPerMatrix, composite_norm()] {
        for _ in 0..20 {
            let g = ParamVector::from_vec(mixed.clone(), gaussian(&mut rng, mixed.len())).map_err(abort)?;
            let theta = norm.steepest_direction(&g).map_err(abort)?.scaled(3.0);
            let r = metrics::alignment(&norm, &theta, &g, &theta, 1.0, 1.0, 1.0).map_err(abort)?;
            worst(&mut align, (1.0 - r.parameter_alignment).abs());
        }
    }
    checks.push(Check::at_most("steepest_direction_alignment", align, 1e-6, 80));
    Ok(checks)
}

fn nsd_monotonicity_suite() -> Result<Vec<Check>, VerifyError> {
    let config = ExperimentConfig::from_json_str(NSD_MONOTONICITY_CONFIG).map_err(abort)?;
    let loss_zero = config.loss.loss(0.0);
    let mut checks = Vec::new();
    for plan in runner::plans(&config).map_err(abort)? {
        let result = runner::execute_plan(&config, &plan).map_err(abort)?;
        let (violations, compared) = result.soft_margin_violations(loss_zero);
        let fraction = if compared == 0 { f64::INFINITY } else { violations as f64 / compared as f64 };
        checks.push(
            Check::at_most(format!("{}_soft_margin_decrease_fraction", plan.file_stem()), fraction, MONOTONICITY_BUDGET, compared)
                .note(format!("{violations} of {compared} steps, final loss {:.3e}", result.final_loss)),
        );
    }
    Ok(checks)
}

fn adam_bounds_suite() -> Result<Vec<Check>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 60;
    let p = 8;
    let mut excess: f64 = f64::NEG_INFINITY;
    let mut steps_total = 0;
    for trial in 0..trials {
        let (c1, c2) = if trial % 3 == 0 {
            (ema::default_c1(), ema::default_c2())
        } else {
            let c1 = 10f64.powf(rng.random_range(-3.0..0.5));
            (c1, c1 * rng.random_range(0.01..=1.0))
        };
        let dt = [1.0, 0.25, 3.0][trial % 3];
        let bound = ema::adam_ratio_bound(c1, c2);
        let mut m = EmaState::new(p, c1);
        let mut v = EmaState::new(p, c2);
        let sparsity: f64 = rng.random_range(0.0..0.9);
        for _ in 0..400 {
            let g: Vec<f64> = (0..p)
                .map(|_| {
                    if rng.random::<f64>() < sparsity {
                        0.0
                    } else {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * 10f64.powf(rng.random_range(-3.0..3.0))
                    }
                })
                .collect();
            m.update(&g, dt).map_err(abort)?;
            v.update_with(&g, dt, |x| x * x).map_err(abort)?;
            for (mj, vj) in m.value().iter().zip(v.value()) {
                if *vj > 0.0 {
                    excess = excess.max(mj.abs() / vj.sqrt() - bound);
                }
            }
            steps_total += 1;
        }
    }
    Ok(vec![Check::at_most("momentum_ratio_bound", excess.max(0.0), 1e-9, steps_total)
        .note(format!("largest |m|/sqrt(v) − bound observed: {excess:.3e}"))])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(run_suite("bogus"), Err(VerifyError::UnknownSuite(_))));
    }

    #[test]
    fn rel_handles_zero() {
        assert_eq!(rel(0.0, 0.0), 0.0);
        assert_eq!(rel(1.0, 0.0), 1.0);
    }
}
