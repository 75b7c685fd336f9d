//! The step loop and its per-step and periodic diagnostics.

use serde::Serialize;

use super::config::{ExperimentConfig, MarginNorm};
use super::RunError;
use crate::data::Dataset;
use crate::metrics::{self, MarginReport};
use crate::models::{evaluate, Evaluation};
use crate::norms::NormSpec;
use crate::optim::{OptimizerSpec, OptimizerState, Schedule};
use crate::params::ParamVector;

/// Name of the trajectory-norm columns.
pub const TRAJECTORY: &str = "traj";
/// Threshold `ε_J` of the Adam sign-agreement set.
pub const SIGN_SET_THRESHOLD: f64 = 0.1;
/// Relative slack for counting a soft-margin decrease.
pub const SOFT_MARGIN_SLACK: f64 = 1e-6;

/// One (variant, seed) cell of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RunPlan {
    pub experiment: String,
    pub variant: String,
    pub optimizer: OptimizerSpec,
    pub schedule: Schedule,
    pub seed: u64,
}

impl RunPlan {
    pub fn file_stem(&self) -> String {
        format!("{}_{}_seed{}", self.experiment, self.variant, self.seed)
    }
}

/// Cheap per-step statistics kept for every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: u64,
    pub loss: f64,
    /// Soft margin under the trajectory norm.
    pub soft_margin: Option<f64>,
    pub parameter_alignment: Option<f64>,
    /// Alignment of the step that produced this point, with `ν = η(t)`.
    pub r: Option<f64>,
    pub adam_sign_stat: Option<f64>,
    pub adam_path_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormColumns {
    pub norm_value: f64,
    pub hard_margin: f64,
    pub soft_margin: Option<f64>,
}

impl From<&MarginReport> for NormColumns {
    fn from(r: &MarginReport) -> Self {
        NormColumns { norm_value: r.norm_value, hard_margin: r.hard_margin, soft_margin: r.soft_margin }
    }
}

/// One logged time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub step: u64,
    pub t: f64,
    pub loss: f64,
    pub log_loss: f64,
    pub eta: f64,
    pub int_eta: f64,
    pub norms: Vec<NormColumns>,
    pub alignment_r: Option<f64>,
    /// `r` with `ν = ‖Δθ‖ / dt`.
    pub alignment_r_step_nu: Option<f64>,
    pub parameter_alignment: Option<f64>,
    pub ratio_norm_over_int_eta: Option<f64>,
    pub kkt_epsilon: Option<f64>,
    pub kkt_delta: Option<f64>,
    pub kkt_alignment_gap: Option<f64>,
    pub adam_sign_stat: Option<f64>,
    pub adam_path_ratio: Option<f64>,
    pub relu_sign_flips: Option<u64>,
    pub held_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktCheckpoint {
    pub level: f64,
    pub step: u64,
    pub loss: f64,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub alignment_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossTarget,
    MaxSteps,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub plan: RunPlan,
    pub norm_names: Vec<String>,
    pub rows: Vec<DiagnosticsRow>,
    pub trace: Vec<StepTrace>,
    pub checkpoints: Vec<KktCheckpoint>,
    pub stop: StopReason,
    pub steps: u64,
    pub final_loss: f64,
    pub final_margins: Vec<NormColumns>,
    pub warnings: Vec<String>,
    pub theta: ParamVector,
}

/// The norms reported for a run: the configured ones plus the trajectory norm.
pub fn reported_norms(config: &ExperimentConfig, optimizer: &OptimizerSpec) -> Vec<(String, NormSpec)> {
    let mut out: Vec<(String, NormSpec)> = config.margin_norms.iter().map(|n| (n.name(), n.norm().clone())).collect();
    out.push((TRAJECTORY.to_string(), optimizer.trajectory_norm()));
    out
}

fn last_fraction<T>(items: &[T], fraction: f64) -> &[T] {
    let n = items.len();
    let keep = ((n as f64) * fraction).ceil() as usize;
    &items[n - keep.min(n)..]
}

impl RunResult {
    /// Smallest parameter alignment over the final `fraction` of steps.
    pub fn tail_alignment_min(&self, fraction: f64) -> Option<f64> {
        last_fraction(&self.trace, fraction).iter().filter_map(|s| s.parameter_alignment).reduce(f64::min)
    }

    pub fn tail_adam_sign_mean(&self, fraction: f64) -> Option<f64> {
        let v: Vec<f64> = last_fraction(&self.trace, fraction).iter().filter_map(|s| s.adam_sign_stat).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn tail_adam_path_max(&self, fraction: f64) -> Option<f64> {
        last_fraction(&self.trace, fraction).iter().filter_map(|s| s.adam_path_ratio).reduce(f64::max)
    }

    /// `(violations, compared steps)` for decreases of the trajectory soft margin
    /// beyond `1e-6 (1 + |γ̃|)`, counted from the first step with loss below `loss_zero`.
    pub fn soft_margin_violations(&self, loss_zero: f64) -> (usize, usize) {
        let Some(start) = self.trace.iter().position(|s| s.loss < loss_zero) else {
            return (0, 0);
        };
        let mut violations = 0;
        let mut compared = 0;
        for w in self.trace[start..].windows(2) {
            if let (Some(a), Some(b)) = (w[0].soft_margin, w[1].soft_margin) {
                compared += 1;
                if b < a - SOFT_MARGIN_SLACK * (1.0 + a.abs()) {
                    violations += 1;
                }
            }
        }
        (violations, compared)
    }

    pub fn checkpoint(&self, level: f64) -> Option<&KktCheckpoint> {
        self.checkpoints.iter().find(|c| c.level == level)
    }
}

struct Diagnostics<'a> {
    config: &'a ExperimentConfig,
    data: &'a Dataset,
    norms: Vec<(String, NormSpec)>,
    traj: NormSpec,
    degree: f64,
}

impl Diagnostics<'_> {
    fn margin(&self, norm: &NormSpec, theta: &ParamVector, eval: &Evaluation) -> Option<MarginReport> {
        metrics::margin_report(self.config.loss, norm, theta, self.degree, eval.margins.clone()).ok()
    }

    fn row(&self, state: &OptimizerState, eval: &Evaluation, schedule: &Schedule, last: Option<&StepTrace>, r_step_nu: Option<f64>, flips: Option<u64>, held: u64) -> DiagnosticsRow {
        let theta = &state.theta;
        let norms = self
            .norms
            .iter()
            .map(|(_, n)| {
                self.margin(n, theta, eval)
                    .map(|r| NormColumns::from(&r))
                    .unwrap_or(NormColumns { norm_value: f64::NAN, hard_margin: f64::NAN, soft_margin: None })
            })
            .collect();
        let kkt = metrics::kkt_from_evaluation(self.config.loss, &self.traj, self.degree, theta, eval).ok();
        let ratio = metrics::alignment(&self.traj, theta, &eval.grad, theta, 1.0, 1.0, state.int_eta()).ok();
        DiagnosticsRow {
            step: state.step_index(),
            t: state.t(),
            loss: eval.loss,
            log_loss: eval.log_loss,
            eta: schedule.eta(state.t()),
            int_eta: state.int_eta(),
            norms,
            alignment_r: last.and_then(|s| s.r),
            alignment_r_step_nu: r_step_nu,
            parameter_alignment: ratio.map(|a| a.parameter_alignment),
            ratio_norm_over_int_eta: ratio.and_then(|a| a.ratio_norm_over_int_eta),
            kkt_epsilon: kkt.as_ref().and_then(|k| k.epsilon),
            kkt_delta: kkt.as_ref().map(|k| k.delta),
            kkt_alignment_gap: kkt.as_ref().map(|k| k.alignment_gap),
            adam_sign_stat: last.and_then(|s| s.adam_sign_stat),
            adam_path_ratio: last.and_then(|s| s.adam_path_ratio),
            relu_sign_flips: flips,
            held_steps: held,
        }
    }
}

fn count_flips(prev: &[i8], now: &[i8]) -> u64 {
    prev.iter().zip(now).filter(|(a, b)| a != b).count() as u64
}

/// Runs one plan to completion. Never touches the filesystem.
pub fn execute(config: &ExperimentConfig, plan: &RunPlan, data: &Dataset) -> Result<RunResult, RunError> {
    let model = &config.model;
    if model.input_dim() != data.dim() {
        return Err(RunError::Config(format!("model expects inputs of dimension {}, dataset has {}", model.input_dim(), data.dim())));
    }
    let theta0 = model.init_kaiming_times_alpha(config.init_scale, plan.seed)?;
    let mut state = OptimizerState::new(&plan.optimizer, theta0.clone())?;
    let diag = Diagnostics {
        config,
        data,
        norms: reported_norms(config, &plan.optimizer),
        traj: plan.optimizer.trajectory_norm(),
        degree: model.degree(),
    };
    let loss_zero = config.loss.loss(0.0);
    let dt = config.dt;
    let schedule = &plan.schedule;

    let mut eval = evaluate(model, config.loss, &state.theta, diag.data)?;
    let mut signs = model.preactivation_signs(&state.theta, data);
    let flips_supported = !signs.is_empty();
    let mut rows = vec![diag.row(&state, &eval, schedule, None, None, flips_supported.then_some(0), 0)];
    let mut trace = vec![StepTrace {
        step: 0,
        loss: eval.loss,
        soft_margin: diag.margin(&diag.traj, &state.theta, &eval).and_then(|r| r.soft_margin),
        parameter_alignment: metrics::alignment(&diag.traj, &state.theta, &eval.grad, &state.theta, 1.0, 1.0, 0.0).ok().map(|a| a.parameter_alignment),
        r: None,
        adam_sign_stat: None,
        adam_path_ratio: None,
    }];
    let mut checkpoints: Vec<KktCheckpoint> = Vec::new();
    let mut warnings = Vec::new();
    let mut held = 0u64;
    let mut stalled = 0u64;
    let mut warned = false;
    let mut last_r_step_nu = None;

    let record_checkpoints = |checkpoints: &mut Vec<KktCheckpoint>, state: &OptimizerState, eval: &Evaluation| {
        for &level in &config.kkt_checkpoints {
            if eval.loss <= level && !checkpoints.iter().any(|c| c.level == level) {
                if let Ok(k) = metrics::kkt_from_evaluation(config.loss, &diag.traj, diag.degree, &state.theta, eval) {
                    checkpoints.push(KktCheckpoint { level, step: state.step_index(), loss: eval.loss, epsilon: k.epsilon, delta: k.delta, alignment_gap: k.alignment_gap });
                }
            }
        }
    };
    record_checkpoints(&mut checkpoints, &state, &eval);

    let stop = loop {
        if !eval.loss.is_finite() {
            break StopReason::NonFinite;
        }
        if eval.loss <= config.stop.loss_target {
            break StopReason::LossTarget;
        }
        if state.step_index() >= config.stop.max_steps {
            break StopReason::MaxSteps;
        }
        let before = state.clone();
        let report = match state.step(&eval.grad, schedule, dt) {
            Ok(r) => r,
            Err(crate::optim::OptimError::NonFinite(what)) => {
                warnings.push(format!("non-finite {what} at step {}", before.step_index()));
                state = before;
                break StopReason::NonFinite;
            }
            Err(e) => return Err(e.into()),
        };
        let next = evaluate(model, config.loss, &state.theta, data)?;
        if !next.loss.is_finite() || !state.theta.is_finite() {
            warnings.push(format!("non-finite loss at step {}", state.step_index()));
            state = before;
            break StopReason::NonFinite;
        }
        held += u64::from(report.held);

        let dual = diag.traj.dual_norm(&eval.grad).unwrap_or(0.0);
        let (r, r_step_nu) = if dual > 0.0 {
            let inner = -report.delta.dot(&eval.grad) / dual;
            let step_norm = diag.traj.norm(&report.delta).unwrap_or(0.0);
            (Some(inner / (dt * report.eta)), (step_norm > 0.0).then(|| inner / step_norm))
        } else {
            (None, None)
        };
        last_r_step_nu = r_step_nu;
        let (adam_sign_stat, adam_path_ratio) = match state.adam_moments()? {
            Some(am) => {
                let g: Vec<f64> = am.indices.iter().map(|&i| eval.grad.as_slice()[i]).collect();
                let sign = metrics::adam_sign_agreement(&am.m_hat, &am.v_hat, &g, SIGN_SET_THRESHOLD).map(|s| s.statistic);
                let now: Vec<f64> = am.indices.iter().map(|&i| state.theta.as_slice()[i]).collect();
                let start: Vec<f64> = am.indices.iter().map(|&i| theta0.as_slice()[i]).collect();
                (sign, metrics::path_ratio(&now, &start, am.scale * state.int_eta()))
            }
            None => (None, None),
        };
        if next.loss < loss_zero && next.loss >= eval.loss {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if !warned && stalled >= 10 * config.log_every {
            let msg = format!("loss has not decreased for {stalled} consecutive steps at step {}", state.step_index());
            log::warn!("{}: {msg}", plan.file_stem());
            warnings.push(msg);
            warned = true;
        }
        eval = next;
        trace.push(StepTrace {
            step: state.step_index(),
            loss: eval.loss,
            soft_margin: diag.margin(&diag.traj, &state.theta, &eval).and_then(|m| m.soft_margin),
            parameter_alignment: metrics::alignment(&diag.traj, &state.theta, &eval.grad, &state.theta, 1.0, 1.0, 0.0).ok().map(|a| a.parameter_alignment),
            r,
            adam_sign_stat,
            adam_path_ratio,
        });
        record_checkpoints(&mut checkpoints, &state, &eval);
        if state.step_index() % config.log_every == 0 {
            let flips = flips_supported.then(|| {
                let now = model.preactivation_signs(&state.theta, data);
                let f = count_flips(&signs, &now);
                signs = now;
                f
            });
            rows.push(diag.row(&state, &eval, schedule, trace.last(), r_step_nu, flips, held));
        }
    };
    if rows.last().map(|r| r.step) != Some(state.step_index()) {
        let flips = flips_supported.then(|| count_flips(&signs, &model.preactivation_signs(&state.theta, data)));
        let trace_last = trace.iter().rev().find(|s| s.step == state.step_index());
        rows.push(diag.row(&state, &eval, schedule, trace_last, last_r_step_nu, flips, held));
    }
    let final_margins = rows.last().map(|r| r.norms.clone()).unwrap_or_default();
    Ok(RunResult {
        plan: plan.clone(),
        norm_names: diag.norms.iter().map(|(n, _)| n.clone()).collect(),
        rows,
        trace,
        checkpoints,
        stop,
        steps: state.step_index(),
        final_loss: eval.loss,
        final_margins,
        warnings,
        theta: state.theta,
    })
}

/// Margin norm names in report order for `config` (without the trajectory norm).
pub fn configured_norm_names(config: &ExperimentConfig) -> Vec<String> {
    config.margin_norms.iter().map(MarginNorm::name).collect()
}
