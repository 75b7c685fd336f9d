//! Versioned CSV logs, JSON summaries, and sweep aggregates.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::train::{KktCheckpoint, NormColumns, RunResult, StopReason};
use super::RunError;

/// Written into the first column of every CSV row.
pub const CSV_SCHEMA_VERSION: u32 = 1;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finite(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

pub fn row_header(norm_names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["schema_version", "step", "t", "loss", "log_loss", "eta", "int_eta"].iter().map(|s| s.to_string()).collect();
    for n in norm_names {
        h.push(format!("{n}_norm"));
        h.push(format!("{n}_hard_margin"));
        h.push(format!("{n}_soft_margin"));
    }
    h.extend(
        [
            "alignment_r",
            "alignment_r_step_nu",
            "parameter_alignment",
            "ratio_norm_over_int_eta",
            "kkt_epsilon",
            "kkt_delta",
            "kkt_alignment_gap",
            "adam_sign_stat",
            "adam_path_ratio",
            "relu_sign_flips",
            "held_steps",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io { path: path.to_path_buf(), reason: e.to_string() }
}

/// Diagnostics rows as CSV text; empty fields mark undefined values.
pub fn rows_csv(result: &RunResult) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mk = |e: csv::Error| RunError::Io { path: PathBuf::from("<csv>"), reason: e.to_string() };
    w.write_record(row_header(&result.norm_names)).map_err(mk)?;
    for r in &result.rows {
        let mut rec = vec![
            CSV_SCHEMA_VERSION.to_string(),
            r.step.to_string(),
            r.t.to_string(),
            finite(r.loss),
            finite(r.log_loss),
            r.eta.to_string(),
            r.int_eta.to_string(),
        ];
        for n in &r.norms {
            rec.push(finite(n.norm_value));
            rec.push(finite(n.hard_margin));
            rec.push(opt(n.soft_margin));
        }
        for v in [
            r.alignment_r,
            r.alignment_r_step_nu,
            r.parameter_alignment,
            r.ratio_norm_over_int_eta,
            r.kkt_epsilon,
            r.kkt_delta,
            r.kkt_alignment_gap,
            r.adam_sign_stat,
            r.adam_path_ratio,
        ] {
            rec.push(opt(v));
        }
        rec.push(r.relu_sign_flips.map(|f| f.to_string()).unwrap_or_default());
        rec.push(r.held_steps.to_string());
        w.write_record(&rec).map_err(mk)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::Io { path: PathBuf::from("<csv>"), reason: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalMargin {
    pub norm: String,
    #[serde(flatten)]
    pub values: NormColumns,
}

/// Acceptance-relevant statistics of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub variant: String,
    pub optimizer: String,
    pub seed: u64,
    pub steps: u64,
    pub stop: StopReason,
    pub final_loss: f64,
    pub final_margins: Vec<FinalMargin>,
    /// Minimum parameter alignment over the final 25% of steps.
    pub tail_alignment_min: Option<f64>,
    pub soft_margin_violations: usize,
    pub soft_margin_compared: usize,
    /// Mean Adam sign-agreement statistic over the final 10% of steps.
    pub adam_sign_tail_mean: Option<f64>,
    /// Maximum Adam path ratio over the final 50% of steps.
    pub adam_path_tail_max: Option<f64>,
    pub kkt_checkpoints: Vec<KktCheckpoint>,
    pub warnings: Vec<String>,
    pub csv: Option<PathBuf>,
}

impl RunSummary {
    pub fn from_result(result: &RunResult, loss_zero: f64, csv: Option<PathBuf>) -> Self {
        let (violations, compared) = result.soft_margin_violations(loss_zero);
        RunSummary {
            experiment: result.plan.experiment.clone(),
            variant: result.plan.variant.clone(),
            optimizer: result.plan.optimizer.label(),
            seed: result.plan.seed,
            steps: result.steps,
            stop: result.stop,
            final_loss: result.final_loss,
            final_margins: result
                .norm_names
                .iter()
                .zip(&result.final_margins)
                .map(|(n, v)| FinalMargin { norm: n.clone(), values: *v })
                .collect(),
            tail_alignment_min: result.tail_alignment_min(0.25),
            soft_margin_violations: violations,
            soft_margin_compared: compared,
            adam_sign_tail_mean: result.tail_adam_sign_mean(0.1),
            adam_path_tail_max: result.tail_adam_path_max(0.5),
            kkt_checkpoints: result.checkpoints.clone(),
            warnings: result.warnings.clone(),
            csv,
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    write_text(path, &(text + "\n"))
}

/// Mean and 95% normal-approximation interval of one (variant, norm) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub variant: String,
    pub optimizer: String,
    pub norm: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub min: f64,
    pub max: f64,
}

/// `(mean, half-width)` with half-width `1.96 · s / sqrt(n)`; zero for one sample.
pub fn mean_interval(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Hard-margin aggregates, in the order variants and norms first appear.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for s in summaries {
        for m in &s.final_margins {
            let k = (s.variant.clone(), s.optimizer.clone(), m.norm.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.into_iter()
        .map(|(variant, optimizer, norm)| {
            let values: Vec<f64> = summaries
                .iter()
                .filter(|s| s.variant == variant)
                .flat_map(|s| s.final_margins.iter().filter(|m| m.norm == norm).map(|m| m.values.hard_margin))
                .filter(|v| v.is_finite())
                .collect();
            let (mean, half) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_interval(&values) };
            AggregateRow {
                n: values.len(),
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                variant,
                optimizer,
                norm,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("schema_version,variant,optimizer,norm,n,mean_hard_margin,ci_low,ci_high,min,max\n");
    for r in rows {
        out.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.optimizer,
            r.norm,
            r.n,
            finite(r.mean),
            finite(r.ci_low),
            finite(r.ci_high),
            finite(r.min),
            finite(r.max)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_examples() {
        assert_eq!(mean_interval(&[2.5]), (2.5, 0.0));
        let (m, h) = mean_interval(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn header_layout() {
        let h = row_header(&["l2".into()]);
        assert_eq!(h[0], "schema_version");
        assert_eq!(&h[7..10], &["l2_norm", "l2_hard_margin", "l2_soft_margin"]);
        assert_eq!(h.last().unwrap(), "held_steps");
    }
}
