//! Experiment configuration: JSON with an optional `extends` parent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RunError;
use crate::ema;
use crate::losses::LossSpec;
use crate::models::ModelSpec;
use crate::norms::NormSpec;
use crate::optim::{build_muon_adam, build_muon_signum, OptimizerSpec, Schedule};
use crate::params::Layout;

/// Overrides `output_dir` for every run when set.
pub const OUTPUT_DIR_ENV: &str = "MARGINFLOW_OUTPUT_DIR";

const MAX_EXTENDS_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synth {
        m: usize,
        d: usize,
        #[serde(default = "default_margin_floor")]
        margin_floor: f64,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        m: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        cache_dir: Option<PathBuf>,
    },
    Cache {
        path: PathBuf,
    },
}

fn default_margin_floor() -> f64 {
    0.1
}

/// Named constructors for the common optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Builder {
    MuonAdam {
        eta0_m: f64,
        eta0_a: f64,
        #[serde(default = "ema::default_c1")]
        c_m: f64,
        #[serde(default = "ema::default_c1")]
        c1: f64,
        #[serde(default = "ema::default_c2")]
        c2: f64,
    },
    MuonSignum {
        eta0_m: f64,
        eta0_s: f64,
        #[serde(default = "ema::default_c1")]
        c_m: f64,
        #[serde(default = "ema::default_c1")]
        c_s: f64,
    },
}

/// A preset name (`ngd`, `nsd-linf`, `signum`, `muon`, `adam`), a builder, or a full spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptimizerChoice {
    Preset(String),
    Builder(Builder),
    Spec(OptimizerSpec),
}

impl OptimizerChoice {
    pub fn resolve(&self, layout: &Layout) -> Result<OptimizerSpec, RunError> {
        match self {
            OptimizerChoice::Spec(s) => Ok(s.clone()),
            OptimizerChoice::Preset(name) => match name.as_str() {
                "ngd" | "nsd-l2" => Ok(OptimizerSpec::ngd()),
                "nsd-linf" => Ok(OptimizerSpec::Sd { norm: NormSpec::Linf, normalized: true }),
                "signum" => Ok(OptimizerSpec::signum()),
                "muon" => Ok(OptimizerSpec::muon()),
                "adam" => Ok(OptimizerSpec::adam()),
                other => Err(RunError::Config(format!("unknown optimizer preset `{other}`"))),
            },
            OptimizerChoice::Builder(Builder::MuonAdam { eta0_m, eta0_a, c_m, c1, c2 }) => {
                Ok(build_muon_adam(*eta0_m, *eta0_a, *c_m, *c1, *c2, layout)?.0)
            }
            OptimizerChoice::Builder(Builder::MuonSignum { eta0_m, eta0_s, c_m, c_s }) => {
                Ok(build_muon_signum(*eta0_m, *eta0_s, *c_m, *c_s, layout)?.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub optimizer: OptimizerChoice,
    /// Replaces the schedule's `eta0` for this variant.
    #[serde(default)]
    pub eta0: Option<f64>,
}

/// A norm to report margins under, optionally named for the CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarginNorm {
    Named { name: String, norm: NormSpec },
    Plain(NormSpec),
}

impl MarginNorm {
    pub fn name(&self) -> String {
        match self {
            MarginNorm::Named { name, .. } => name.clone(),
            MarginNorm::Plain(n) => n.label(),
        }
    }

    pub fn norm(&self) -> &NormSpec {
        match self {
            MarginNorm::Named { norm, .. } | MarginNorm::Plain(norm) => norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub loss_target: f64,
    pub max_steps: u64,
}

fn default_dt() -> f64 {
    1.0
}
fn default_log_every() -> u64 {
    100
}
fn default_init_scale() -> f64 {
    0.01
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_checkpoints() -> Vec<f64> {
    vec![1e-2, 1e-6]
}
fn default_margin_norms() -> Vec<MarginNorm> {
    vec![MarginNorm::Plain(NormSpec::L2), MarginNorm::Plain(NormSpec::Linf), MarginNorm::Plain(NormSpec::SpectralPerMatrix)]
}
fn default_schedule() -> Schedule {
    Schedule::PowerDecay { eta0: 1.0, exponent: 0.8, t_init: 1.0 }
}
fn default_loss() -> LossSpec {
    LossSpec::Exponential
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub optimizer: Option<OptimizerChoice>,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_margin_norms")]
    pub margin_norms: Vec<MarginNorm>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub stop: StopRule,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Factor applied to the Kaiming-normal initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Loss levels at which KKT residuals are recorded on first crossing.
    #[serde(default = "default_checkpoints")]
    pub kkt_checkpoints: Vec<f64>,
}

impl ExperimentConfig {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "run".into())
    }

    /// The explicit variants, or one built from `optimizer`.
    pub fn variants(&self) -> Result<Vec<Variant>, RunError> {
        if !self.variants.is_empty() {
            if self.optimizer.is_some() {
                return Err(RunError::Config("give either `optimizer` or `variants`, not both".into()));
            }
            return Ok(self.variants.clone());
        }
        let optimizer = self.optimizer.clone().ok_or_else(|| RunError::Config("no optimizer given".into()))?;
        let name = match &optimizer {
            OptimizerChoice::Preset(p) => p.clone(),
            OptimizerChoice::Builder(Builder::MuonAdam { .. }) => "muon-adam".into(),
            OptimizerChoice::Builder(Builder::MuonSignum { .. }) => "muon-signum".into(),
            OptimizerChoice::Spec(s) => s.label(),
        };
        Ok(vec![Variant { name, optimizer, eta0: None }])
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.model.validate()?;
        self.schedule.validate()?;
        let layout = self.model.layout()?;
        for v in self.variants()? {
            v.optimizer.resolve(&layout)?;
            if let Some(e) = v.eta0 {
                self.schedule.with_eta0(e).validate()?;
            }
        }
        for n in &self.margin_norms {
            n.norm().validate(&layout)?;
        }
        let mut names: Vec<String> = self.margin_norms.iter().map(MarginNorm::name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(RunError::Config("margin norm names must be distinct".into()));
        }
        if !(self.stop.loss_target > 0.0) {
            return Err(RunError::Config(format!("loss_target must be positive, got {}", self.stop.loss_target)));
        }
        if self.log_every == 0 {
            return Err(RunError::Config("log_every must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(RunError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.seeds.is_empty() {
            return Err(RunError::Config("at least one seed is required".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(RunError::Config(format!("init_scale must be positive, got {}", self.init_scale)));
        }
        Ok(())
    }

    /// `output_dir`, unless the override variable is set.
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.output_dir.clone(),
        }
    }

    pub fn from_value(value: Value) -> Result<Self, RunError> {
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self, RunError> {
        let value: Value = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        if value.get("extends").is_some() {
            return Err(RunError::Config("`extends` needs a config loaded from a file".into()));
        }
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Self::from_value(load_merged(path, 0)?)
    }
}

fn read_json(path: &Path) -> Result<Value, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

/// Loads `path`, resolving `extends` (relative to the including file) recursively.
fn load_merged(path: &Path, depth: usize) -> Result<Value, RunError> {
    if depth > MAX_EXTENDS_DEPTH {
        return Err(RunError::Config(format!("`extends` chain deeper than {MAX_EXTENDS_DEPTH} at {}", path.display())));
    }
    let mut value = read_json(path)?;
    let Some(obj) = value.as_object_mut() else {
        return Err(RunError::Config(format!("{}: top level must be an object", path.display())));
    };
    let Some(parent) = obj.remove("extends") else {
        return Ok(value);
    };
    let parent = parent.as_str().ok_or_else(|| RunError::Config("`extends` must be a path string".into()))?;
    let parent_path = path.parent().unwrap_or(Path::new(".")).join(parent);
    let mut base = load_merged(&parent_path, depth + 1)?;
    merge(&mut base, value);
    Ok(base)
}

/// Deep merge of objects; anything else in `over` replaces `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
