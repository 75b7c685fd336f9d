//! Step rules: (normalized) steepest descent, momentum steepest descent
//! (Signum, Muon), Adam without a stability constant, and group composites.
//!
//! θ is advanced by explicit Euler; moments use the exact integrator in
//! [`crate::ema`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ema::{self, EmaError, EmaState};
use crate::norms::{GroupNorm, NormError, NormSpec};
use crate::params::{Layout, LayoutError, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer: {0}")]
    Invalid(String),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Ema(#[from] EmaError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

fn default_t_init() -> f64 {
    1.0
}

/// Learning-rate schedule `η(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant { eta0: f64 },
    /// `η(t) = η0 · (t_init + t)^{−a}`.
    PowerDecay {
        eta0: f64,
        exponent: f64,
        #[serde(default = "default_t_init")]
        t_init: f64,
    },
}

impl Schedule {
    pub fn eta(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant { eta0 } => eta0,
            Schedule::PowerDecay { eta0, exponent, t_init } => eta0 * (t_init + t).powf(-exponent),
        }
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            Schedule::Constant { eta0 } | Schedule::PowerDecay { eta0, .. } => eta0,
        }
    }

    pub fn with_eta0(&self, eta0: f64) -> Schedule {
        match *self {
            Schedule::Constant { .. } => Schedule::Constant { eta0 },
            Schedule::PowerDecay { exponent, t_init, .. } => Schedule::PowerDecay { eta0, exponent, t_init },
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let eta0 = self.eta0();
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(OptimError::Invalid(format!("eta0 must be positive, got {eta0}")));
        }
        if let Schedule::PowerDecay { exponent, t_init, .. } = *self {
            if !(0.0..1.0).contains(&exponent) {
                return Err(OptimError::Invalid(format!("decay exponent must lie in [0, 1), got {exponent}")));
            }
            if !(t_init >= 1.0) {
                return Err(OptimError::Invalid(format!("t_init must be at least 1, got {t_init}")));
            }
        }
        Ok(())
    }
}

fn default_eps() -> f64 {
    1e-20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sd {
        norm: NormSpec,
        normalized: bool,
    },
    Msd {
        norm: NormSpec,
        c1: f64,
        normalized: bool,
    },
    Adam {
        c1: f64,
        c2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Composite(Vec<CompositePart>),
}

/// One block of a composite: its groups step with learning rate `base_scale · η(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositePart {
    pub groups: Vec<String>,
    pub base_scale: f64,
    pub spec: OptimizerSpec,
}

impl OptimizerSpec {
    pub fn ngd() -> Self {
        OptimizerSpec::Sd { norm: NormSpec::L2, normalized: true }
    }

    pub fn signum() -> Self {
        OptimizerSpec::Msd { norm: NormSpec::Linf, c1: ema::default_c1(), normalized: true }
    }

    pub fn muon() -> Self {
        OptimizerSpec::Msd { norm: NormSpec::SpectralPerMatrix, c1: ema::default_c1(), normalized: true }
    }

    pub fn adam() -> Self {
        OptimizerSpec::Adam { c1: ema::default_c1(), c2: ema::default_c2(), eps: default_eps() }
    }

    /// Short label for file names and tables.
    pub fn label(&self) -> String {
        match self {
            OptimizerSpec::Sd { norm, normalized } => format!("{}sd-{}", if *normalized { "n" } else { "" }, norm.label()),
            OptimizerSpec::Msd { norm, normalized, .. } => format!("{}msd-{}", if *normalized { "n" } else { "" }, norm.label()),
            OptimizerSpec::Adam { .. } => "adam".into(),
            OptimizerSpec::Composite(parts) => {
                let names: Vec<String> = parts.iter().map(|p| p.spec.label()).collect();
                format!("composite[{}]", names.join("+"))
            }
        }
    }

    pub fn uses_adam(&self) -> bool {
        match self {
            OptimizerSpec::Adam { .. } => true,
            OptimizerSpec::Composite(parts) => parts.iter().any(|p| p.spec.uses_adam()),
            _ => false,
        }
    }

    /// The norm whose steepest-descent trajectory this optimizer follows.
    ///
    /// Adam tracks ℓ∞. A composite maps part `k` to scale `η0_last / η0_k`,
    /// so equal base scales give the plain max norm.
    pub fn trajectory_norm(&self) -> NormSpec {
        match self {
            OptimizerSpec::Sd { norm, .. } | OptimizerSpec::Msd { norm, .. } => norm.clone(),
            OptimizerSpec::Adam { .. } => NormSpec::Linf,
            OptimizerSpec::Composite(parts) => {
                let reference = parts.last().map_or(1.0, |p| p.base_scale);
                NormSpec::MaxOfGroups(
                    parts
                        .iter()
                        .map(|p| GroupNorm { groups: p.groups.clone(), scale: reference / p.base_scale, norm: p.spec.trajectory_norm() })
                        .collect(),
                )
            }
        }
    }

    fn validate_leaf(&self) -> Result<(), OptimError> {
        match *self {
            OptimizerSpec::Sd { .. } => Ok(()),
            OptimizerSpec::Msd { c1, .. } => {
                if !(c1 > 0.0 && c1.is_finite()) {
                    return Err(OptimError::Invalid(format!("momentum rate must be positive, got {c1}")));
                }
                Ok(())
            }
            OptimizerSpec::Adam { c1, c2, eps } => {
                if !(c2 > 0.0 && c1 >= c2 && c1.is_finite()) {
                    return Err(OptimError::Invalid(format!("Adam needs c1 ≥ c2 > 0, got c1={c1}, c2={c2}")));
                }
                if !(eps >= 0.0) {
                    return Err(OptimError::Invalid(format!("eps must be non-negative, got {eps}")));
                }
                Ok(())
            }
            OptimizerSpec::Composite(_) => Err(OptimError::Invalid("composites cannot be nested".into())),
        }
    }
}

#[derive(Debug, Clone)]
enum Moments {
    None,
    First(EmaState),
    Adam { m: EmaState, v: EmaState },
}

#[derive(Debug, Clone)]
struct PartState {
    spec: OptimizerSpec,
    scale: f64,
    /// Group indices of the part; `None` for the whole vector.
    groups: Option<Vec<usize>>,
    /// Flat coordinates covered by the part.
    coords: Vec<usize>,
    layout: Arc<Layout>,
    moments: Moments,
}

fn fresh_moments(spec: &OptimizerSpec, len: usize) -> Moments {
    match *spec {
        OptimizerSpec::Msd { c1, .. } => Moments::First(EmaState::new(len, c1)),
        OptimizerSpec::Adam { c1, c2, .. } => Moments::Adam { m: EmaState::new(len, c1), v: EmaState::new(len, c2) },
        _ => Moments::None,
    }
}

/// `θ_t` plus moment estimates, time, and `∫₀^t η`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub theta: ParamVector,
    parts: Vec<PartState>,
    t: f64,
    int_eta: f64,
    step_index: u64,
}

/// What one call to [`OptimizerState::step`] did.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub eta: f64,
    /// `θ' − θ`.
    pub delta: ParamVector,
    /// A direction-based part saw a zero gradient and zero momentum and stayed put.
    pub held: bool,
}

/// Bias-corrected Adam moments on the coordinates Adam controls.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub indices: Vec<usize>,
    /// Composite base scale of the Adam part (1 for plain Adam).
    pub scale: f64,
    pub m_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
}

impl OptimizerState {
    pub fn new(spec: &OptimizerSpec, theta: ParamVector) -> Result<Self, OptimError> {
        let layout = theta.layout().clone();
        let parts = match spec {
            OptimizerSpec::Composite(parts) => {
                if parts.is_empty() {
                    return Err(OptimError::Invalid("empty composite".into()));
                }
                let mut seen = vec![false; layout.groups().len()];
                let mut out = Vec::with_capacity(parts.len());
                for part in parts {
                    part.spec.validate_leaf()?;
                    if !(part.base_scale > 0.0 && part.base_scale.is_finite()) {
                        return Err(OptimError::Invalid(format!("base scale must be positive, got {}", part.base_scale)));
                    }
                    let mut group_ids = Vec::new();
                    for name in &part.groups {
                        let gi = layout.index_of(name)?;
                        if seen[gi] {
                            return Err(OptimError::Invalid(format!("group {name} appears in two composite parts")));
                        }
                        seen[gi] = true;
                        group_ids.push(gi);
                    }
                    let sub = Arc::new(layout.subset(&group_ids)?);
                    let coords: Vec<usize> = group_ids.iter().flat_map(|&gi| layout.groups()[gi].range()).collect();
                    out.push(PartState {
                        moments: fresh_moments(&part.spec, coords.len()),
                        spec: part.spec.clone(),
                        scale: part.base_scale,
                        groups: Some(group_ids),
                        coords,
                        layout: sub,
                    });
                }
                if let Some(gi) = seen.iter().position(|s| !s) {
                    return Err(OptimError::Invalid(format!("group {} is not covered by the composite", layout.groups()[gi].name)));
                }
                out
            }
            leaf => {
                leaf.validate_leaf()?;
                vec![PartState {
                    moments: fresh_moments(leaf, layout.len()),
                    spec: leaf.clone(),
                    scale: 1.0,
                    groups: None,
                    coords: (0..layout.len()).collect(),
                    layout: layout.clone(),
                }]
            }
        };
        for part in &parts {
            if let OptimizerSpec::Sd { norm, .. } | OptimizerSpec::Msd { norm, .. } = &part.spec {
                norm.validate(&part.layout)?;
            }
        }
        if !theta.is_finite() {
            return Err(OptimError::NonFinite("initial parameters"));
        }
        Ok(Self { theta, parts, t: 0.0, int_eta: 0.0, step_index: 0 })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// `∫₀^t η` under the reference schedule (no group scales).
    pub fn int_eta(&self) -> f64 {
        self.int_eta
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Raw first moment of the whole vector when every part keeps one.
    pub fn momentum(&self) -> Option<ParamVector> {
        let mut out = ParamVector::zeros(self.theta.layout().clone());
        for part in &self.parts {
            let m = match &part.moments {
                Moments::First(m) | Moments::Adam { m, .. } => m.value(),
                Moments::None => return None,
            };
            part.coords.iter().zip(m).for_each(|(&i, &v)| out.as_mut_slice()[i] = v);
        }
        Some(out)
    }

    pub fn adam_moments(&self) -> Result<Option<AdamMoments>, OptimError> {
        for part in &self.parts {
            if let Moments::Adam { m, v } = &part.moments {
                if m.elapsed() == 0.0 {
                    return Ok(None);
                }
                return Ok(Some(AdamMoments { indices: part.coords.clone(), scale: part.scale, m_hat: m.bias_correct()?, v_hat: v.bias_correct()? }));
            }
        }
        Ok(None)
    }

    /// Advances by one explicit-Euler step of length `dt` with gradient `g`.
    pub fn step(&mut self, g: &ParamVector, schedule: &Schedule, dt: f64) -> Result<StepReport, OptimError> {
        if !(dt > 0.0) {
            return Err(EmaError::NonPositiveStep(dt).into());
        }
        g.check_layout(self.theta.layout())?;
        if !g.is_finite() {
            return Err(OptimError::NonFinite("gradient"));
        }
        let eta = schedule.eta(self.t);
        let mut delta = ParamVector::zeros(self.theta.layout().clone());
        let mut held = false;
        for part in &mut self.parts {
            let local = match &part.groups {
                None => g.clone(),
                Some(idx) => g.gather(idx, &part.layout),
            };
            let step_len = dt * eta * part.scale;
            let (d, h) = part_step(&part.spec, &mut part.moments, &local, step_len, dt)?;
            held |= h;
            match &part.groups {
                None => delta = ParamVector::from_vec(delta.layout().clone(), d.into_vec())?,
                Some(idx) => delta.scatter(idx, &d),
            }
        }
        if !delta.is_finite() {
            return Err(OptimError::NonFinite("update"));
        }
        self.theta.axpy(1.0, &delta);
        self.t += dt;
        self.int_eta += dt * eta;
        self.step_index += 1;
        Ok(StepReport { eta, delta, held })
    }
}

fn direction_step(norm: &NormSpec, normalized: bool, x: &ParamVector, step_len: f64) -> Result<(ParamVector, bool), OptimError> {
    let dual = norm.dual_norm(x)?;
    if dual == 0.0 {
        return Ok((ParamVector::zeros(x.layout().clone()), true));
    }
    let dir = norm.steepest_direction(x)?;
    let factor = if normalized { step_len } else { step_len * dual };
    Ok((dir.scaled(factor), false))
}

fn part_step(spec: &OptimizerSpec, moments: &mut Moments, g: &ParamVector, step_len: f64, dt: f64) -> Result<(ParamVector, bool), OptimError> {
    match (spec, moments) {
        (OptimizerSpec::Sd { norm, normalized }, _) => direction_step(norm, *normalized, g, step_len),
        (OptimizerSpec::Msd { norm, normalized, .. }, Moments::First(m)) => {
            m.update(g.as_slice(), dt)?;
            let mv = ParamVector::from_vec(g.layout().clone(), m.value().to_vec())?;
            direction_step(norm, *normalized, &mv, step_len)
        }
        (OptimizerSpec::Adam { eps, .. }, Moments::Adam { m, v }) => {
            m.update(g.as_slice(), dt)?;
            v.update_with(g.as_slice(), dt, |x| x * x)?;
            let m_hat = m.bias_correct()?;
            let v_hat = v.bias_correct()?;
            let d: Vec<f64> = m_hat
                .iter()
                .zip(&v_hat)
                .map(|(&a, &b)| {
                    let denom = b.sqrt() + eps;
                    if denom == 0.0 {
                        0.0
                    } else {
                        -step_len * a / denom
                    }
                })
                .collect();
            Ok((ParamVector::from_vec(g.layout().clone(), d)?, false))
        }
        _ => Err(OptimError::Invalid("moment state does not match the optimizer".into())),
    }
}

/// Muon on the matrix groups and Adam on the vector groups, plus the matching
/// diagnostics norm `max{(η0_A/η0_M)·‖W‖_msp, ‖u‖_∞}`.
pub fn build_muon_adam(eta0_m: f64, eta0_a: f64, c_m: f64, c1: f64, c2: f64, layout: &Layout) -> Result<(OptimizerSpec, NormSpec), OptimError> {
    if !(c1 >= c2) {
        return Err(OptimError::Invalid(format!("Adam needs c1 ≥ c2, got c1={c1}, c2={c2}")));
    }
    build_muon_with(eta0_m, eta0_a, c_m, layout, OptimizerSpec::Adam { c1, c2, eps: default_eps() })
}

/// Muon on the matrix groups and Signum on the vector groups.
pub fn build_muon_signum(eta0_m: f64, eta0_s: f64, c_m: f64, c_s: f64, layout: &Layout) -> Result<(OptimizerSpec, NormSpec), OptimError> {
    build_muon_with(eta0_m, eta0_s, c_m, layout, OptimizerSpec::Msd { norm: NormSpec::Linf, c1: c_s, normalized: true })
}

fn build_muon_with(eta0_m: f64, eta0_v: f64, c_m: f64, layout: &Layout, vector_spec: OptimizerSpec) -> Result<(OptimizerSpec, NormSpec), OptimError> {
    for (name, v) in [("eta0_M", eta0_m), ("eta0 of the vector part", eta0_v), ("c_M", c_m)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(OptimError::Invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let (matrices, vectors): (Vec<_>, Vec<_>) = layout.groups().iter().partition(|g| g.shape.is_matrix());
    if matrices.is_empty() {
        return Err(OptimError::Invalid("layout has no matrix group".into()));
    }
    if vectors.is_empty() {
        return Err(OptimError::Invalid("layout has no vector group".into()));
    }
    let names = |gs: &[&crate::params::Group]| gs.iter().map(|g| g.name.clone()).collect::<Vec<_>>();
    let spec = OptimizerSpec::Composite(vec![
        CompositePart {
            groups: names(&matrices),
            base_scale: eta0_m,
            spec: OptimizerSpec::Msd { norm: NormSpec::SpectralPerMatrix, c1: c_m, normalized: true },
        },
        CompositePart { groups: names(&vectors), base_scale: eta0_v, spec: vector_spec },
    ]);
    let norm = spec.trajectory_norm();
    Ok((spec, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::params::Shape;

    fn flat(v: &[f64]) -> ParamVector {
        ParamVector::flat(v.to_vec())
    }

    const UNIT: Schedule = Schedule::Constant { eta0: 1.0 };

    #[test]
    fn ngd_first_step() {
        let mut s = OptimizerState::new(&OptimizerSpec::ngd(), flat(&[0.0, 0.0])).unwrap();
        let r = s.step(&flat(&[3.0, 4.0]), &UNIT, 1.0).unwrap();
        assert!((s.theta.as_slice()[0] + 0.6).abs() < 1e-15);
        assert!((s.theta.as_slice()[1] + 0.8).abs() < 1e-15);
        assert_eq!(r.eta, 1.0);
        assert_eq!(s.int_eta(), 1.0);
        assert_eq!(s.t(), 1.0);
    }

    #[test]
    fn unnormalized_sd_is_gradient_descent_for_l2() {
        let spec = OptimizerSpec::Sd { norm: NormSpec::L2, normalized: false };
        let mut s = OptimizerState::new(&spec, flat(&[1.0, 1.0])).unwrap();
        s.step(&flat(&[3.0, 4.0]), &Schedule::Constant { eta0: 0.1 }, 1.0).unwrap();
        assert!((s.theta.as_slice()[0] - 0.7).abs() < 1e-15);
        assert!((s.theta.as_slice()[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn signum_first_step() {
        let mut s = OptimizerState::new(&OptimizerSpec::signum(), flat(&[0.0, 0.0])).unwrap();
        let eta = 0.3;
        s.step(&flat(&[2.0, -1.0]), &Schedule::Constant { eta0: eta }, 1.0).unwrap();
        let m = s.momentum().unwrap();
        assert!((m.as_slice()[0] - 0.2).abs() < 1e-15);
        assert!((m.as_slice()[1] + 0.1).abs() < 1e-15);
        assert_eq!(s.theta.as_slice(), &[-eta, eta]);
    }

    #[test]
    fn adam_constant_gradient_is_sign_descent() {
        let mut s = OptimizerState::new(&OptimizerSpec::adam(), flat(&[0.0, 0.0, 0.0])).unwrap();
        let g = flat(&[0.5, -3.0, 1e-4]);
        for _ in 0..50 {
            let r = s.step(&g, &UNIT, 1.0).unwrap();
            for (d, want) in r.delta.as_slice().iter().zip([-1.0, 1.0, -1.0]) {
                assert!((d - want).abs() < 1e-9);
            }
        }
        let am = s.adam_moments().unwrap().unwrap();
        assert!((am.m_hat[1] + 3.0).abs() < 1e-12);
        assert!((am.v_hat[1] - 9.0).abs() < 1e-11);
    }

    #[test]
    fn adam_zero_eps_holds_silent_coordinate() {
        let spec = OptimizerSpec::Adam { c1: ema::default_c1(), c2: ema::default_c2(), eps: 0.0 };
        let mut s = OptimizerState::new(&spec, flat(&[1.0, 1.0])).unwrap();
        let r = s.step(&flat(&[0.0, 2.0]), &UNIT, 1.0).unwrap();
        assert_eq!(r.delta.as_slice()[0], 0.0);
        assert!((r.delta.as_slice()[1] + 1.0).abs() < 1e-12);
    }

    fn matrix_layout() -> Arc<Layout> {
        Arc::new(Layout::new([("W", Shape::Matrix { rows: 2, cols: 2 }), ("u", Shape::Vector { len: 2 })]).unwrap())
    }

    #[test]
    fn muon_on_diagonal_momentum() {
        let layout = Arc::new(Layout::new([("W", Shape::Matrix { rows: 2, cols: 2 })]).unwrap());
        let theta = ParamVector::zeros(layout.clone());
        let mut s = OptimizerState::new(&OptimizerSpec::muon(), theta).unwrap();
        let g = ParamVector::from_vec(layout, vec![30.0, 0.0, 0.0, 20.0]).unwrap();
        s.step(&g, &Schedule::Constant { eta0: 0.5 }, 1.0).unwrap();
        let got = s.theta.group_matrix(0);
        let want = Matrix::diag(&[-0.5, -0.5]);
        for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_holds() {
        let mut s = OptimizerState::new(&OptimizerSpec::ngd(), flat(&[1.0, 2.0])).unwrap();
        let r = s.step(&flat(&[0.0, 0.0]), &UNIT, 1.0).unwrap();
        assert!(r.held);
        assert_eq!(s.theta.as_slice(), &[1.0, 2.0]);
        let mut s = OptimizerState::new(&OptimizerSpec::signum(), flat(&[1.0])).unwrap();
        s.step(&flat(&[1.0]), &UNIT, 1.0).unwrap();
        let r = s.step(&flat(&[0.0]), &UNIT, 1.0).unwrap();
        assert!(!r.held, "momentum keeps moving");
    }

    #[test]
    fn nan_gradient_is_an_error() {
        let mut s = OptimizerState::new(&OptimizerSpec::ngd(), flat(&[1.0, 2.0])).unwrap();
        assert_eq!(s.step(&flat(&[f64::NAN, 0.0]), &UNIT, 1.0).unwrap_err(), OptimError::NonFinite("gradient"));
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::PowerDecay { eta0: 2.0, exponent: 0.8, t_init: 1.0 };
        assert_eq!(s.eta(0.0), 2.0);
        assert!((s.eta(3.0) - 2.0 * 4f64.powf(-0.8)).abs() < 1e-15);
        assert!(Schedule::PowerDecay { eta0: 1.0, exponent: 1.0, t_init: 1.0 }.validate().is_err());
        assert!(Schedule::PowerDecay { eta0: 1.0, exponent: 0.5, t_init: 0.5 }.validate().is_err());
        assert!(Schedule::Constant { eta0: 0.0 }.validate().is_err());
    }

    #[test]
    fn muon_adam_construction() {
        let layout = matrix_layout();
        let (_, norm) = build_muon_adam(0.1, 0.5, 0.1, 0.1, 0.001, &layout).unwrap();
        let NormSpec::MaxOfGroups(parts) = &norm else { panic!() };
        assert!((parts[0].scale - 5.0).abs() < 1e-12);
        assert_eq!(parts[1].scale, 1.0);
        assert_eq!(parts[1].norm, NormSpec::Linf);

        let (_, norm) = build_muon_adam(0.3, 0.3, 0.1, 0.1, 0.001, &layout).unwrap();
        let NormSpec::MaxOfGroups(parts) = &norm else { panic!() };
        assert_eq!(parts[0].scale, 1.0);

        let alpha = 5.0;
        let (_, norm) = build_muon_adam(0.1, 0.5, 0.1, 0.1, 0.001, &layout).unwrap();
        let g = ParamVector::from_vec(layout.clone(), vec![3.0, 0.0, 0.0, 2.0, 1.0, -2.0]).unwrap();
        assert!((norm.dual_norm(&g).unwrap() - (5.0 / alpha + 3.0)).abs() < 1e-12);

        let only_matrix = Layout::new([("W", Shape::Matrix { rows: 2, cols: 2 })]).unwrap();
        assert!(build_muon_adam(0.1, 0.1, 0.1, 0.1, 0.001, &only_matrix).is_err());
        let only_vector = Layout::new([("u", Shape::Vector { len: 2 })]).unwrap();
        assert!(build_muon_adam(0.1, 0.1, 0.1, 0.1, 0.001, &only_vector).is_err());
        assert!(build_muon_adam(0.1, 0.1, 0.1, 0.001, 0.1, &layout).is_err());
    }

    #[test]
    fn composite_steps_each_part_with_its_scale() {
        let layout = matrix_layout();
        let (spec, norm) = build_muon_signum(0.2, 0.5, 0.1, 0.1, &layout).unwrap();
        let mut s = OptimizerState::new(&spec, ParamVector::zeros(layout.clone())).unwrap();
        let g = ParamVector::from_vec(layout, vec![3.0, 0.0, 0.0, 2.0, 1.0, -2.0]).unwrap();
        let r = s.step(&g, &UNIT, 1.0).unwrap();
        assert_eq!(r.delta.as_slice(), &[-0.2, 0.0, 0.0, -0.2, -0.5, 0.5]);
        assert!((norm.norm(&r.delta).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let bad = OptimizerSpec::Adam { c1: 0.001, c2: 0.1, eps: 0.0 };
        assert!(OptimizerState::new(&bad, flat(&[0.0])).is_err());
        let layout = matrix_layout();
        let partial = OptimizerSpec::Composite(vec![CompositePart { groups: vec!["W".into()], base_scale: 1.0, spec: OptimizerSpec::ngd() }]);
        assert!(OptimizerState::new(&partial, ParamVector::zeros(layout.clone())).is_err());
        let nested = OptimizerSpec::Composite(vec![CompositePart {
            groups: vec!["W".into(), "u".into()],
            base_scale: 1.0,
            spec: OptimizerSpec::Composite(vec![]),
        }]);
        assert!(OptimizerState::new(&nested, ParamVector::zeros(layout)).is_err());
    }

    #[test]
    fn spec_serde_forms() {
        let s: OptimizerSpec = serde_json::from_str(r#"{"msd": {"norm": "linf", "c1": 0.1, "normalized": true}}"#).unwrap();
        assert!(matches!(s, OptimizerSpec::Msd { .. }));
        let a: OptimizerSpec = serde_json::from_str(r#"{"adam": {"c1": 0.1, "c2": 0.001}}"#).unwrap();
        assert_eq!(a, OptimizerSpec::Adam { c1: 0.1, c2: 0.001, eps: 1e-20 });
        let sch: Schedule = serde_json::from_str(r#"{"power_decay": {"eta0": 0.1, "exponent": 0.8}}"#).unwrap();
        assert_eq!(sch.eta(0.0), 0.1);
    }
}
