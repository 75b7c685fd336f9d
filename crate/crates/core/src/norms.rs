//! Norms, their duals, and steepest-direction (linear minimization) oracles.
//!
//! Every oracle returns `u` with `‖u‖ = 1` and `⟨u, g⟩ = −‖g‖_⋆`.
//! Under [`NormSpec::SpectralPerMatrix`] a vector group is read as a single-row
//! matrix, so its spectral and nuclear norms both reduce to the ℓ2 norm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::params::{Layout, LayoutError, ParamVector};

const MAX_NESTING: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),
    #[error("invalid norm spec: {0}")]
    InvalidSpec(String),
}

/// Declarative description of the norm governing a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSpec {
    L1,
    L2,
    Linf,
    /// Max over groups of the spectral norm ("max-spectral"); dual is the sum of nuclear norms.
    #[serde(alias = "spectral", alias = "msp")]
    SpectralPerMatrix,
    /// `max_k scale_k · ‖θ_k‖_(k)` over a partition of the groups.
    MaxOfGroups(Vec<GroupNorm>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNorm {
    pub groups: Vec<String>,
    pub scale: f64,
    pub norm: NormSpec,
}

impl NormSpec {
    /// Short lowercase label used for CSV column names.
    pub fn label(&self) -> String {
        match self {
            NormSpec::L1 => "l1".into(),
            NormSpec::L2 => "l2".into(),
            NormSpec::Linf => "linf".into(),
            NormSpec::SpectralPerMatrix => "msp".into(),
            NormSpec::MaxOfGroups(_) => "composite".into(),
        }
    }

    /// Checks scales, nesting depth, and that group sets partition the layout.
    pub fn validate(&self, layout: &Layout) -> Result<(), NormError> {
        let all: Vec<usize> = (0..layout.groups().len()).collect();
        self.validate_on(layout, &all, 0)
    }

    fn validate_on(&self, layout: &Layout, groups: &[usize], depth: usize) -> Result<(), NormError> {
        let NormSpec::MaxOfGroups(parts) = self else {
            return Ok(());
        };
        if depth + 1 > MAX_NESTING {
            return Err(NormError::InvalidSpec(format!("nesting deeper than {MAX_NESTING}")));
        }
        if parts.is_empty() {
            return Err(NormError::InvalidSpec("max_of_groups needs at least one entry".into()));
        }
        let mut seen = Vec::new();
        for part in parts {
            if !(part.scale.is_finite() && part.scale > 0.0) {
                return Err(NormError::InvalidSpec(format!("scale must be positive, got {}", part.scale)));
            }
            let idx = resolve(layout, &part.groups)?;
            for i in &idx {
                if !groups.contains(i) {
                    return Err(NormError::InvalidSpec(format!(
                        "group `{}` is outside the enclosing group set",
                        layout.groups()[*i].name
                    )));
                }
                if seen.contains(i) {
                    return Err(NormError::InvalidSpec(format!(
                        "group `{}` appears twice",
                        layout.groups()[*i].name
                    )));
                }
                seen.push(*i);
            }
            part.norm.validate_on(layout, &idx, depth + 1)?;
        }
        if seen.len() != groups.len() {
            return Err(NormError::InvalidSpec("group sets do not cover the parameter layout".into()));
        }
        Ok(())
    }

    pub fn norm(&self, p: &ParamVector) -> Result<f64, NormError> {
        self.validate(p.layout())?;
        self.norm_on(p, &all_groups(p))
    }

    pub fn dual_norm(&self, g: &ParamVector) -> Result<f64, NormError> {
        self.validate(g.layout())?;
        self.dual_on(g, &all_groups(g))
    }

    /// Unit-norm minimizer of `⟨u, g⟩`.
    pub fn steepest_direction(&self, g: &ParamVector) -> Result<ParamVector, NormError> {
        self.validate(g.layout())?;
        let groups = all_groups(g);
        if self.dual_on(g, &groups)? <= 0.0 {
            return Err(NormError::DegenerateGradient("gradient has zero dual norm".into()));
        }
        let mut out = ParamVector::zeros(g.layout().clone());
        self.direction_on(g, &groups, &mut out)?;
        Ok(out)
    }

    fn norm_on(&self, p: &ParamVector, groups: &[usize]) -> Result<f64, NormError> {
        Ok(match self {
            NormSpec::L1 => values(p, groups).map(f64::abs).sum(),
            NormSpec::L2 => values(p, groups).map(|v| v * v).sum::<f64>().sqrt(),
            NormSpec::Linf => values(p, groups).fold(0.0, |m, v| m.max(v.abs())),
            NormSpec::SpectralPerMatrix => {
                let mut best: f64 = 0.0;
                for &i in groups {
                    best = best.max(group_spectral(p, i)?);
                }
                best
            }
            NormSpec::MaxOfGroups(parts) => {
                let mut best: f64 = 0.0;
                for part in parts {
                    let idx = resolve(p.layout(), &part.groups)?;
                    best = best.max(part.scale * part.norm.norm_on(p, &idx)?);
                }
                best
            }
        })
    }

    fn dual_on(&self, g: &ParamVector, groups: &[usize]) -> Result<f64, NormError> {
        Ok(match self {
            NormSpec::L1 => values(g, groups).fold(0.0, |m, v| m.max(v.abs())),
            NormSpec::L2 => values(g, groups).map(|v| v * v).sum::<f64>().sqrt(),
            NormSpec::Linf => values(g, groups).map(f64::abs).sum(),
            NormSpec::SpectralPerMatrix => {
                let mut total = 0.0;
                for &i in groups {
                    total += group_nuclear(g, i)?;
                }
                total
            }
            NormSpec::MaxOfGroups(parts) => {
                let mut total = 0.0;
                for part in parts {
                    let idx = resolve(g.layout(), &part.groups)?;
                    total += part.norm.dual_on(g, &idx)? / part.scale;
                }
                total
            }
        })
    }

    /// Writes the direction for the coordinates in `groups`; leaves a zero block
    /// when the restriction of `g` has zero dual norm.
    fn direction_on(&self, g: &ParamVector, groups: &[usize], out: &mut ParamVector) -> Result<(), NormError> {
        match self {
            NormSpec::L2 => {
                let n = self.dual_on(g, groups)?;
                if n > 0.0 {
                    for &i in groups {
                        let src = g.group(i).to_vec();
                        out.group_mut(i).iter_mut().zip(src).for_each(|(o, v)| *o = -v / n);
                    }
                }
            }
            NormSpec::Linf => {
                for &i in groups {
                    let src = g.group(i).to_vec();
                    out.group_mut(i).iter_mut().zip(src).for_each(|(o, v)| *o = -sign(v));
                }
            }
            NormSpec::L1 => {
                // Lowest flat index wins ties.
                let mut ordered = groups.to_vec();
                ordered.sort_unstable();
                let mut best: Option<(usize, usize, f64)> = None;
                for &i in &ordered {
                    for (j, &v) in g.group(i).iter().enumerate() {
                        if v != 0.0 && best.is_none_or(|(_, _, b)| v.abs() > b.abs()) {
                            best = Some((i, j, v));
                        }
                    }
                }
                for &i in groups {
                    out.group_mut(i).fill(0.0);
                }
                if let Some((i, j, v)) = best {
                    out.group_mut(i)[j] = -sign(v);
                }
            }
            NormSpec::SpectralPerMatrix => {
                for &i in groups {
                    let m = g.group_matrix(i);
                    let dst = out.group_mut(i);
                    match linalg::orthogonalize(&m) {
                        Ok(q) => dst.iter_mut().zip(q.as_slice()).for_each(|(o, v)| *o = -v),
                        Err(LinalgError::Degenerate(_)) => dst.fill(0.0),
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            NormSpec::MaxOfGroups(parts) => {
                for part in parts {
                    let idx = resolve(g.layout(), &part.groups)?;
                    part.norm.direction_on(g, &idx, out)?;
                    let inv = 1.0 / part.scale;
                    for &i in &idx {
                        out.group_mut(i).iter_mut().for_each(|v| *v *= inv);
                    }
                }
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn all_groups(p: &ParamVector) -> Vec<usize> {
    (0..p.layout().groups().len()).collect()
}

fn values<'a>(p: &'a ParamVector, groups: &'a [usize]) -> impl Iterator<Item = f64> + 'a {
    groups.iter().flat_map(move |&i| p.group(i).iter().copied())
}

fn resolve(layout: &Layout, names: &[String]) -> Result<Vec<usize>, NormError> {
    if names.is_empty() {
        return Err(NormError::InvalidSpec("empty group set".into()));
    }
    names.iter().map(|n| layout.index_of(n).map_err(NormError::from)).collect()
}

fn group_spectral(p: &ParamVector, i: usize) -> Result<f64, NormError> {
    let shape = p.layout().groups()[i].shape;
    if shape.as_matrix_dims().0 == 1 || shape.as_matrix_dims().1 == 1 {
        return Ok(p.group(i).iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(linalg::spectral_norm(&p.group_matrix(i))?)
}

fn group_nuclear(p: &ParamVector, i: usize) -> Result<f64, NormError> {
    let shape = p.layout().groups()[i].shape;
    if shape.as_matrix_dims().0 == 1 || shape.as_matrix_dims().1 == 1 {
        return Ok(p.group(i).iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(linalg::nuclear_norm(&p.group_matrix(i))?)
}
