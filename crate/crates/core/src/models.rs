//! Homogeneous predictors with analytic gradients.
//!
//! `TwoLayer` computes `f(x; W, u) = Σ_j u_j · max(0, w_j·x)^q`, which is
//! homogeneous of degree `q + 1`. The ReLU subgradient at a zero
//! preactivation is taken to be 0.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::losses::LossSpec;
use crate::params::{Layout, LayoutError, ParamVector, Shape};

/// Samples per reduction chunk; fixes the summation order independently of thread count.
const CHUNK: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: model expects {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid model spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Linear {
        dim: usize,
    },
    TwoLayer {
        dim: usize,
        hidden: usize,
        /// Activation power `q ≥ 1`; 2 is smooth, 1 is plain ReLU.
        power: f64,
        /// Tag the output layer as a `1 × hidden` matrix instead of a vector.
        #[serde(default)]
        output_as_row_matrix: bool,
    },
}

fn relu_pow(a: f64, q: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if q == 1.0 {
        a
    } else if q == 2.0 {
        a * a
    } else {
        a.powf(q)
    }
}

fn relu_pow_prime(a: f64, q: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if q == 1.0 {
        1.0
    } else if q == 2.0 {
        2.0 * a
    } else {
        q * a.powf(q - 1.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            ModelSpec::Linear { dim } if dim == 0 => Err(ModelError::Invalid("dim must be positive".into())),
            ModelSpec::TwoLayer { dim, hidden, power, .. } => {
                if dim == 0 || hidden == 0 {
                    return Err(ModelError::Invalid("dim and hidden must be positive".into()));
                }
                if !(power >= 1.0 && power.is_finite()) {
                    return Err(ModelError::Invalid(format!("activation power must be >= 1, got {power}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::Linear { dim } | ModelSpec::TwoLayer { dim, .. } => dim,
        }
    }

    /// Homogeneity degree `L`.
    pub fn degree(&self) -> f64 {
        match *self {
            ModelSpec::Linear { .. } => 1.0,
            ModelSpec::TwoLayer { power, .. } => power + 1.0,
        }
    }

    pub fn is_smooth(&self) -> bool {
        match *self {
            ModelSpec::Linear { .. } => true,
            ModelSpec::TwoLayer { power, .. } => power > 1.0,
        }
    }

    pub fn layout(&self) -> Result<Arc<Layout>, ModelError> {
        let layout = match *self {
            ModelSpec::Linear { dim } => Layout::new([("theta", Shape::Vector { len: dim })])?,
            ModelSpec::TwoLayer { dim, hidden, output_as_row_matrix, .. } => {
                let out = if output_as_row_matrix {
                    Shape::Matrix { rows: 1, cols: hidden }
                } else {
                    Shape::Vector { len: hidden }
                };
                Layout::new([("W", Shape::Matrix { rows: hidden, cols: dim }), ("u", out)])?
            }
        };
        Ok(Arc::new(layout))
    }

    fn check(&self, theta: &ParamVector, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimMismatch { expected: self.input_dim(), actual: x.len() });
        }
        let expected = self.layout()?;
        if theta.len() != expected.len() {
            return Err(ModelError::DimMismatch { expected: expected.len(), actual: theta.len() });
        }
        Ok(())
    }

    pub fn forward(&self, theta: &ParamVector, x: &[f64]) -> Result<f64, ModelError> {
        self.check(theta, x)?;
        Ok(self.forward_unchecked(theta.as_slice(), x))
    }

    fn forward_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        match *self {
            ModelSpec::Linear { .. } => dot(theta, x),
            ModelSpec::TwoLayer { dim, hidden, power, .. } => {
                let (w, u) = theta.split_at(hidden * dim);
                (0..hidden)
                    .map(|j| u[j] * relu_pow(dot(&w[j * dim..(j + 1) * dim], x), power))
                    .sum()
            }
        }
    }

    /// Analytic gradient of `f(x; θ)` with respect to `θ`.
    pub fn grad(&self, theta: &ParamVector, x: &[f64]) -> Result<ParamVector, ModelError> {
        self.check(theta, x)?;
        let mut out = ParamVector::zeros(theta.layout().clone());
        self.accumulate_grad(theta.as_slice(), x, 1.0, out.as_mut_slice());
        Ok(out)
    }

    /// `out += scale · ∇f(x; θ)`; returns `f(x; θ)`.
    fn accumulate_grad(&self, theta: &[f64], x: &[f64], scale: f64, out: &mut [f64]) -> f64 {
        self.accumulate_weighted(theta, x, out, |_| scale)
    }

    /// Computes `f(x; θ)` once, then adds `weight(f) · ∇f(x; θ)` to `out`.
    fn accumulate_weighted(&self, theta: &[f64], x: &[f64], out: &mut [f64], weight: impl FnOnce(f64) -> f64) -> f64 {
        match *self {
            ModelSpec::Linear { .. } => {
                let f = dot(theta, x);
                let scale = weight(f);
                if scale != 0.0 {
                    out.iter_mut().zip(x).for_each(|(o, xi)| *o += scale * xi);
                }
                f
            }
            ModelSpec::TwoLayer { dim, hidden, power, .. } => {
                let (w, u) = theta.split_at(hidden * dim);
                let pre: Vec<f64> = (0..hidden).map(|j| dot(&w[j * dim..(j + 1) * dim], x)).collect();
                let f: f64 = pre.iter().zip(u).map(|(&a, &uj)| uj * relu_pow(a, power)).sum();
                let scale = weight(f);
                if scale == 0.0 {
                    return f;
                }
                let (gw, gu) = out.split_at_mut(hidden * dim);
                for j in 0..hidden {
                    gu[j] += scale * relu_pow(pre[j], power);
                    let d = relu_pow_prime(pre[j], power);
                    if d != 0.0 {
                        let c = scale * u[j] * d;
                        gw[j * dim..(j + 1) * dim].iter_mut().zip(x).for_each(|(o, xi)| *o += c * xi);
                    }
                }
                f
            }
        }
    }

    /// Per-sample margins `z_i = y_i f(x_i; θ)`.
    pub fn margins(&self, theta: &ParamVector, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        self.check(theta, data.x(0))?;
        Ok((0..data.len())
            .map(|i| data.y(i) * self.forward_unchecked(theta.as_slice(), data.x(i)))
            .collect())
    }

    /// Signs of all hidden preactivations, sample-major; empty for linear models.
    pub fn preactivation_signs(&self, theta: &ParamVector, data: &Dataset) -> Vec<i8> {
        let ModelSpec::TwoLayer { dim, hidden, .. } = *self else {
            return Vec::new();
        };
        let w = &theta.as_slice()[..hidden * dim];
        let mut out = Vec::with_capacity(data.len() * hidden);
        for i in 0..data.len() {
            for j in 0..hidden {
                let a = dot(&w[j * dim..(j + 1) * dim], data.x(i));
                out.push(if a > 0.0 { 1 } else if a < 0.0 { -1 } else { 0 });
            }
        }
        out
    }

    /// Draws `N(0, 2/fan_in)` entries per group, multiplied by `alpha`.
    pub fn init_kaiming_times_alpha(&self, alpha: f64, seed: u64) -> Result<ParamVector, ModelError> {
        let layout = self.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = ParamVector::zeros(layout.clone());
        for gi in 0..layout.groups().len() {
            let fan_in = match (self, gi) {
                (ModelSpec::Linear { dim }, _) => *dim,
                (ModelSpec::TwoLayer { dim, .. }, 0) => *dim,
                (ModelSpec::TwoLayer { hidden, .. }, _) => *hidden,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in theta.group_mut(gi) {
                *v = alpha * normal.sample(&mut rng);
            }
        }
        Ok(theta)
    }
}

/// Loss value, margins and gradient at one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub margins: Vec<f64>,
    pub loss: f64,
    pub log_loss: f64,
    pub grad: ParamVector,
}

/// One pass over the data: margins, `L(θ)`, and `∇L(θ) = Σ_i ℓ'(z_i) y_i ∇f(x_i; θ)`.
///
/// Samples are processed in fixed-size chunks whose partial sums are added in
/// chunk order, so the result does not depend on the thread count.
pub fn evaluate(model: &ModelSpec, loss: LossSpec, theta: &ParamVector, data: &Dataset) -> Result<Evaluation, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    model.check(theta, data.x(0))?;
    let p = theta.len();
    let n_chunks = data.len().div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; p];
            let mut z = Vec::with_capacity(CHUNK);
            for i in c * CHUNK..((c + 1) * CHUNK).min(data.len()) {
                let y = data.y(i);
                let f = model.accumulate_weighted(theta.as_slice(), data.x(i), &mut g, |f| loss.loss_derivative(y * f) * y);
                z.push(y * f);
            }
            (z, g)
        })
        .collect();
    let mut grad = vec![0.0; p];
    let mut margins = Vec::with_capacity(data.len());
    for (z, g) in partials {
        margins.extend(z);
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok(Evaluation {
        loss: loss.total_loss(&margins),
        log_loss: loss.log_total_loss(&margins),
        margins,
        grad: ParamVector::from_vec(theta.layout().clone(), grad)?,
    })
}

pub fn loss_gradient(model: &ModelSpec, loss: LossSpec, theta: &ParamVector, data: &Dataset) -> Result<ParamVector, ModelError> {
    Ok(evaluate(model, loss, theta, data)?.grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer(hidden: usize, dim: usize, power: f64) -> ModelSpec {
        ModelSpec::TwoLayer { dim, hidden, power, output_as_row_matrix: false }
    }

    #[test]
    fn forward_examples() {
        let lin = ModelSpec::Linear { dim: 2 };
        let theta = ParamVector::from_vec(lin.layout().unwrap(), vec![1.0, 2.0]).unwrap();
        assert_eq!(lin.forward(&theta, &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(lin.grad(&theta, &[3.0, 4.0]).unwrap().as_slice(), &[3.0, 4.0]);

        let net = two_layer(1, 2, 2.0);
        let theta = ParamVector::from_vec(net.layout().unwrap(), vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(net.forward(&theta, &[2.0, 0.0]).unwrap(), 4.0);
        assert_eq!(net.forward(&theta.scaled(2.0), &[2.0, 0.0]).unwrap(), 32.0);
        // ∂u = 4, ∂w = u·2·a·x = 1·2·2·(2,0)
        assert_eq!(net.grad(&theta, &[2.0, 0.0]).unwrap().as_slice(), &[8.0, 0.0, 4.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let net = two_layer(1, 2, 1.0);
        let theta = ParamVector::from_vec(net.layout().unwrap(), vec![1.0, -1.0, 3.0]).unwrap();
        let g = net.grad(&theta, &[1.0, 1.0]).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_errors() {
        let net = two_layer(2, 3, 2.0);
        let theta = ParamVector::zeros(net.layout().unwrap());
        assert!(matches!(net.forward(&theta, &[1.0]), Err(ModelError::DimMismatch { .. })));
        let wrong = ParamVector::flat(vec![0.0; 4]);
        assert!(net.forward(&wrong, &[1.0, 2.0, 3.0]).is_err());
        assert!(two_layer(2, 3, 0.5).validate().is_err());
    }

    #[test]
    fn loss_gradient_examples() {
        let lin = ModelSpec::Linear { dim: 2 };
        let theta = ParamVector::zeros(lin.layout().unwrap());
        let one = Dataset::new(vec![1.0, 2.0], vec![1.0], 2, "t", 0).unwrap();
        let g = loss_gradient(&lin, LossSpec::Exponential, &theta, &one).unwrap();
        assert_eq!(g.as_slice(), &[-1.0, -2.0]);
        let two = Dataset::new(vec![1.0, 2.0, 1.0, 2.0], vec![1.0, 1.0], 2, "t", 0).unwrap();
        let g2 = loss_gradient(&lin, LossSpec::Exponential, &theta, &two).unwrap();
        assert_eq!(g2.as_slice(), &[-2.0, -4.0]);
        let empty = Dataset::new(vec![], vec![], 2, "t", 0).unwrap();
        assert!(matches!(loss_gradient(&lin, LossSpec::Exponential, &theta, &empty), Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn evaluation_is_thread_count_independent() {
        let net = two_layer(4, 3, 2.0);
        let data = crate::data::synth_separable(100, 3, 0.1, 1).unwrap();
        let theta = net.init_kaiming_times_alpha(1.0, 5).unwrap();
        let a = evaluate(&net, LossSpec::Logistic, &theta, &data).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| evaluate(&net, LossSpec::Logistic, &theta, &data).unwrap());
        assert_eq!(a.grad.as_slice(), b.grad.as_slice());
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }

    #[test]
    fn init_scale_and_determinism() {
        let net = two_layer(64, 50, 2.0);
        let a = net.init_kaiming_times_alpha(0.01, 3).unwrap();
        assert_eq!(a, net.init_kaiming_times_alpha(0.01, 3).unwrap());
        let w = a.group(0);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let want = 1e-4 * 2.0 / 50.0;
        assert!((var / want - 1.0).abs() < 0.1, "{var} vs {want}");
    }
}
