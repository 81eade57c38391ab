//! Gaussian-mixture input model with identity covariances.
//!
//! Besides sampling and the log-density, this module provides the score-like
//! ratios `S_j(x) = (-1)^j ∇^(j) p(x) / p(x)` for `j = 1, 2, 3`. All of them
//! are evaluated through the posterior responsibilities
//! `w_l(x) = λ_l N(x; μ_l, I) / p(x)`, so `p(x)` itself is never divided by.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{outer3, sym_identity_outer, SymTensor3};

const SIMPLEX_TOL: f64 = 1e-12;

/// Mixture weights `λ` and component means `μ_l` (stored as columns of a
/// `d x L` matrix). Covariances are the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: DMatrix<f64>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if weights.len() != means.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights but {} means",
                weights.len(),
                means.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidInput(format!("mixture weight {w} outside [0, 1]")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if means.iter().any(|m| m.len() != d) {
            return Err(Error::DimensionMismatch("means have unequal lengths".into()));
        }
        if means.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("non-finite mean entry".into()));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
            means: DMatrix::from_columns(&means),
        })
    }

    /// Two equally weighted components at `±c·𝟙`.
    pub fn symmetric_pair(dim: usize, c: f64) -> Result<Self> {
        Self::new(
            vec![0.5, 0.5],
            vec![DVector::from_element(dim, c), DVector::from_element(dim, -c)],
        )
    }

    /// A single standard Gaussian `N(0, I_d)`.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![1.0], vec![DVector::zeros(dim)])
    }

    pub fn dim(&self) -> usize {
        self.means.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Means as the columns of a `d x L` matrix.
    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn mean(&self, l: usize) -> DVector<f64> {
        self.means.column(l).into_owned()
    }

    fn check_point(&self, x: &DVector<f64>) {
        assert_eq!(x.len(), self.dim(), "point dimension does not match mixture");
    }

    /// Per-component `log λ_l - ½‖x − μ_l‖²` (normalizer omitted).
    fn component_logits(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.n_components())
            .map(|l| {
                let sq: f64 = self
                    .means
                    .column(l)
                    .iter()
                    .zip(x.iter())
                    .map(|(m, v)| (v - m) * (v - m))
                    .sum();
                self.log_weights[l] - 0.5 * sq
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|a| (a - max).exp()).sum::<f64>().ln()
}

/// Draws `n` points; returns the `n x d` sample matrix and the component
/// index of each row.
pub fn sample<R: Rng + ?Sized>(
    params: &GmmParams,
    n: usize,
    rng: &mut R,
) -> (DMatrix<f64>, Vec<usize>) {
    let d = params.dim();
    let last_positive = params
        .weights()
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(0);
    let mut x = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = last_positive;
        for (l, &w) in params.weights().iter().enumerate() {
            acc += w;
            if w > 0.0 && u < acc {
                comp = l;
                break;
            }
        }
        let mu = params.means().column(comp);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = mu[j] + z;
        }
        labels.push(comp);
    }
    (x, labels)
}

/// `log p(x)` via log-sum-exp.
pub fn log_density(params: &GmmParams, x: &DVector<f64>) -> f64 {
    params.check_point(x);
    let norm = -0.5 * params.dim() as f64 * (2.0 * std::f64::consts::PI).ln();
    norm + log_sum_exp(&params.component_logits(x))
}

/// Posterior component probabilities `w_l(x)`.
pub fn responsibilities(params: &GmmParams, x: &DVector<f64>) -> DVector<f64> {
    params.check_point(x);
    let logits = params.component_logits(x);
    let lse = log_sum_exp(&logits);
    DVector::from_iterator(logits.len(), logits.iter().map(|a| (a - lse).exp()))
}

/// `S₁(x) = −∇p / p = Σ_l w_l (x − μ_l)`.
pub fn score1(params: &GmmParams, x: &DVector<f64>) -> DVector<f64> {
    let w = responsibilities(params, x);
    x - params.means() * w
}

/// `S₂(x) = ∇²p / p = Σ_l w_l [(x − μ_l)(x − μ_l)ᵀ − I]`.
pub fn score2(params: &GmmParams, x: &DVector<f64>) -> DMatrix<f64> {
    let w = responsibilities(params, x);
    let d = params.dim();
    let mut out = DMatrix::zeros(d, d);
    for (l, &wl) in w.iter().enumerate() {
        if wl == 0.0 {
            continue;
        }
        let u = x - params.means().column(l);
        for i in 0..d {
            for j in i..d {
                let v = wl * (u[i] * u[j]);
                out[(i, j)] += v;
                if j != i {
                    out[(j, i)] += v;
                }
            }
        }
    }
    for i in 0..d {
        out[(i, i)] -= 1.0;
    }
    out
}

/// `S₃(x) = −∇³p / p = Σ_l w_l [u_l⊗u_l⊗u_l − sym(u_l ⊗ I)]`, `u_l = x − μ_l`.
pub fn score3(params: &GmmParams, x: &DVector<f64>) -> SymTensor3 {
    let w = responsibilities(params, x);
    let d = params.dim();
    let mut out = SymTensor3::zeros(d);
    for (l, &wl) in w.iter().enumerate() {
        if wl == 0.0 {
            continue;
        }
        let u = x - params.means().column(l);
        let term = outer3(&u).add_scaled(-1.0, &sym_identity_outer(&u));
        out = out.add_scaled(wl, &term);
    }
    out
}

/// The slice `S₃(x)(I, I, θ)` computed without forming the full tensor:
/// `Σ_l w_l [(u_lᵀθ)(u_l u_lᵀ − I) − u_l θᵀ − θ u_lᵀ]`.
pub fn score3_slice(params: &GmmParams, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    assert_eq!(theta.len(), params.dim(), "slice direction dimension");
    let w = responsibilities(params, x);
    let d = params.dim();
    let mut out = DMatrix::zeros(d, d);
    for (l, &wl) in w.iter().enumerate() {
        if wl == 0.0 {
            continue;
        }
        let u = x - params.means().column(l);
        let ut = u.dot(theta);
        for i in 0..d {
            for j in i..d {
                let mut v = ut * (u[i] * u[j]) - (u[i] * theta[j] + theta[i] * u[j]);
                if i == j {
                    v -= ut;
                }
                let v = wl * v;
                out[(i, j)] += v;
                if j != i {
                    out[(j, i)] += v;
                }
            }
        }
    }
    out
}
