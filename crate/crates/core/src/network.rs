//! One-hidden-layer sigmoid network `H(W; x) = (1/K) Σ_j φ(w_jᵀx)` with a
//! fixed averaging output layer, its cross-entropy risk and the analytic
//! risk gradient.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams};

/// Probability clamp used by the loss and its gradient.
pub const EPS_CLIP: f64 = 1e-12;

/// `d x K` weight matrix; column `j` is the weight vector of hidden neuron `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(DMatrix<f64>);

impl Weights {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidInput("weights need d >= 1 and K >= 1".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight entry".into()));
        }
        Ok(Self(matrix))
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        Self(DMatrix::zeros(d, k))
    }

    /// Entries drawn i.i.d. from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(d: usize, k: usize, scale: f64, rng: &mut R) -> Self {
        Self(DMatrix::from_fn(d, k, |_, _| {
            scale * rng.sample::<f64, _>(rand_distr::StandardNormal)
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    /// Euclidean norms `z_j = ‖w_j‖`.
    pub fn column_norms(&self) -> Vec<f64> {
        self.0.column_iter().map(|c| c.norm()).collect()
    }

    /// `W · P` where column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_neurons(), "permutation length");
        Self(DMatrix::from_columns(
            &perm.iter().map(|&p| self.0.column(p)).collect::<Vec<_>>(),
        ))
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

/// Labeled samples: an `n x d` input matrix and labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<u8>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<u8>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(indices.iter());
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Self::new(x, y)
    }

    /// Writes the columnar text form with header `x_0,…,x_{d-1},y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim())
            .map(|j| format!("x_{j}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{},{}", row.join(","), self.y[i])?;
        }
        Ok(())
    }

    /// Reads the columnar text form. Labels `-1` are mapped to `0`.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("missing header".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let d = cols.len().saturating_sub(1);
        let expected: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
        if d == 0 || cols[d] != "y" || cols[..d] != expected[..] {
            return Err(Error::InvalidInput(format!("unexpected header `{header}`")));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::InvalidInput(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    d + 1
                )));
            }
            for f in &fields[..d] {
                values.push(f.parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("row {}: {e}", lineno + 2))
                })?);
            }
            labels.push(match fields[d] {
                "1" | "+1" => 1,
                "0" | "-1" => 0,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "row {}: label `{other}`",
                        lineno + 2
                    )))
                }
            });
        }
        let n = labels.len();
        Self::new(DMatrix::from_row_slice(n, d, &values), labels)
    }
}

/// Logistic function. Saturates to exactly 0 or 1 without producing NaN.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_dims(w: &Weights, d: usize) {
    assert_eq!(w.dim(), d, "weight rows must match input dimension");
}

/// `H(W; x)`.
pub fn forward(w: &Weights, x: &DVector<f64>) -> f64 {
    check_dims(w, x.len());
    let k = w.n_neurons() as f64;
    w.0.column_iter().map(|c| sigmoid(c.dot(x))).sum::<f64>() / k
}

/// Bernoulli label with success probability `H(W*; x)`.
pub fn sample_label<R: Rng + ?Sized>(wstar: &Weights, x: &DVector<f64>, rng: &mut R) -> u8 {
    let h = forward(wstar, x);
    let u: f64 = rng.random();
    u8::from(u < h)
}

/// Draws `n` inputs from the mixture and labels them with the teacher.
pub fn generate_dataset<R: Rng + ?Sized>(
    params: &GmmParams,
    wstar: &Weights,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if wstar.dim() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "teacher has d={}, mixture has d={}",
            wstar.dim(),
            params.dim()
        )));
    }
    let (x, _) = gmm::sample(params, n, rng);
    let y = (0..n)
        .map(|i| sample_label(wstar, &x.row(i).transpose(), rng))
        .collect();
    Dataset::new(x, y)
}

#[inline]
fn clip(h: f64) -> f64 {
    h.clamp(EPS_CLIP, 1.0 - EPS_CLIP)
}

#[inline]
fn cross_entropy(h: f64, y: u8) -> f64 {
    let h = clip(h);
    if y == 1 {
        -h.ln()
    } else {
        -(1.0 - h).ln()
    }
}

/// Cross-entropy of a single labeled sample.
pub fn loss(w: &Weights, x: &DVector<f64>, y: u8) -> f64 {
    assert!(y <= 1, "labels must be 0 or 1");
    cross_entropy(forward(w, x), y)
}

fn check_data(w: &Weights, data: &Dataset) -> Result<()> {
    if w.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "weights have d={}, data has d={}",
            w.dim(),
            data.dim()
        )));
    }
    Ok(())
}

/// Empirical risk and gradient evaluated together (one pass over the data).
#[derive(Debug, Clone)]
pub struct RiskEval {
    pub risk: f64,
    pub gradient: DMatrix<f64>,
}

/// `f_n(W) = (1/n) Σ_i loss(W; x_i, y_i)`.
pub fn empirical_risk(w: &Weights, data: &Dataset) -> Result<f64> {
    check_data(w, data)?;
    let z = &data.x * &w.0;
    let k = w.n_neurons() as f64;
    let total: f64 = z
        .row_iter()
        .zip(&data.y)
        .map(|(row, &y)| cross_entropy(row.iter().map(|&v| sigmoid(v)).sum::<f64>() / k, y))
        .sum();
    Ok(total / data.len() as f64)
}

/// `∇f_n(W)`; column `j` is
/// `(1/n) Σ_i (H_i − y_i) / (H_i (1 − H_i)) · (1/K) φ'(w_jᵀx_i) x_i`.
pub fn risk_gradient(w: &Weights, data: &Dataset) -> Result<DMatrix<f64>> {
    Ok(risk_and_gradient(w, data)?.gradient)
}

pub fn risk_and_gradient(w: &Weights, data: &Dataset) -> Result<RiskEval> {
    check_data(w, data)?;
    let mut ws = RiskWorkspace::new(data, w.n_neurons());
    let risk = ws.evaluate(w.matrix(), data);
    Ok(RiskEval {
        risk,
        gradient: ws.gradient,
    })
}

/// Reusable buffers for repeated risk/gradient evaluations on one dataset.
#[derive(Debug, Clone)]
pub struct RiskWorkspace {
    act: DMatrix<f64>,
    /// Gradient of the most recent [`RiskWorkspace::evaluate`] call.
    pub gradient: DMatrix<f64>,
}

impl RiskWorkspace {
    pub fn new(data: &Dataset, k: usize) -> Self {
        Self {
            act: DMatrix::zeros(data.len(), k),
            gradient: DMatrix::zeros(data.dim(), k),
        }
    }

    /// Returns `f_n(W)` and leaves `∇f_n(W)` in `self.gradient`. The caller
    /// guarantees the shapes match the ones given at construction.
    pub fn evaluate(&mut self, w: &DMatrix<f64>, data: &Dataset) -> f64 {
        let n = data.len();
        let k = w.ncols();
        self.act.gemm(1.0, &data.x, w, 0.0);
        let scale = 1.0 / (n as f64 * k as f64);
        let mut risk = 0.0;
        for i in 0..n {
            let mut h = 0.0;
            for j in 0..k {
                let s = sigmoid(self.act[(i, j)]);
                self.act[(i, j)] = s;
                h += s;
            }
            h = clip(h / k as f64);
            let y = data.y[i];
            risk += if y == 1 { -h.ln() } else { -(1.0 - h).ln() };
            let coef = (h - f64::from(y)) / (h * (1.0 - h)) * scale;
            for j in 0..k {
                let s = self.act[(i, j)];
                self.act[(i, j)] = coef * s * (1.0 - s);
            }
        }
        self.gradient.gemm_tr(1.0, &data.x, &self.act, 0.0);
        risk / n as f64
    }
}
