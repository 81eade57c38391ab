//! Moment-based initialization of the hidden-layer weights.
//!
//! The pipeline splits the data into three parts. The first yields the
//! weight subspace `Û` (top-`K` eigenvectors of a second-order moment), the
//! second the projected third-order moment `R̂₃ = Q̂₃(Û, Û, Û)` whose rank-one
//! decomposition gives the weight directions, and the third the first-order
//! moment `Q̂₁` from which the neuron magnitudes are read off by least
//! squares.
//!
//! Moments are `Q̂_j = (1/n) Σ_i y_i S_j(x_i)` with the mixture scores from
//! [`crate::gmm`]. In population `Q_j = E[∇^(j) H(W*; x)]`, so
//! `Q₁ = Σ_j a_j w̄_j`, `Q₂ = Σ_j b_j w̄_j w̄_jᵀ` and `Q₃ = Σ_j c_j w̄_j^{⊗3}`
//! with `a_j = (z_j/K) E[φ'(w_jᵀx)]`, `b_j ∝ E[φ''(w_jᵀx)]` and
//! `c_j ∝ E[φ'''(w_jᵀx)]`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams};
use crate::network::{Dataset, Weights};
use crate::tensor::{
    least_squares, mode_contract, outer3, sym_eigen_by_magnitude, symmetrize_matrix,
    topk_eigenspace, SymTensor3,
};

/// Which second-order matrix supplies the weight subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceSource {
    /// `Q̂₂` as is.
    SecondMoment,
    /// The slice `Q̂₃(I, I, θ)` with `θ` the normalized `Q̂₁` of the same split.
    ThirdMomentSlice,
    /// Whichever of the two has the larger eigengap `|λ_K| / |λ_{K+1}|`.
    Auto,
}

/// How least-squares coefficients of `Q̂₁` are turned into magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeRule {
    /// Use the coefficients directly as `ẑ`.
    LeastSquares,
    /// Invert `a(z) = (z/K) E[φ'(z w̄ᵀx)]` for each direction.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompConfig {
    pub restarts: usize,
    pub residual_tol: f64,
}

impl Default for DecompConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub decomposition: DecompConfig,
    pub subspace: SubspaceSource,
    pub magnitudes: MagnitudeRule,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            decomposition: DecompConfig::default(),
            subspace: SubspaceSource::Auto,
            magnitudes: MagnitudeRule::Calibrated,
        }
    }
}

/// Output of [`initialize`].
#[derive(Debug, Clone)]
pub struct InitReport {
    pub w0: Weights,
    /// `d x K` orthonormal basis `Û`.
    pub subspace: DMatrix<f64>,
    /// Unit vectors `v̂_j` in `R^K`, one per column.
    pub directions: DMatrix<f64>,
    /// `ẑ`; column `j` of `w0` is `ẑ_j Û v̂_j`.
    pub magnitudes: DVector<f64>,
    /// Least-squares coefficients of `Q̂₁` on the directions.
    pub lstsq_coefficients: DVector<f64>,
    pub diagnostics: InitDiagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct InitDiagnostics {
    pub subspace_source: SubspaceSource,
    /// Eigenvalues of the subspace matrix, by decreasing magnitude.
    pub spectrum: Vec<f64>,
    /// Eigenvalues of `Q̂₂`, by decreasing magnitude.
    pub second_moment_spectrum: Vec<f64>,
    /// `|λ_K| / |λ_{K+1}|` of the subspace matrix (infinite when `K = d`).
    pub eigengap: f64,
    /// Set when `|λ_K|` and `|λ_{K+1}|` agree to 1e-8 relative.
    pub degenerate_spectrum: bool,
    pub decomposition_residual: f64,
    pub decomposition_relative_residual: f64,
    pub lstsq_residual: f64,
    pub lstsq_condition: f64,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    magnitudes: Vec<f64>,
    lstsq_coefficients: Vec<f64>,
    residuals: Residuals,
    spectrum: &'a [f64],
    second_moment_spectrum: &'a [f64],
    subspace_source: SubspaceSource,
    eigengap: f64,
    degenerate_spectrum: bool,
}

#[derive(Serialize)]
struct Residuals {
    decomposition: f64,
    decomposition_relative: f64,
    least_squares: f64,
    least_squares_condition: f64,
}

impl InitReport {
    /// JSON document with `magnitudes`, `residuals` and `spectrum` keys.
    pub fn to_json(&self) -> String {
        let d = &self.diagnostics;
        let doc = ReportDoc {
            magnitudes: self.magnitudes.iter().copied().collect(),
            lstsq_coefficients: self.lstsq_coefficients.iter().copied().collect(),
            residuals: Residuals {
                decomposition: d.decomposition_residual,
                decomposition_relative: d.decomposition_relative_residual,
                least_squares: d.lstsq_residual,
                least_squares_condition: d.lstsq_condition,
            },
            spectrum: &d.spectrum,
            second_moment_spectrum: &d.second_moment_spectrum,
            subspace_source: d.subspace_source,
            eigengap: if d.eigengap.is_finite() { d.eigengap } else { f64::MAX },
            degenerate_spectrum: d.degenerate_spectrum,
        };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }
}

/// Splits the data into three disjoint parts of sizes `⌈n/3⌉`,
/// `⌈(n − ⌈n/3⌉)/2⌉` and the remainder, after a uniform shuffle.
pub fn partition<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Result<[Dataset; 3]> {
    let n = data.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "partition needs at least 3 samples, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let s1 = n.div_ceil(3);
    let s2 = (n - s1).div_ceil(2);
    Ok([
        data.select(&idx[..s1])?,
        data.select(&idx[s1..s1 + s2])?,
        data.select(&idx[s1 + s2..])?,
    ])
}

/// Neumaier-compensated running sums over a fixed-length buffer.
struct CompensatedSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSum {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    fn add(&mut self, values: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn mean(self, n: usize) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.comp)
            .map(|(s, c)| (s + c) / n as f64)
            .collect()
    }
}

/// An empirical moment of order 1, 2 or 3.
#[derive(Debug, Clone, PartialEq)]
pub enum Moment {
    First(DVector<f64>),
    Second(DMatrix<f64>),
    Third(SymTensor3),
}

fn check_moment_input(params: &GmmParams, data: &Dataset) -> Result<()> {
    if params.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mixture has d={}, data has d={}",
            params.dim(),
            data.dim()
        )));
    }
    Ok(())
}

fn positive_samples(data: &Dataset) -> impl Iterator<Item = usize> + '_ {
    data.labels()
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == 1)
        .map(|(i, _)| i)
}

/// `Q̂_j = (1/n) Σ_i y_i S_j(x_i)` for `order ∈ {1, 2, 3}`.
pub fn estimate_moment(params: &GmmParams, data: &Dataset, order: usize) -> Result<Moment> {
    match order {
        1 => first_moment(params, data).map(Moment::First),
        2 => second_moment(params, data).map(Moment::Second),
        3 => third_moment(params, data).map(Moment::Third),
        _ => Err(Error::InvalidInput(format!("moment order {order} not in 1..=3"))),
    }
}

pub fn first_moment(params: &GmmParams, data: &Dataset) -> Result<DVector<f64>> {
    check_moment_input(params, data)?;
    let mut acc = CompensatedSum::new(params.dim());
    for i in positive_samples(data) {
        acc.add(gmm::score1(params, &data.sample(i)).as_slice());
    }
    Ok(DVector::from_vec(acc.mean(data.len())))
}

pub fn second_moment(params: &GmmParams, data: &Dataset) -> Result<DMatrix<f64>> {
    check_moment_input(params, data)?;
    let d = params.dim();
    let mut acc = CompensatedSum::new(d * d);
    for i in positive_samples(data) {
        acc.add(gmm::score2(params, &data.sample(i)).as_slice());
    }
    Ok(symmetrize_matrix(&DMatrix::from_vec(d, d, acc.mean(data.len()))))
}

pub fn third_moment(params: &GmmParams, data: &Dataset) -> Result<SymTensor3> {
    check_moment_input(params, data)?;
    let d = params.dim();
    let mut acc = CompensatedSum::new(d * d * d);
    for i in positive_samples(data) {
        acc.add(gmm::score3(params, &data.sample(i)).as_slice());
    }
    Ok(SymTensor3::from_raw_unchecked(d, acc.mean(data.len())))
}

/// `Q̂₃(I, I, θ)` accumulated slice-wise.
pub fn third_moment_slice(
    params: &GmmParams,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_moment_input(params, data)?;
    let d = params.dim();
    let mut acc = CompensatedSum::new(d * d);
    for i in positive_samples(data) {
        acc.add(gmm::score3_slice(params, &data.sample(i), theta).as_slice());
    }
    Ok(symmetrize_matrix(&DMatrix::from_vec(d, d, acc.mean(data.len()))))
}

/// Top-`K` eigenspace (by eigenvalue magnitude) of a symmetrized matrix.
pub fn extract_subspace(q2: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    topk_eigenspace(&symmetrize_matrix(q2), k)
}

/// Rank-one decomposition result.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Unit vectors, one per column.
    pub directions: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// `‖R − Σ_j c_j v_j^{⊗3}‖_F`.
    pub residual: f64,
    pub restarts_used: usize,
}

fn random_unit<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Fits `c` in `R ≈ Σ_j c_j v_j^{⊗3}` and returns `(c, residual)`.
fn fit_rank_one_weights(r: &SymTensor3, dirs: &DMatrix<f64>) -> Option<(DVector<f64>, f64)> {
    let k = dirs.ncols();
    let len = r.as_slice().len();
    let mut design = DMatrix::zeros(len, k);
    for j in 0..k {
        let t = outer3(&dirs.column(j).into_owned());
        design.set_column(j, &DVector::from_column_slice(t.as_slice()));
    }
    let target = DVector::from_column_slice(r.as_slice());
    let sol = least_squares(&design, &target).ok()?;
    Some((sol.coefficients, sol.residual_norm))
}

/// Right singular vectors of `m` for its `count` smallest singular values.
fn null_vectors(m: DMatrix<f64>, count: usize) -> Option<Vec<DVector<f64>>> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    order[..count]
        .iter()
        .map(|&i| {
            let v = v_t.row(i).transpose();
            let n = v.norm();
            (n > 0.0).then(|| canonical_sign(v / n))
        })
        .collect()
}

/// One real direction per eigenvalue of a (generally non-symmetric) `k x k`
/// matrix: the null vector of `A − λI` for real `λ`, and for a complex pair
/// `a ± bi` the two vectors spanning the null space of `(A − aI)² + b²I`.
fn real_eigenvectors(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = a.nrows();
    let eigenvalues = a.clone().complex_eigenvalues();
    let scale = eigenvalues.iter().map(|e| e.norm()).fold(0.0_f64, f64::max);
    let mut cols = Vec::with_capacity(k);
    for ev in eigenvalues.iter() {
        let id = DMatrix::<f64>::identity(k, k);
        if ev.im.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            cols.extend(null_vectors(a - &id * ev.re, 1)?);
        } else if ev.im > 0.0 {
            let shifted = a - &id * ev.re;
            cols.extend(null_vectors(&shifted * &shifted + id * (ev.im * ev.im), 2)?);
        }
    }
    (cols.len() == k).then(|| DMatrix::from_columns(&cols))
}

/// Decomposes a symmetric `K x K x K` tensor into `K` rank-one terms by
/// simultaneous diagonalization of two random slices, keeping the restart
/// with the smallest reconstruction residual.
pub fn decompose_rank1<R: Rng + ?Sized>(
    r3: &SymTensor3,
    k: usize,
    rng: &mut R,
    cfg: &DecompConfig,
) -> Result<Decomposition> {
    if k == 0 {
        return Err(Error::InvalidInput("rank must be at least 1".into()));
    }
    if r3.dim() != k {
        return Err(Error::DimensionMismatch(format!(
            "tensor dim {} does not match rank {k}",
            r3.dim()
        )));
    }
    if k == 1 {
        let directions = DMatrix::from_element(1, 1, 1.0);
        let c = r3.get(0, 0, 0);
        return Ok(Decomposition {
            directions,
            weights: DVector::from_element(1, c),
            residual: 0.0,
            restarts_used: 0,
        });
    }
    let mut best: Option<Decomposition> = None;
    for restart in 0..cfg.restarts.max(1) {
        let theta_a = random_unit(k, rng);
        let theta_b = random_unit(k, rng);
        let ma = mode_contract(r3, &theta_a)?;
        let mb = mode_contract(r3, &theta_b)?;
        let svd_b = mb.clone().svd(false, false);
        let smax = svd_b.singular_values.max();
        let smin = svd_b.singular_values.min();
        if smin.is_nan() || smin <= 1e-12 * smax {
            continue;
        }
        // (M_b⁻¹ M_a)ᵀ = M_a M_b⁻¹, whose eigenvectors are the components.
        let Some(mb_inv_ma) = mb.lu().solve(&ma) else {
            continue;
        };
        let pencil = mb_inv_ma.transpose();
        let Some(dirs) = real_eigenvectors(&pencil) else {
            continue;
        };
        let Some((weights, residual)) = fit_rank_one_weights(r3, &dirs) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(Decomposition {
                directions: dirs,
                weights,
                residual,
                restarts_used: restart + 1,
            });
        }
    }
    best.ok_or(Error::DecompositionFailed {
        restarts: cfg.restarts,
        best_residual: f64::INFINITY,
    })
}

/// Least-squares coefficients of `Q̂₁` on the columns of `directions`.
pub fn estimate_magnitudes(
    q1: &DVector<f64>,
    directions: &DMatrix<f64>,
) -> Result<crate::tensor::LstsqSolution> {
    least_squares(directions, q1)
}

/// Quadrature step; the integrand is smooth on this scale in either variable.
const LINK_GRID_STEP: f64 = 0.01;
/// Half-width of the integration window, in units where the integrand decays
/// like a standard normal or faster.
const LINK_GRID_HALF_WIDTH: f64 = 40.0;
const LINK_Z_MAX: f64 = 60.0;

fn simpson(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let steps = (((hi - lo) / LINK_GRID_STEP).ceil() as usize).max(2).next_multiple_of(2);
    let h = (hi - lo) / steps as f64;
    let mut total = f(lo) + f(hi);
    for i in 1..steps {
        total += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    total * h / 3.0
}

/// `a(z) = (z/K) E[φ'(z w̄ᵀx)]` for unit `w̄` under the mixture.
///
/// `w̄ᵀx` is a one-dimensional mixture of `N(m_l, 1)` with `m_l = w̄ᵀμ_l`.
/// For `z ≤ 1` the expectation is integrated over `t = w̄ᵀx` directly; for
/// larger `z` the substitution `s = z t` keeps the narrow `φ'` factor
/// resolved: `a(z) = (1/K) Σ_l λ_l ∫ φ'(s) ϕ(s/z − m_l) ds`.
pub fn magnitude_link(params: &GmmParams, direction: &DVector<f64>, k: usize, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let dphi = |s: f64| {
        let sig = crate::network::sigmoid(s);
        sig * (1.0 - sig)
    };
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let normal = |t: f64| inv_sqrt_2pi * (-0.5 * t * t).exp();
    let total: f64 = params
        .weights()
        .iter()
        .zip(params.means().column_iter())
        .map(|(&lambda, mu)| {
            let m = direction.dot(&mu);
            let part = if z <= 1.0 {
                z * simpson(m - 12.0, m + 12.0, |t| dphi(z * t) * normal(t - m))
            } else {
                simpson(-LINK_GRID_HALF_WIDTH, LINK_GRID_HALF_WIDTH, |s| {
                    dphi(s) * normal(s / z - m)
                })
            };
            lambda * part
        })
        .sum();
    total / k as f64
}

/// Fraction of the tabulated maximum of `a` at which out-of-range
/// coefficients are clamped.
const LINK_SATURATION: f64 = 0.95;

/// Smallest `z ≥ 0` with `a(z) = |coefficient|`, signed like the coefficient.
/// Coefficients above `0.95 · max a` are clamped there, since `a` flattens
/// out and its inverse is meaningless near the plateau.
pub fn calibrate_magnitude(
    params: &GmmParams,
    direction: &DVector<f64>,
    k: usize,
    coefficient: f64,
) -> f64 {
    if coefficient == 0.0 {
        return 0.0;
    }
    let link = |z: f64| magnitude_link(params, direction, k, z);
    let grid = 240;
    let dz = LINK_Z_MAX / grid as f64;
    let table: Vec<(f64, f64)> = (0..=grid)
        .map(|i| {
            let z = i as f64 * dz;
            (z, link(z))
        })
        .collect();
    let peak = table.iter().fold(0.0_f64, |m, &(_, a)| m.max(a));
    let target = coefficient.abs().min(LINK_SATURATION * peak);
    let Some(i) = table.iter().position(|&(_, a)| a >= target) else {
        return 0.0;
    };
    if i == 0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (table[i - 1].0, table[i].0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if link(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    coefficient.signum() * 0.5 * (lo + hi)
}

/// Moment estimates feeding the initialization.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    /// `Q̂₁` (third split).
    pub q1: DVector<f64>,
    /// `Q̂₂` (first split).
    pub q2: DMatrix<f64>,
    /// `Q̂₃(I, I, θ)` (first split), used when the subspace source asks for it.
    pub q3_slice: DMatrix<f64>,
    /// `Q̂₃` (second split).
    pub q3: SymTensor3,
}

fn eigengap(spectrum: &DVector<f64>, k: usize) -> f64 {
    if k >= spectrum.len() {
        return f64::INFINITY;
    }
    let (a, b) = (spectrum[k - 1].abs(), spectrum[k].abs());
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Runs the moment pipeline on already-estimated moments.
pub fn initialize_from_moments<R: Rng + ?Sized>(
    moments: &MomentEstimates,
    params: &GmmParams,
    k: usize,
    rng: &mut R,
    cfg: &InitConfig,
) -> Result<InitReport> {
    let d = params.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!("need 1 <= K <= d, got K={k}, d={d}")).at("subspace"));
    }
    let (q2_spec, _) = sym_eigen_by_magnitude(&moments.q2);
    let (slice_spec, _) = sym_eigen_by_magnitude(&moments.q3_slice);
    let source = match cfg.subspace {
        SubspaceSource::Auto => {
            if eigengap(&slice_spec, k) > eigengap(&q2_spec, k) {
                SubspaceSource::ThirdMomentSlice
            } else {
                SubspaceSource::SecondMoment
            }
        }
        s => s,
    };
    let (matrix, spectrum) = match source {
        SubspaceSource::ThirdMomentSlice => (&moments.q3_slice, slice_spec),
        _ => (&moments.q2, q2_spec.clone()),
    };
    let subspace = extract_subspace(matrix, k).map_err(|e| e.at("subspace"))?;
    let gap = eigengap(&spectrum, k);
    let degenerate = k < d && {
        let (a, b) = (spectrum[k - 1].abs(), spectrum[k].abs());
        (a - b).abs() <= 1e-8 * a.max(b).max(f64::MIN_POSITIVE)
    };

    let r3 = crate::tensor::contract_sym(&moments.q3, &subspace).map_err(|e| e.at("projection"))?;
    let decomp = decompose_rank1(&r3, k, rng, &cfg.decomposition).map_err(|e| e.at("decomposition"))?;
    let full_dirs = &subspace * &decomp.directions;

    let lstsq = estimate_magnitudes(&moments.q1, &full_dirs).map_err(|e| e.at("magnitudes"))?;
    let coefficients = lstsq.coefficients.clone();
    let magnitudes = match cfg.magnitudes {
        MagnitudeRule::LeastSquares => coefficients.clone(),
        MagnitudeRule::Calibrated => DVector::from_iterator(
            k,
            (0..k).map(|j| {
                calibrate_magnitude(params, &full_dirs.column(j).into_owned(), k, coefficients[j])
            }),
        ),
    };
    let mut w0 = DMatrix::zeros(d, k);
    for j in 0..k {
        let col = magnitudes[j] * (&subspace * decomp.directions.column(j));
        w0.set_column(j, &col);
    }
    let r3_norm = r3.frobenius_norm();
    Ok(InitReport {
        w0: Weights::new(w0).map_err(|e| e.at("assembly"))?,
        subspace,
        directions: decomp.directions,
        magnitudes,
        lstsq_coefficients: coefficients,
        diagnostics: InitDiagnostics {
            subspace_source: source,
            spectrum: spectrum.iter().copied().collect(),
            second_moment_spectrum: q2_spec.iter().copied().collect(),
            eigengap: gap,
            degenerate_spectrum: degenerate,
            decomposition_residual: decomp.residual,
            decomposition_relative_residual: if r3_norm > 0.0 {
                decomp.residual / r3_norm
            } else {
                0.0
            },
            lstsq_residual: lstsq.residual_norm,
            lstsq_condition: lstsq.condition_number,
        },
    })
}

/// Estimates all moments from a three-way split of `data`.
pub fn estimate_moments<R: Rng + ?Sized>(
    data: &Dataset,
    params: &GmmParams,
    rng: &mut R,
) -> Result<MomentEstimates> {
    let [d1, d2, d3] = partition(data, rng).map_err(|e| e.at("partition"))?;
    let q2 = second_moment(params, &d1).map_err(|e| e.at("second moment"))?;
    let q1_first = first_moment(params, &d1).map_err(|e| e.at("first moment"))?;
    let theta = if q1_first.norm() > 0.0 {
        q1_first.normalize()
    } else {
        DVector::from_element(params.dim(), 1.0 / (params.dim() as f64).sqrt())
    };
    let q3_slice = third_moment_slice(params, &d1, &theta).map_err(|e| e.at("second moment"))?;
    let q3 = third_moment(params, &d2).map_err(|e| e.at("third moment"))?;
    let q1 = first_moment(params, &d3).map_err(|e| e.at("first moment"))?;
    Ok(MomentEstimates {
        q1,
        q2,
        q3_slice,
        q3,
    })
}

/// Full initialization: split, estimate moments, extract the subspace,
/// decompose, and fit magnitudes.
pub fn initialize<R: Rng + ?Sized>(
    data: &Dataset,
    params: &GmmParams,
    k: usize,
    rng: &mut R,
    cfg: &InitConfig,
) -> Result<InitReport> {
    if data.len() < 3 * k {
        return Err(Error::InvalidInput(format!(
            "initialization needs at least 3K = {} samples, got {}",
            3 * k,
            data.len()
        )));
    }
    let moments = estimate_moments(data, params, rng)?;
    initialize_from_moments(&moments, params, k, rng, cfg)
}
