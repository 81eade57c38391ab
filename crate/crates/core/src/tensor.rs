//! Dense vector, matrix and order-3 tensor algebra.
//!
//! Order-3 tensors are stored dense in row-major `(i, j, k)` order. The
//! symmetric variant [`SymTensor3`] is symmetric under every index
//! permutation bit-for-bit: each permutation orbit is written from a single
//! computed value.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative singular-value floor below which a least-squares system is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// A dense, exactly symmetric `m x m x m` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    dim: usize,
    data: Vec<f64>,
}

/// A dense `a x b x c` tensor with no symmetry assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

#[inline]
fn idx(m: usize, i: usize, j: usize, k: usize) -> usize {
    (i * m + j) * m + k
}

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// Builds a tensor by evaluating `f` once per sorted index triple
    /// `i <= j <= k` and copying the value to every permutation.
    pub fn from_sorted_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                for k in j..dim {
                    t.set_orbit(i, j, k, f(i, j, k));
                }
            }
        }
        t
    }

    /// Symmetrizes arbitrary dense `m^3` entries by averaging over the six
    /// index permutations.
    pub fn symmetrize(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for dim {dim}, got {}",
                dim * dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite tensor entry".into()));
        }
        let at = |i, j, k| entries[idx(dim, i, j, k)];
        Ok(Self::from_sorted_fn(dim, |i, j, k| {
            (at(i, j, k) + at(i, k, j) + at(j, i, k) + at(j, k, i) + at(k, i, j) + at(k, j, i))
                / 6.0
        }))
    }

    fn set_orbit(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let m = self.dim;
        for &(a, b, c) in &[(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.data[idx(m, a, b, c)] = v;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[idx(self.dim, i, j, k)]
    }

    /// Raw row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s * other`, entrywise.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "tensor dimension mismatch");
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.dim;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let v = self.get(i, j, k);
                    if v != self.get(i, k, j)
                        || v != self.get(j, i, k)
                        || v != self.get(j, k, i)
                        || v != self.get(k, i, j)
                        || v != self.get(k, j, i)
                    {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub(crate) fn from_raw_unchecked(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim * dim);
        Self { dim, data }
    }
}

impl Tensor3 {
    pub fn zeros(a: usize, b: usize, c: usize) -> Self {
        Self {
            dims: (a, b, c),
            data: vec![0.0; a * b * c],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, b, c) = self.dims;
        self.data[(i * b + j) * c + k]
    }

    #[inline]
    fn get_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let (_, b, c) = self.dims;
        &mut self.data[(i * b + j) * c + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Converts a cubic tensor to a [`SymTensor3`] by averaging permutations.
    pub fn into_symmetric(self) -> Result<SymTensor3> {
        let (a, b, c) = self.dims;
        if a != b || b != c {
            return Err(Error::DimensionMismatch(format!(
                "tensor of dims ({a},{b},{c}) is not cubic"
            )));
        }
        SymTensor3::symmetrize(a, &self.data)
    }
}

/// `v ⊗ v ⊗ v`.
pub fn outer3(v: &DVector<f64>) -> SymTensor3 {
    SymTensor3::from_sorted_fn(v.len(), |i, j, k| v[i] * v[j] * v[k])
}

/// The symmetrized `v ⊗ I` term: `v_i δ_jk + v_j δ_ik + v_k δ_ij`.
pub fn sym_identity_outer(v: &DVector<f64>) -> SymTensor3 {
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    SymTensor3::from_sorted_fn(v.len(), |i, j, k| {
        v[i] * delta(j, k) + v[j] * delta(i, k) + v[k] * delta(i, j)
    })
}

/// Multilinear contraction `T(A, B, C)`:
/// `out[p, q, r] = Σ T[i, j, k] A[i, p] B[j, q] C[k, r]`.
pub fn contract(
    t: &SymTensor3,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<Tensor3> {
    let m = t.dim();
    for (name, x) in [("A", a), ("B", b), ("C", c)] {
        if x.nrows() != m {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {} rows, tensor dim is {m}",
                x.nrows()
            )));
        }
    }
    let (pa, pb, pc) = (a.ncols(), b.ncols(), c.ncols());

    // Mode 3: (m, m, pc)
    let mut t3 = Tensor3::zeros(m, m, pc);
    for i in 0..m {
        for j in 0..m {
            for r in 0..pc {
                let mut s = 0.0;
                for k in 0..m {
                    s += t.get(i, j, k) * c[(k, r)];
                }
                *t3.get_mut(i, j, r) = s;
            }
        }
    }
    // Mode 2: (m, pb, pc)
    let mut t2 = Tensor3::zeros(m, pb, pc);
    for i in 0..m {
        for q in 0..pb {
            for r in 0..pc {
                let mut s = 0.0;
                for j in 0..m {
                    s += t3.get(i, j, r) * b[(j, q)];
                }
                *t2.get_mut(i, q, r) = s;
            }
        }
    }
    // Mode 1: (pa, pb, pc)
    let mut out = Tensor3::zeros(pa, pb, pc);
    for p in 0..pa {
        for q in 0..pb {
            for r in 0..pc {
                let mut s = 0.0;
                for i in 0..m {
                    s += t2.get(i, q, r) * a[(i, p)];
                }
                *out.get_mut(p, q, r) = s;
            }
        }
    }
    Ok(out)
}

/// `T(A, A, A)` returned as an exactly symmetric tensor.
pub fn contract_sym(t: &SymTensor3, a: &DMatrix<f64>) -> Result<SymTensor3> {
    contract(t, a, a, a)?.into_symmetric()
}

/// The slice `T(I, I, θ)`.
pub fn mode_contract(t: &SymTensor3, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = t.dim();
    if theta.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, tensor dim is {m}",
            theta.len()
        )));
    }
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let base = idx(m, i, j, 0);
            let s: f64 = t.data[base..base + m]
                .iter()
                .zip(theta.iter())
                .map(|(x, y)| x * y)
                .sum();
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// `(S + Sᵀ) / 2`.
pub fn symmetrize_matrix(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix with eigenpairs ordered by
/// decreasing absolute eigenvalue.
pub fn sym_eigen_by_magnitude(s: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize_matrix(s));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Orthonormal basis of the eigenvectors belonging to the `k` eigenvalues of
/// largest magnitude.
pub fn topk_eigenspace(s: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let m = s.nrows();
    if s.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, expected square",
            m,
            s.ncols()
        )));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenvectors of a {m}x{m} matrix"
        )));
    }
    let (_, vectors) = sym_eigen_by_magnitude(s);
    Ok(vectors.columns(0, k).into_owned())
}

/// Solution of a dense least-squares problem.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: DVector<f64>,
    pub residual_norm: f64,
    pub condition_number: f64,
}

/// Minimizes `‖b − A α‖²` through the SVD of `A`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LstsqSolution> {
    let (m, k) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "A has {m} rows, b has length {}",
            b.len()
        )));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidInput(format!(
            "least squares needs 1 <= columns <= rows, got {m}x{k}"
        )));
    }
    let svd = SVD::new(a.clone(), true, true);
    let largest = svd.singular_values.max();
    let smallest = svd.singular_values.min();
    if smallest.is_nan() || smallest < RANK_TOL * largest || largest == 0.0 {
        return Err(Error::DegenerateSystem { smallest, largest });
    }
    let coefficients = svd
        .solve(b, 0.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let residual_norm = (b - a * &coefficients).norm();
    Ok(LstsqSolution {
        coefficients,
        residual_norm,
        condition_number: largest / smallest,
    })
}
