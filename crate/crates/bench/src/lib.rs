//! Seeded inputs shared by the benchmarks.

use mixlearn::network::generate_dataset;
use mixlearn::tensor::outer3;
use mixlearn::{Dataset, GmmParams, SymTensor3, Weights};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Symmetric two-component mixture, a standard-normal teacher and `n`
/// labeled samples.
pub fn problem(d: usize, k: usize, n: usize, seed: u64) -> (GmmParams, Weights, Dataset) {
    let mut r = rng(seed);
    let params = GmmParams::symmetric_pair(d, 0.5).expect("valid mixture");
    let wstar = Weights::random(d, k, 1.0, &mut r);
    let data = generate_dataset(&params, &wstar, n, &mut r).expect("valid sizes");
    (params, wstar, data)
}

/// `Σ_j (j + 1) v_j^{⊗3}` over the columns of a random orthonormal `k x k`
/// basis.
pub fn rank_k_tensor(k: usize, seed: u64) -> SymTensor3 {
    let mut r = rng(seed);
    let a = Weights::random(k, k, 1.0, &mut r).into_matrix();
    let q: DMatrix<f64> = a.qr().q();
    let mut t = SymTensor3::zeros(k);
    for j in 0..k {
        let v: DVector<f64> = q.column(j).into_owned();
        t = t.add_scaled((j + 1) as f64, &outer3(&v));
    }
    t
}
