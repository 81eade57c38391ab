use mixlearn::tensor_init::{decompose_rank1, DecompConfig};
use mixlearn_bench::{problem, rank_k_tensor, rng};

#[test]
fn problem_shapes() {
    let (params, wstar, data) = problem(6, 2, 50, 1);
    assert_eq!(params.dim(), 6);
    assert_eq!(wstar.matrix().shape(), (6, 2));
    assert_eq!(data.len(), 50);
    assert_eq!(problem(6, 2, 50, 1).2, data);
}

#[test]
fn benchmark_tensor_is_exactly_decomposable() {
    let t = rank_k_tensor(4, 2);
    let dec = decompose_rank1(&t, 4, &mut rng(3), &DecompConfig::default()).unwrap();
    assert!(dec.residual < 1e-8);
}
