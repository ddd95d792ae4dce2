//! Graph-layer oracles: the sparse kernels against dense
//! reference computations, plus property tests of the normalization
//! invariants.

use emr_gnn::graph::{build_graph, normalize, smoothness_score, spmm, NormalizedRelation};
use emr_gnn::FeatureMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, density: f64, seed: u64) -> (Vec<NormalizedRelation>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    let graph = build_graph(&[edges], n).unwrap();
    (normalize(&graph), rng)
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::from_fn(n, d, |_, _| rng.gen::<f64>() * 4.0 - 2.0)
}

#[test]
fn spmm_matches_dense_multiplication() {
    for seed in 0..5u64 {
        let n = 30 + 7 * seed as usize;
        let (rels, mut rng) = random_graph(n, 0.2, seed);
        let z = random_features(&mut rng, n, 6);
        let sparse = spmm(&rels[0], &z).unwrap();
        let dense = rels[0].adj_norm().to_dense() * &z;
        let err = (sparse - dense).norm();
        assert!(err <= 1e-12, "seed {seed}: spmm deviates from dense by {err:.3e}");
    }
}

#[test]
fn normalized_adjacency_is_self_adjoint_in_the_inner_product() {
    // <A x, y> == <x, A y> for the symmetric normalized operator.
    let (rels, mut rng) = random_graph(50, 0.15, 11);
    let x = random_features(&mut rng, 50, 3);
    let y = random_features(&mut rng, 50, 3);
    let ax = spmm(&rels[0], &x).unwrap();
    let ay = spmm(&rels[0], &y).unwrap();
    let lhs = (ax.transpose() * &y).trace();
    let rhs = (x.transpose() * &ay).trace();
    assert!((lhs - rhs).abs() <= 1e-10, "asymmetry {:.3e}", (lhs - rhs).abs());
}

#[test]
fn smoothness_matches_dense_laplacian_quadratic_form() {
    for seed in [3u64, 4, 5] {
        let n = 40;
        let (rels, mut rng) = random_graph(n, 0.18, seed);
        let z = random_features(&mut rng, n, 5);
        let fast = smoothness_score(&rels[0], &z).unwrap();
        let laplacian = FeatureMatrix::identity(n, n) - rels[0].adj_norm().to_dense();
        let dense = (z.transpose() * laplacian * &z).trace();
        assert!(
            (fast - dense).abs() <= 1e-10 * dense.abs().max(1.0),
            "seed {seed}: {fast} vs dense {dense}"
        );
    }
}

#[test]
fn smoothness_is_nonnegative_on_random_inputs() {
    // I - adj_norm is positive semidefinite.
    for seed in 0..20u64 {
        let (rels, mut rng) = random_graph(25, 0.25, 100 + seed);
        let z = random_features(&mut rng, 25, 4);
        let s = smoothness_score(&rels[0], &z).unwrap();
        assert!(s >= -1e-9, "seed {seed}: smoothness {s} negative");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_invariants_hold(
        n in 2usize..24,
        edges in proptest::collection::vec((0usize..24, 0usize..24), 0..60),
        seed in 0u64..1000,
    ) {
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| (a % n, b % n))
            .collect();
        let graph = build_graph(&[edges], n).unwrap();
        let rels = normalize(&graph);
        let dense = rels[0].adj_norm().to_dense();

        // Exact symmetry.
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(dense[(i, j)], dense[(j, i)]);
            }
        }
        // Positive diagonal: the self-loop guarantees it.
        for i in 0..n {
            prop_assert!(dense[(i, i)] > 0.0);
        }
        // Spectral bound: Rayleigh quotients of random vectors stay in
        // [-1, 1] (up to rounding), so smoothness is in [0, 2]·||z||².
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = FeatureMatrix::from_fn(n, 2, |_, _| rng.gen::<f64>() - 0.5);
        let az = spmm(&rels[0], &z).unwrap();
        let quad = (z.transpose() * &az).trace();
        let norm = z.norm_squared();
        prop_assert!(quad.abs() <= norm * (1.0 + 1e-9));
        let s = smoothness_score(&rels[0], &z).unwrap();
        prop_assert!(s >= -1e-9 && s <= 2.0 * norm + 1e-9);
    }

    #[test]
    fn spmm_is_linear(
        n in 2usize..16,
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let (rels, mut rng) = random_graph(n, 0.3, seed);
        let x = random_features(&mut rng, n, 3);
        let y = random_features(&mut rng, n, 3);
        let combo = spmm(&rels[0], &(&x * a + &y * b)).unwrap();
        let separate = spmm(&rels[0], &x).unwrap() * a + spmm(&rels[0], &y).unwrap() * b;
        prop_assert!((combo - separate).norm() <= 1e-10);
    }
}
