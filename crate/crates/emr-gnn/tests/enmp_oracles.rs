//! Propagation oracles: iterated layers against the closed-form solve,
//! the PageRank and averaged-propagation reductions, and the layer's
//! contraction/descent/equivariance invariants.

use emr_gnn::coefficients::{objective, CoefficientVector};
use emr_gnn::enmp::{
    appnp_averaged, closed_form_solve, enmp_layer, gcn_averaged, ppr_matrix, propagate,
    spmm_weighted_sum, CoefficientMode, EnmpHyper,
};
use emr_gnn::graph::{build_graph, normalize, smoothness_score, NormalizedRelation};
use emr_gnn::FeatureMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(
    n: usize,
    r: usize,
    d: usize,
    density: f64,
    seed: u64,
) -> (Vec<NormalizedRelation>, FeatureMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edge_lists = Vec::with_capacity(r);
    for _ in 0..r {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < density {
                    edges.push((i, j));
                }
            }
        }
        edge_lists.push(edges);
    }
    let graph = build_graph(&edge_lists, n).unwrap();
    let h = FeatureMatrix::from_fn(n, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    (normalize(&graph), h)
}

fn iterate_fixed(
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    lambda1: f64,
    steps: usize,
) -> FeatureMatrix {
    let hyper = EnmpHyper {
        coefficient_mode: CoefficientMode::Fixed(mu.clone()),
        ..EnmpHyper::uniform(lambda1, 1)
    };
    let mut z = h.clone();
    for _ in 0..steps {
        let (next, _) = enmp_layer(&z, h, rels, &hyper).unwrap();
        z = next;
    }
    z
}

#[test]
fn three_hundred_iterations_reach_the_closed_form() {
    let (rels, h) = fixture(60, 3, 8, 0.12, 1);
    let mu = CoefficientVector::new(vec![0.5, 0.2, 0.3]).unwrap();
    for lambda1 in [0.5, 2.0, 10.0] {
        let z_star = closed_form_solve(&h, &rels, &mu, lambda1).unwrap();
        let z = iterate_fixed(&h, &rels, &mu, lambda1, 300);
        let err = (z - &z_star).norm() / z_star.norm();
        assert!(err <= 1e-8, "lambda1 {lambda1}: relative error {err:.3e}");
    }
}

#[test]
fn pagerank_route_matches_the_closed_form() {
    for seed in [4u64, 5, 6] {
        let (rels, h) = fixture(40, 2, 5, 0.15, seed);
        let mu = CoefficientVector::new(vec![0.6, 0.4]).unwrap();
        let lambda1 = 2.5;
        let alpha = 1.0 / (1.0 + lambda1);
        let z_star = closed_form_solve(&h, &rels, &mu, lambda1).unwrap();
        let pi = ppr_matrix(&rels, &mu, alpha).unwrap();
        let err = (pi * &h - &z_star).norm() / z_star.norm();
        assert!(err <= 1e-10, "seed {seed}: relative error {err:.3e}");
    }
}

#[test]
fn full_teleport_gives_the_identity_kernel() {
    let (rels, _) = fixture(25, 2, 3, 0.2, 9);
    let mu = CoefficientVector::uniform(2).unwrap();
    let pi = ppr_matrix(&rels, &mu, 1.0).unwrap();
    let err = (pi - FeatureMatrix::identity(25, 25)).norm();
    assert!(err <= 1e-12, "alpha=1 kernel deviates from identity by {err:.3e}");
}

#[test]
fn uniform_propagation_is_averaged_restart_propagation() {
    // λ₁ = 1/α - 1 makes the layer identical to a restart-style
    // averaged propagation step.
    let (rels, h) = fixture(30, 3, 4, 0.15, 10);
    for alpha in [0.1, 0.5] {
        let lambda1 = 1.0 / alpha - 1.0;
        let k = 12;
        let trace = propagate(&h, &rels, &EnmpHyper::uniform(lambda1, k)).unwrap();
        let reference = appnp_averaged(&h, &rels, k, alpha).unwrap();
        let err = (trace.final_z() - &reference)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-10, "alpha {alpha}: elementwise deviation {err:.3e}");
    }
}

#[test]
fn large_anchor_weight_turns_the_layer_into_plain_averaging() {
    let (rels, h) = fixture(30, 3, 4, 0.15, 11);
    let z = FeatureMatrix::from_fn(30, 4, |i, j| ((i * 4 + j) as f64).cos());
    let lambda1 = 1e9;
    let hyper = EnmpHyper::uniform(lambda1, 1);
    let (next, mu) = enmp_layer(&z, &h, &rels, &hyper).unwrap();
    let averaged = gcn_averaged(&z, &rels).unwrap();

    // Direct limit: the layer output approaches the averaged step.
    let rel_err = (&next - &averaged).norm() / averaged.norm();
    assert!(rel_err <= 1e-8, "limit deviation {rel_err:.3e}");

    // Exact extraction: the propagation term itself is the averaged step
    // at any λ₁.
    let beta = lambda1 / (1.0 + lambda1);
    let term = (&next - &h * (1.0 / (1.0 + lambda1))) / beta;
    let term_err = (&term - &averaged).norm() / averaged.norm();
    assert!(term_err <= 1e-10, "extracted term deviation {term_err:.3e}");
    assert_eq!(mu.as_slice(), &[1.0 / 3.0; 3]);
}

#[test]
fn averaged_step_matches_dense_oracle() {
    let (rels, h) = fixture(20, 3, 4, 0.25, 12);
    let fast = gcn_averaged(&h, &rels).unwrap();
    let mut dense_avg = FeatureMatrix::zeros(20, 20);
    for rel in &rels {
        dense_avg += rel.adj_norm().to_dense() / 3.0;
    }
    let err = (fast - dense_avg * &h).norm();
    assert!(err <= 1e-12, "deviation {err:.3e}");
}

#[test]
fn learned_propagation_descends_the_joint_objective() {
    for seed in [13u64, 14, 15] {
        let (rels, h) = fixture(25, 3, 4, 0.2, seed);
        let hyper = EnmpHyper::learned(2.0, 1.0, 8);
        let trace = propagate(&h, &rels, &hyper).unwrap();
        let mut previous = f64::INFINITY;
        for (z, mu) in trace.z_per_layer()[1..].iter().zip(trace.mu_per_layer()) {
            let scores: Vec<f64> = rels
                .iter()
                .map(|rel| smoothness_score(rel, z).unwrap())
                .collect();
            let value = (z - &h).norm_squared() + objective(&scores, 2.0, 1.0, mu);
            assert!(
                value <= previous + 1e-9,
                "seed {seed}: objective rose from {previous} to {value}"
            );
            previous = value;
        }
    }
}

#[test]
fn fixed_coefficient_layer_is_linear_in_its_inputs() {
    let (rels, h1) = fixture(22, 2, 3, 0.2, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h2 = FeatureMatrix::from_fn(22, 3, |_, _| rng.gen::<f64>() - 0.5);
    let mu = CoefficientVector::new(vec![0.3, 0.7]).unwrap();
    let hyper = EnmpHyper {
        coefficient_mode: CoefficientMode::Fixed(mu),
        ..EnmpHyper::uniform(1.5, 1)
    };
    let (a, b) = (1.7, -0.6);
    let combo_h = &h1 * a + &h2 * b;
    let (combined, _) = enmp_layer(&combo_h, &combo_h, &rels, &hyper).unwrap();
    let (z1, _) = enmp_layer(&h1, &h1, &rels, &hyper).unwrap();
    let (z2, _) = enmp_layer(&h2, &h2, &rels, &hyper).unwrap();
    let err = (combined - (z1 * a + z2 * b)).norm();
    assert!(err <= 1e-10, "linearity violation {err:.3e}");
}

#[test]
fn fixed_coefficient_layer_contracts_differences() {
    let (rels, h) = fixture(24, 2, 3, 0.2, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let z1 = FeatureMatrix::from_fn(24, 3, |_, _| rng.gen::<f64>() - 0.5);
    let z2 = FeatureMatrix::from_fn(24, 3, |_, _| rng.gen::<f64>() - 0.5);
    let mu = CoefficientVector::new(vec![0.5, 0.5]).unwrap();
    let lambda1 = 2.0;
    let beta = lambda1 / (1.0 + lambda1);
    let hyper = EnmpHyper {
        coefficient_mode: CoefficientMode::Fixed(mu),
        ..EnmpHyper::uniform(lambda1, 1)
    };
    let (t1, _) = enmp_layer(&z1, &h, &rels, &hyper).unwrap();
    let (t2, _) = enmp_layer(&z2, &h, &rels, &hyper).unwrap();
    let contraction = (t1 - t2).norm() / (&z1 - &z2).norm();
    assert!(
        contraction <= beta + 1e-12,
        "contraction factor {contraction} above beta {beta}"
    );
}

#[test]
fn propagation_is_permutation_equivariant() {
    use rand::seq::SliceRandom;
    let n = 26;
    let (rels, h) = fixture(n, 2, 3, 0.18, 20);
    let hyper = EnmpHyper::learned(2.0, 1.0, 5);
    let base = propagate(&h, &rels, &hyper).unwrap().final_z().clone();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(21));
    let mut edge_lists = Vec::new();
    for rel in &rels {
        let mut edges = Vec::new();
        for i in 0..n {
            for (j, _) in rel.adj_norm().row(i) {
                if i < j {
                    edges.push((perm[i], perm[j]));
                }
            }
        }
        edge_lists.push(edges);
    }
    let permuted_rels = normalize(&build_graph(&edge_lists, n).unwrap());
    let mut h_perm = FeatureMatrix::zeros(n, 3);
    for i in 0..n {
        for j in 0..3 {
            h_perm[(perm[i], j)] = h[(i, j)];
        }
    }
    let permuted = propagate(&h_perm, &permuted_rels, &hyper)
        .unwrap()
        .final_z()
        .clone();
    let mut err = 0.0f64;
    for i in 0..n {
        for j in 0..3 {
            err = err.max((permuted[(perm[i], j)] - base[(i, j)]).abs());
        }
    }
    assert!(err <= 1e-10, "equivariance violation {err:.3e}");
}

#[test]
fn weighted_sum_kernel_matches_dense_oracle() {
    let (rels, h) = fixture(18, 3, 4, 0.25, 22);
    let mu = CoefficientVector::new(vec![0.2, 0.5, 0.3]).unwrap();
    let fast = spmm_weighted_sum(&rels, &mu, &h).unwrap();
    let mut dense = FeatureMatrix::zeros(18, 18);
    for (rel, &w) in rels.iter().zip(mu.as_slice()) {
        dense += rel.adj_norm().to_dense() * w;
    }
    let err = (fast - dense * &h).norm();
    assert!(err <= 1e-12, "deviation {err:.3e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn propagation_norm_never_explodes(
        seed in 0u64..500,
        lambda1 in 0.2f64..8.0,
        k in 1usize..12,
    ) {
        // Each layer is an affine contraction toward H/(1+λ₁); iterates
        // stay inside the ball ||Z|| ≤ ||H||.
        let (rels, h) = fixture(15, 2, 3, 0.25, seed);
        let trace = propagate(&h, &rels, &EnmpHyper::learned(lambda1, 1.0, k)).unwrap();
        for z in trace.z_per_layer() {
            prop_assert!(z.norm() <= h.norm() * (1.0 + 1e-9));
        }
    }
}
