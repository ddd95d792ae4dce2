//! Ensemble message passing: the RCL + Pro layer, the K-layer propagation
//! driver, and dense oracles (closed-form solve, personalized PageRank,
//! averaged-graph reductions) used for equivalence checks.

use crate::coefficients::{emda_solve_from, CoefficientVector, RclSettings};
use crate::error::{EmrError, Result};
use crate::graph::{smoothness_score, spmm, NormalizedRelation};
use crate::FeatureMatrix;

/// Dense oracles refuse graphs above this node count by default.
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// How each layer obtains its relational coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientMode {
    /// Solve the coefficient subproblem from the current smoothness scores.
    Learned,
    /// Keep the uniform vector `[1/R, ...]` at every layer.
    Uniform,
    /// Use the given vector at every layer, no solving.
    Fixed(CoefficientVector),
}

/// Propagation hyperparameters shared by the layer and driver.
#[derive(Debug, Clone, PartialEq)]
pub struct EnmpHyper {
    /// Trade-off between feature fitting and smoothness; must be positive.
    pub lambda1: f64,
    /// Coefficient regularization strength; nonnegative.
    pub lambda2: f64,
    /// Number of layers `K`, at least 1.
    pub k: usize,
    /// Mirror-descent controls for the learned mode.
    pub rcl: RclSettings,
    pub coefficient_mode: CoefficientMode,
}

impl EnmpHyper {
    /// Learned-mode hyperparameters with default solver settings.
    pub fn learned(lambda1: f64, lambda2: f64, k: usize) -> Self {
        EnmpHyper {
            lambda1,
            lambda2,
            k,
            rcl: RclSettings::default(),
            coefficient_mode: CoefficientMode::Learned,
        }
    }

    /// Uniform-coefficient variant of the same schedule.
    pub fn uniform(lambda1: f64, k: usize) -> Self {
        EnmpHyper {
            lambda1,
            lambda2: 0.0,
            k,
            rcl: RclSettings::default(),
            coefficient_mode: CoefficientMode::Uniform,
        }
    }

    pub fn validate(&self, relation_count: usize) -> Result<()> {
        if !(self.lambda1 > 0.0) {
            return Err(EmrError::invalid(format!(
                "lambda1 must be > 0, got {}",
                self.lambda1
            )));
        }
        if !(self.lambda2 >= 0.0) {
            return Err(EmrError::invalid(format!(
                "lambda2 must be >= 0, got {}",
                self.lambda2
            )));
        }
        if self.k == 0 {
            return Err(EmrError::invalid("layer count K must be at least 1"));
        }
        if let CoefficientMode::Fixed(mu) = &self.coefficient_mode {
            if mu.len() != relation_count {
                return Err(EmrError::ShapeMismatch {
                    context: "fixed coefficient mode",
                    expected: format!("{relation_count} coefficients"),
                    got: format!("{}", mu.len()),
                });
            }
        }
        Ok(())
    }

    /// Teleport probability of the equivalent PageRank scheme.
    pub fn alpha(&self) -> f64 {
        1.0 / (1.0 + self.lambda1)
    }
}

/// Z and μ snapshots across one propagation run: `K + 1` feature matrices
/// (including the input) and `K` coefficient vectors.
#[derive(Debug, Clone)]
pub struct PropagationTrace {
    z_per_layer: Vec<FeatureMatrix>,
    mu_per_layer: Vec<CoefficientVector>,
}

impl PropagationTrace {
    pub fn z_per_layer(&self) -> &[FeatureMatrix] {
        &self.z_per_layer
    }

    pub fn mu_per_layer(&self) -> &[CoefficientVector] {
        &self.mu_per_layer
    }

    /// Output of the last layer.
    pub fn final_z(&self) -> &FeatureMatrix {
        self.z_per_layer.last().expect("trace holds K+1 snapshots")
    }

    /// μ of the last layer.
    pub fn final_mu(&self) -> &CoefficientVector {
        self.mu_per_layer.last().expect("trace holds K vectors")
    }

    /// Coordinate-wise mean of the per-layer μ vectors.
    pub fn mean_mu(&self) -> CoefficientVector {
        let r = self.mu_per_layer[0].len();
        let k = self.mu_per_layer.len() as f64;
        let mut acc = vec![0.0; r];
        for mu in &self.mu_per_layer {
            for (a, m) in acc.iter_mut().zip(mu.as_slice()) {
                *a += m / k;
            }
        }
        // Round-off from the averaging is within the simplex tolerance.
        CoefficientVector::new(acc).expect("mean of simplex points")
    }
}

fn check_rels(rels: &[NormalizedRelation]) -> Result<usize> {
    let n = match rels.first() {
        Some(rel) => rel.n(),
        None => return Err(EmrError::invalid("at least one relation required")),
    };
    if rels.iter().any(|rel| rel.n() != n) {
        return Err(EmrError::invalid("relations disagree on node count"));
    }
    Ok(n)
}

fn check_shape(context: &'static str, m: &FeatureMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(EmrError::ShapeMismatch {
            context,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// Solve or select the layer's coefficients from the current Z.
fn rcl_step(
    z: &FeatureMatrix,
    rels: &[NormalizedRelation],
    hyper: &EnmpHyper,
    warm: Option<&CoefficientVector>,
) -> Result<CoefficientVector> {
    match &hyper.coefficient_mode {
        CoefficientMode::Uniform => CoefficientVector::uniform(rels.len()),
        CoefficientMode::Fixed(mu) => Ok(mu.clone()),
        CoefficientMode::Learned => {
            let scores: Vec<f64> = rels
                .iter()
                .map(|rel| smoothness_score(rel, z))
                .collect::<Result<_>>()?;
            // Finite Z can still overflow the quadratic forms; that is a
            // numerical failure of the pipeline, not a caller error.
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(EmrError::numerical("smoothness scores overflowed"));
            }
            let init = match warm {
                Some(prev) if hyper.rcl.warm_start => prev.clone(),
                _ => CoefficientVector::uniform(rels.len())?,
            };
            emda_solve_from(&scores, hyper.lambda1, hyper.lambda2, &hyper.rcl, init)
        }
    }
}

/// `Σ μ_r adj_norm_r G` without materializing the summed operator. The
/// normalized adjacencies are symmetric, so this is also the adjoint of
/// the layer's propagation term; backward passes rely on that.
pub fn spmm_weighted_sum(
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    g: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    let n = check_rels(rels)?;
    if mu.len() != rels.len() {
        return Err(EmrError::invalid(format!(
            "{} coefficients for {} relations",
            mu.len(),
            rels.len()
        )));
    }
    check_shape("spmm_weighted_sum G", g, n, g.ncols())?;
    let mut out = FeatureMatrix::zeros(g.nrows(), g.ncols());
    for (rel, &m) in rels.iter().zip(mu.as_slice()) {
        if m == 0.0 {
            continue;
        }
        out += spmm(rel, g)? * m;
    }
    Ok(out)
}

/// The coefficient-weighted propagation update
/// `H/(1+λ₁) + (λ₁/(1+λ₁)) Σ μ_r adj_norm_r Z`, accumulated relation by
/// relation without materializing the summed operator.
fn pro_step(
    z: &FeatureMatrix,
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    lambda1: f64,
    mu: &CoefficientVector,
) -> Result<FeatureMatrix> {
    let beta = lambda1 / (1.0 + lambda1);
    let mut out = h * (1.0 / (1.0 + lambda1));
    for (rel, &m) in rels.iter().zip(mu.as_slice()) {
        if m == 0.0 {
            continue;
        }
        out += spmm(rel, z)? * (beta * m);
    }
    Ok(out)
}

/// One ensemble message-passing layer: RCL step (coefficients from the
/// current Z), then Pro step. Returns the updated features and the μ used.
pub fn enmp_layer(
    z: &FeatureMatrix,
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    hyper: &EnmpHyper,
) -> Result<(FeatureMatrix, CoefficientVector)> {
    enmp_layer_warm(z, h, rels, hyper, None)
}

fn enmp_layer_warm(
    z: &FeatureMatrix,
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    hyper: &EnmpHyper,
    warm: Option<&CoefficientVector>,
) -> Result<(FeatureMatrix, CoefficientVector)> {
    let n = check_rels(rels)?;
    hyper.validate(rels.len())?;
    check_shape("enmp_layer H", h, n, h.ncols())?;
    check_shape("enmp_layer Z", z, n, h.ncols())?;
    let mu = rcl_step(z, rels, hyper, warm)?;
    let next = pro_step(z, h, rels, hyper.lambda1, &mu)?;
    Ok((next, mu))
}

/// Run `K` layers from `Z⁰ = H`, recording every Z and μ snapshot.
pub fn propagate(
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    hyper: &EnmpHyper,
) -> Result<PropagationTrace> {
    let n = check_rels(rels)?;
    hyper.validate(rels.len())?;
    check_shape("propagate H", h, n, h.ncols())?;
    let mut z_per_layer = Vec::with_capacity(hyper.k + 1);
    let mut mu_per_layer = Vec::with_capacity(hyper.k);
    z_per_layer.push(h.clone());
    for _ in 0..hyper.k {
        let (next, mu) = enmp_layer_warm(
            z_per_layer.last().expect("nonempty trace"),
            h,
            rels,
            hyper,
            mu_per_layer.last(),
        )?;
        z_per_layer.push(next);
        mu_per_layer.push(mu);
    }
    Ok(PropagationTrace {
        z_per_layer,
        mu_per_layer,
    })
}

/// Dense composite operator `I - (λ₁/(1+λ₁)) Σ μ_r adj_norm_r`.
fn dense_system_matrix(
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    beta: f64,
) -> FeatureMatrix {
    let n = rels[0].n();
    let mut m = FeatureMatrix::identity(n, n);
    for (rel, &w) in rels.iter().zip(mu.as_slice()) {
        if w == 0.0 {
            continue;
        }
        let scale = beta * w;
        for i in 0..n {
            for (j, v) in rel.adj_norm().row(i) {
                m[(i, j)] -= scale * v;
            }
        }
    }
    m
}

/// Exact minimizer of the fixed-μ propagation objective:
/// `(1/(1+λ₁)) (I - (λ₁/(1+λ₁)) Σ μ_r adj_norm_r)^{-1} H` via a dense LU
/// solve (no explicit inverse), with a residual check at 1e-10.
pub fn closed_form_solve(
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    lambda1: f64,
) -> Result<FeatureMatrix> {
    closed_form_solve_with_cap(h, rels, mu, lambda1, DEFAULT_DENSE_CAP)
}

/// [`closed_form_solve`] with an explicit dense-size cap.
pub fn closed_form_solve_with_cap(
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    lambda1: f64,
    dense_cap: usize,
) -> Result<FeatureMatrix> {
    let n = check_rels(rels)?;
    if n > dense_cap {
        return Err(EmrError::DenseCapExceeded { n, cap: dense_cap });
    }
    if !(lambda1 > 0.0) {
        return Err(EmrError::invalid(format!("lambda1 must be > 0, got {lambda1}")));
    }
    if mu.len() != rels.len() {
        return Err(EmrError::ShapeMismatch {
            context: "closed_form_solve coefficients",
            expected: format!("{} coefficients", rels.len()),
            got: format!("{}", mu.len()),
        });
    }
    check_shape("closed_form_solve H", h, n, h.ncols())?;
    let beta = lambda1 / (1.0 + lambda1);
    let m = dense_system_matrix(rels, mu, beta);
    let rhs = h * (1.0 / (1.0 + lambda1));
    let z = m
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EmrError::numerical("singular propagation system, indicates a bug"))?;
    // Residual of the unscaled system (I + λ₁ Σ μ_r laplacian_r) Z = H.
    let residual = (&m * &z * (1.0 + lambda1) - h).norm();
    let scale = h.norm();
    let rel_residual = if scale > 0.0 { residual / scale } else { residual };
    if !(rel_residual <= 1e-10) {
        return Err(EmrError::numerical(format!(
            "closed-form solve residual {rel_residual:.3e} above 1e-10"
        )));
    }
    Ok(z)
}

/// Multi-relational personalized PageRank matrix
/// `α (I - (1-α) Σ μ_r adj_norm_r)^{-1}` as a dense matrix.
pub fn ppr_matrix(
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    alpha: f64,
) -> Result<FeatureMatrix> {
    ppr_matrix_with_cap(rels, mu, alpha, DEFAULT_DENSE_CAP)
}

/// [`ppr_matrix`] with an explicit dense-size cap.
pub fn ppr_matrix_with_cap(
    rels: &[NormalizedRelation],
    mu: &CoefficientVector,
    alpha: f64,
    dense_cap: usize,
) -> Result<FeatureMatrix> {
    let n = check_rels(rels)?;
    if n > dense_cap {
        return Err(EmrError::DenseCapExceeded { n, cap: dense_cap });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EmrError::invalid(format!(
            "teleport probability must be in (0, 1], got {alpha}"
        )));
    }
    if mu.len() != rels.len() {
        return Err(EmrError::ShapeMismatch {
            context: "ppr_matrix coefficients",
            expected: format!("{} coefficients", rels.len()),
            got: format!("{}", mu.len()),
        });
    }
    let m = dense_system_matrix(rels, mu, 1.0 - alpha);
    let pi = m
        .lu()
        .solve(&FeatureMatrix::identity(n, n))
        .ok_or_else(|| EmrError::numerical("singular PageRank system, indicates a bug"))?;
    Ok(pi * alpha)
}

/// APPNP on the relation-averaged graph: `K` iterations of
/// `Z ← α H + (1-α) (1/R) Σ adj_norm_r Z` from `Z⁰ = H`.
pub fn appnp_averaged(
    h: &FeatureMatrix,
    rels: &[NormalizedRelation],
    k: usize,
    alpha: f64,
) -> Result<FeatureMatrix> {
    let n = check_rels(rels)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EmrError::invalid(format!(
            "teleport probability must be in (0, 1], got {alpha}"
        )));
    }
    if k == 0 {
        return Err(EmrError::invalid("iteration count K must be at least 1"));
    }
    check_shape("appnp_averaged H", h, n, h.ncols())?;
    let mut z = h.clone();
    for _ in 0..k {
        let mut next = h * alpha;
        next += gcn_averaged(&z, rels)? * (1.0 - alpha);
        z = next;
    }
    Ok(z)
}

/// One GCN step on the relation-averaged graph: `(1/R) Σ adj_norm_r Z`.
pub fn gcn_averaged(z: &FeatureMatrix, rels: &[NormalizedRelation]) -> Result<FeatureMatrix> {
    let n = check_rels(rels)?;
    check_shape("gcn_averaged Z", z, n, z.ncols())?;
    let scale = 1.0 / rels.len() as f64;
    let mut out = FeatureMatrix::zeros(z.nrows(), z.ncols());
    for rel in rels {
        out += spmm(rel, z)? * scale;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, normalize};
    use nalgebra::dmatrix;

    fn identity_rels(n: usize, r: usize) -> Vec<NormalizedRelation> {
        let lists = vec![Vec::new(); r];
        normalize(&build_graph(&lists, n).unwrap())
    }

    #[test]
    fn layer_on_identity_relation_averages_h_and_z() {
        let rels = identity_rels(2, 1);
        let hyper = EnmpHyper::uniform(1.0, 1);
        let h = dmatrix![4.0; 0.0];
        let z = dmatrix![0.0; 2.0];
        let (next, mu) = enmp_layer(&z, &h, &rels, &hyper).unwrap();
        assert_eq!(next, dmatrix![2.0; 1.0]);
        assert_eq!(mu.as_slice(), &[1.0]);
    }

    #[test]
    fn layer_with_tiny_lambda1_returns_h() {
        let rels = identity_rels(3, 2);
        let hyper = EnmpHyper::uniform(1e-12, 1);
        let h = dmatrix![1.0; 2.0; 3.0];
        let z = dmatrix![9.0; 9.0; 9.0];
        let (next, _) = enmp_layer(&z, &h, &rels, &hyper).unwrap();
        assert!((next - h).norm() < 1e-10);
    }

    #[test]
    fn propagate_k1_equals_single_layer() {
        let g = build_graph(&[vec![(0, 1), (1, 2)]], 3).unwrap();
        let rels = normalize(&g);
        let hyper = EnmpHyper::learned(2.0, 1.0, 1);
        let h = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let trace = propagate(&h, &rels, &hyper).unwrap();
        let (direct, mu) = enmp_layer(&h, &h, &rels, &hyper).unwrap();
        assert_eq!(trace.z_per_layer().len(), 2);
        assert_eq!(trace.final_z(), &direct);
        assert_eq!(trace.final_mu(), &mu);
    }

    #[test]
    fn propagate_rejects_k_zero() {
        let rels = identity_rels(2, 1);
        let hyper = EnmpHyper::uniform(1.0, 0);
        assert!(propagate(&dmatrix![1.0; 1.0], &rels, &hyper).is_err());
    }

    #[test]
    fn uniform_mode_records_uniform_mu_at_every_layer() {
        let g = build_graph(&[vec![(0, 1)], vec![(1, 2)], vec![(0, 2)]], 3).unwrap();
        let rels = normalize(&g);
        let hyper = EnmpHyper::uniform(2.0, 4);
        let h = dmatrix![1.0; -1.0; 0.5];
        let trace = propagate(&h, &rels, &hyper).unwrap();
        assert_eq!(trace.mu_per_layer().len(), 4);
        for mu in trace.mu_per_layer() {
            for &m in mu.as_slice() {
                assert!((m - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_on_identity_relations_returns_h() {
        let rels = identity_rels(3, 2);
        let mu = CoefficientVector::uniform(2).unwrap();
        let h = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        let z = closed_form_solve(&h, &rels, &mu, 5.0).unwrap();
        assert!((&z - &h).norm() < 1e-12);
    }

    #[test]
    fn closed_form_with_tiny_lambda1_returns_h() {
        let g = build_graph(&[vec![(0, 1), (1, 2), (0, 3)]], 4).unwrap();
        let rels = normalize(&g);
        let mu = CoefficientVector::uniform(1).unwrap();
        let h = dmatrix![1.0; -2.0; 0.5; 3.0];
        let z = closed_form_solve(&h, &rels, &mu, 1e-10).unwrap();
        assert!((&z - &h).norm() < 1e-8);
    }

    #[test]
    fn closed_form_respects_dense_cap() {
        let rels = identity_rels(4, 1);
        let mu = CoefficientVector::uniform(1).unwrap();
        let h = FeatureMatrix::zeros(4, 1);
        assert!(matches!(
            closed_form_solve_with_cap(&h, &rels, &mu, 1.0, 3),
            Err(EmrError::DenseCapExceeded { n: 4, cap: 3 })
        ));
    }

    #[test]
    fn ppr_full_teleport_is_identity() {
        let g = build_graph(&[vec![(0, 1), (1, 2)]], 3).unwrap();
        let rels = normalize(&g);
        let mu = CoefficientVector::uniform(1).unwrap();
        let pi = ppr_matrix(&rels, &mu, 1.0).unwrap();
        assert!((pi - FeatureMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn ppr_identity_graph_is_identity_for_any_alpha() {
        let rels = identity_rels(3, 2);
        let mu = CoefficientVector::uniform(2).unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            let pi = ppr_matrix(&rels, &mu, alpha).unwrap();
            assert!((pi - FeatureMatrix::identity(3, 3)).norm() < 1e-12);
        }
    }

    #[test]
    fn appnp_alpha_one_returns_h() {
        let g = build_graph(&[vec![(0, 1)]], 2).unwrap();
        let rels = normalize(&g);
        let h = dmatrix![3.0; -1.0];
        for k in [1, 5] {
            assert_eq!(appnp_averaged(&h, &rels, k, 1.0).unwrap(), h);
        }
    }

    #[test]
    fn gcn_averaged_identity_graph_returns_z() {
        let rels = identity_rels(3, 2);
        let z = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        assert_eq!(gcn_averaged(&z, &rels).unwrap(), z);
    }

    #[test]
    fn fixed_mode_requires_matching_length() {
        let rels = identity_rels(2, 2);
        let hyper = EnmpHyper {
            coefficient_mode: CoefficientMode::Fixed(CoefficientVector::uniform(3).unwrap()),
            ..EnmpHyper::uniform(1.0, 1)
        };
        let h = dmatrix![1.0; 1.0];
        assert!(enmp_layer(&h, &h, &rels, &hyper).is_err());
    }
}
