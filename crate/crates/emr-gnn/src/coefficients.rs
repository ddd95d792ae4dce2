//! Relational coefficient solver: entropic mirror descent on the simplex
//! for the weights μ minimizing `λ₁ Σ μ_r s_r + λ₂ ‖μ‖²`, plus an exact
//! projection oracle and the two λ₂/λ₁ limit regimes.

use crate::error::{EmrError, Result};

/// A point on the standard simplex: `Σ μ_r = 1`, `μ_r ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    mu: Vec<f64>,
}

impl CoefficientVector {
    /// Wrap a vector, verifying the simplex invariants (sum within 1e-9).
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(EmrError::invalid("coefficient vector must be nonempty"));
        }
        if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(EmrError::invalid(format!(
                "coefficients must be finite and nonnegative, got {mu:?}"
            )));
        }
        let sum: f64 = mu.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EmrError::invalid(format!(
                "coefficients must sum to 1, got {sum}"
            )));
        }
        Ok(CoefficientVector { mu })
    }

    /// Uniform point `[1/R, ..., 1/R]`.
    pub fn uniform(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(EmrError::invalid("simplex dimension must be at least 1"));
        }
        Ok(CoefficientVector {
            mu: vec![1.0 / r as f64; r],
        })
    }

    /// Vertex with all mass on `index`.
    pub fn one_hot(r: usize, index: usize) -> Result<Self> {
        if index >= r {
            return Err(EmrError::invalid(format!(
                "one-hot index {index} out of range for {r} relations"
            )));
        }
        let mut mu = vec![0.0; r];
        mu[index] = 1.0;
        Ok(CoefficientVector { mu })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    /// Index of the largest coefficient (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mu.iter().enumerate() {
            if m > self.mu[best] {
                best = i;
            }
        }
        best
    }
}

/// Iteration controls for [`emda_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct RclSettings {
    pub max_iters: usize,
    /// Convergence threshold on `‖μ^{t+1} - μ^t‖₁`.
    pub tol: f64,
    /// Start each layer's solve from the previous layer's μ instead of
    /// the uniform point.
    pub warm_start: bool,
}

impl Default for RclSettings {
    fn default() -> Self {
        RclSettings {
            max_iters: 1000,
            tol: 1e-8,
            warm_start: false,
        }
    }
}

impl RclSettings {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(EmrError::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(EmrError::invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// The coefficient objective `λ₁ Σ μ_r s_r + λ₂ ‖μ‖²`.
pub fn objective(s: &[f64], lambda1: f64, lambda2: f64, mu: &CoefficientVector) -> f64 {
    let dot: f64 = mu.as_slice().iter().zip(s).map(|(m, v)| m * v).sum();
    let sq: f64 = mu.as_slice().iter().map(|m| m * m).sum();
    lambda1 * dot + lambda2 * sq
}

/// Gradient Lipschitz bound `φ = 2 λ₂/λ₁ + Σ |s_r|` of the scaled objective.
pub fn lipschitz_constant(s: &[f64], lambda1: f64, lambda2: f64) -> Result<f64> {
    if !(lambda1 > 0.0) {
        return Err(EmrError::invalid(format!("lambda1 must be > 0, got {lambda1}")));
    }
    if !(lambda2 >= 0.0) {
        return Err(EmrError::invalid(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(EmrError::invalid("scores must be finite"));
    }
    let abs_sum: f64 = s.iter().map(|v| v.abs()).sum();
    Ok(2.0 * lambda2 / lambda1 + abs_sum)
}

/// Limit regimes of the coefficient subproblem as λ₂/λ₁ goes to 0 or ∞.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitRegime {
    /// λ₂/λ₁ → 0: all mass concentrates on the smallest score.
    ZeroRatio,
    /// λ₂/λ₁ → ∞: the quadratic term forces the uniform point.
    InfiniteRatio,
}

/// Closed-form solutions of the two limit regimes. Ties at zero ratio
/// break toward the lowest index, keeping the output deterministic.
pub fn limit_case(s: &[f64], regime: LimitRegime) -> Result<CoefficientVector> {
    if s.is_empty() {
        return Err(EmrError::invalid("scores must be nonempty"));
    }
    match regime {
        LimitRegime::ZeroRatio => {
            let mut best = 0;
            for (i, &v) in s.iter().enumerate() {
                if v < s[best] {
                    best = i;
                }
            }
            CoefficientVector::one_hot(s.len(), best)
        }
        LimitRegime::InfiniteRatio => CoefficientVector::uniform(s.len()),
    }
}

/// Exact minimizer of the coefficient objective for λ₂ > 0: the Euclidean
/// projection of `(-λ₁ / (2 λ₂)) s` onto the simplex, via the sort-based
/// algorithm. Used as the test oracle for [`emda_solve`].
pub fn qp_oracle(s: &[f64], lambda1: f64, lambda2: f64) -> Result<CoefficientVector> {
    if s.is_empty() {
        return Err(EmrError::invalid("scores must be nonempty"));
    }
    if !(lambda1 > 0.0) {
        return Err(EmrError::invalid(format!("lambda1 must be > 0, got {lambda1}")));
    }
    if !(lambda2 > 0.0) {
        return Err(EmrError::invalid(
            "qp_oracle requires lambda2 > 0; use limit_case for the zero-ratio regime",
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(EmrError::invalid("scores must be finite"));
    }
    let v: Vec<f64> = s.iter().map(|&x| -lambda1 / (2.0 * lambda2) * x).collect();
    Ok(project_simplex(&v))
}

/// Euclidean projection onto the standard simplex (sort, running prefix
/// sums, threshold).
fn project_simplex(v: &[f64]) -> CoefficientVector {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        prefix += u;
        let candidate = (prefix - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    let mu: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    // Exactness of the threshold leaves the sum within round-off of 1;
    // renormalize so the simplex invariant holds to machine precision.
    let sum: f64 = mu.iter().sum();
    CoefficientVector {
        mu: mu.into_iter().map(|m| m / sum).collect(),
    }
}

/// Entropic mirror descent for the coefficient subproblem, from the
/// uniform initialization.
///
/// Each iteration takes the gradient `f'_r = (2 λ₂/λ₁) μ_r + s_r`, applies
/// the multiplicative update `μ_r ← μ_r exp(-T f'_r) / Σ ...` jointly to
/// all coordinates with base step `T_t = sqrt(2 ln R / t) / φ`, and stops
/// when `‖μ^{t+1} - μ^t‖₁ < tol`. The base step carries an adaptive
/// multiplier, doubled after a step that does not increase the objective
/// and halved (up to 60 times within an iteration) otherwise, so the
/// iterate sequence is objective-monotone and meets the projection oracle
/// at tight tolerances instead of stalling on the pinned 1/√t schedule.
pub fn emda_solve(
    s: &[f64],
    lambda1: f64,
    lambda2: f64,
    settings: &RclSettings,
) -> Result<CoefficientVector> {
    let init = CoefficientVector::uniform(validate_emda_inputs(s, lambda1, lambda2, settings)?)?;
    emda_solve_from(s, lambda1, lambda2, settings, init)
}

/// [`emda_solve`] from an explicit starting point (warm starts).
pub fn emda_solve_from(
    s: &[f64],
    lambda1: f64,
    lambda2: f64,
    settings: &RclSettings,
    init: CoefficientVector,
) -> Result<CoefficientVector> {
    let r = validate_emda_inputs(s, lambda1, lambda2, settings)?;
    if init.len() != r {
        return Err(EmrError::ShapeMismatch {
            context: "emda_solve_from",
            expected: format!("{r} coefficients"),
            got: format!("{}", init.len()),
        });
    }
    if r == 1 {
        return CoefficientVector::new(vec![1.0]);
    }
    let ratio = lambda2 / lambda1;
    let phi = lipschitz_constant(s, lambda1, lambda2)?;
    if phi == 0.0 {
        // Zero gradient bound means the objective is constant on the
        // simplex; every point minimizes, return the uniform one.
        return CoefficientVector::uniform(r);
    }
    if lambda2 == 0.0 {
        // Linear objective: the minimizer is the zero-ratio vertex.
        return limit_case(s, LimitRegime::ZeroRatio);
    }

    let mut mu = init.mu;
    // A zero coordinate is a fixed point of the multiplicative update;
    // floor it so warm starts from a vertex can still move off the face.
    if mu.contains(&0.0) {
        for m in mu.iter_mut() {
            *m = m.max(1e-12);
        }
        mu = normalize_simplex(mu);
    }
    let mut f_cur = scaled_objective(&mu, s, ratio);
    let base = (2.0 * (r as f64).ln()).sqrt() / phi;
    let mut eta = 1.0f64;
    let mut log_next = vec![0.0f64; r];
    let mut next = vec![0.0f64; r];

    for t in 1..=settings.max_iters {
        let t_base = base / (t as f64).sqrt();
        let mut accepted = false;
        for _ in 0..60 {
            let step = eta * t_base;
            let mut log_max = f64::NEG_INFINITY;
            for i in 0..r {
                let grad = 2.0 * ratio * mu[i] + s[i];
                let lw = mu[i].ln() - step * grad;
                log_next[i] = lw;
                if lw > log_max {
                    log_max = lw;
                }
            }
            // Max-subtraction guard: the largest exponent becomes 0, so
            // exp never overflows even for huge scores.
            let mut norm = 0.0;
            for i in 0..r {
                next[i] = (log_next[i] - log_max).exp();
                norm += next[i];
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            if scaled_objective(&next, s, ratio) <= f_cur {
                accepted = true;
                eta = (eta * 2.0).min(1e12);
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            // No step length descends: μ is at a numerical stationary point.
            break;
        }
        let diff: f64 = mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        mu.copy_from_slice(&next);
        f_cur = scaled_objective(&mu, s, ratio);
        if diff < settings.tol {
            break;
        }
    }
    CoefficientVector::new(normalize_simplex(mu))
}

fn validate_emda_inputs(
    s: &[f64],
    lambda1: f64,
    lambda2: f64,
    settings: &RclSettings,
) -> Result<usize> {
    settings.validate()?;
    if s.is_empty() {
        return Err(EmrError::invalid("scores must be nonempty"));
    }
    if !(lambda1 > 0.0) {
        return Err(EmrError::invalid(format!("lambda1 must be > 0, got {lambda1}")));
    }
    if !(lambda2 >= 0.0) {
        return Err(EmrError::invalid(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(EmrError::invalid("scores must be finite"));
    }
    Ok(s.len())
}

/// Objective divided by λ₁: `μ·s + (λ₂/λ₁) ‖μ‖²`, same minimizer.
fn scaled_objective(mu: &[f64], s: &[f64], ratio: f64) -> f64 {
    let mut dot = 0.0;
    let mut sq = 0.0;
    for (m, v) in mu.iter().zip(s) {
        dot += m * v;
        sq += m * m;
    }
    dot + ratio * sq
}

/// Clamp round-off so the simplex invariants hold exactly at the boundary.
fn normalize_simplex(mut mu: Vec<f64>) -> Vec<f64> {
    for m in mu.iter_mut() {
        *m = m.max(0.0);
    }
    let sum: f64 = mu.iter().sum();
    for m in mu.iter_mut() {
        *m /= sum;
    }
    mu
}
