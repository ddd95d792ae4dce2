//! The full model: one affine feature transform, K ensemble
//! message-passing layers, a linear classifier, masked cross-entropy, and
//! exact reverse-mode gradients with Adam training.
//!
//! Coefficients μ are optimized inside the forward pass and receive no
//! gradient; backward is the exact adjoint of the realized linear maps.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::coefficients::CoefficientVector;
use crate::data::Splits;
use crate::enmp::{gcn_averaged, propagate, spmm_weighted_sum, EnmpHyper, PropagationTrace};
use crate::error::{EmrError, Result};
use crate::graph::NormalizedRelation;
use crate::FeatureMatrix;

/// Nonlinearity of the feature transform: rectifier for feature inputs,
/// plain linear for featureless (identity-feature) datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Relu,
    Linear,
}

/// Where dropout is applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutPosition {
    /// Inside the feature transform, before propagation (default).
    Transform,
    /// On the propagated features, before the classifier.
    AfterPropagation,
}

/// Propagation used between transform and classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagation {
    /// Ensemble message passing with the given hyperparameters.
    Enmp(EnmpHyper),
    /// `k` repetitions of the relation-averaged GCN step; the trainable
    /// deep-stack baseline for over-smoothing comparisons.
    GcnStack { k: usize },
}

/// Architecture-level settings consumed by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub propagation: Propagation,
    /// Probability of zeroing an activation during training; `[0, 1)`.
    pub dropout_rate: f64,
    pub dropout_position: DropoutPosition,
}

impl ModelSettings {
    fn validate(&self, relation_count: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EmrError::invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        match &self.propagation {
            Propagation::Enmp(hyper) => hyper.validate(relation_count),
            Propagation::GcnStack { k } => {
                if *k == 0 {
                    return Err(EmrError::invalid("stack depth must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// Trainable weights: transform `W` (d_in x d_hid affine) and classifier
/// `theta` (d_hid x d_out affine). Nothing else trains; in particular the
/// per-layer coefficients are forward-optimized constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    w: FeatureMatrix,
    b_w: DVector<f64>,
    theta: FeatureMatrix,
    b_theta: DVector<f64>,
    transform: Transform,
}

impl ModelParams {
    /// Random initialization: `W ~ N(0, 2/d_in)`, `theta ~ N(0, 1/d_hid)`,
    /// zero biases.
    pub fn init(
        d_in: usize,
        d_hid: usize,
        d_out: usize,
        transform: Transform,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if d_in == 0 || d_hid == 0 || d_out == 0 {
            return Err(EmrError::invalid("all layer dimensions must be positive"));
        }
        let w_dist = Normal::new(0.0, (2.0 / d_in as f64).sqrt())
            .map_err(|e| EmrError::invalid(e.to_string()))?;
        let t_dist = Normal::new(0.0, (1.0 / d_hid as f64).sqrt())
            .map_err(|e| EmrError::invalid(e.to_string()))?;
        let w = FeatureMatrix::from_fn(d_in, d_hid, |_, _| w_dist.sample(rng));
        let theta = FeatureMatrix::from_fn(d_hid, d_out, |_, _| t_dist.sample(rng));
        Ok(ModelParams {
            w,
            b_w: DVector::zeros(d_hid),
            theta,
            b_theta: DVector::zeros(d_out),
            transform,
        })
    }

    /// Construct from explicit weights (checkpoint loading, tests).
    pub fn from_parts(
        w: FeatureMatrix,
        b_w: DVector<f64>,
        theta: FeatureMatrix,
        b_theta: DVector<f64>,
        transform: Transform,
    ) -> Result<Self> {
        if w.ncols() != b_w.len() || w.ncols() != theta.nrows() || theta.ncols() != b_theta.len() {
            return Err(EmrError::ShapeMismatch {
                context: "ModelParams::from_parts",
                expected: format!("W {}x{}, theta {}x{}", w.nrows(), w.ncols(), w.ncols(), theta.ncols()),
                got: format!(
                    "b_w {}, theta {}x{}, b_theta {}",
                    b_w.len(),
                    theta.nrows(),
                    theta.ncols(),
                    b_theta.len()
                ),
            });
        }
        if w.iter().chain(theta.iter()).any(|v| !v.is_finite())
            || b_w.iter().chain(b_theta.iter()).any(|v| !v.is_finite())
        {
            return Err(EmrError::invalid("weights must be finite"));
        }
        Ok(ModelParams {
            w,
            b_w,
            theta,
            b_theta,
            transform,
        })
    }

    pub fn w(&self) -> &FeatureMatrix {
        &self.w
    }

    pub fn b_w(&self) -> &DVector<f64> {
        &self.b_w
    }

    pub fn theta(&self) -> &FeatureMatrix {
        &self.theta
    }

    pub fn b_theta(&self) -> &DVector<f64> {
        &self.b_theta
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_hid(&self) -> usize {
        self.w.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.theta.ncols()
    }
}

/// Number of trainable scalars: `|W| + |theta|`, biases included.
/// Independent of the relation count and the propagation depth.
pub fn parameter_count(params: &ModelParams) -> usize {
    params.w.len() + params.b_w.len() + params.theta.len() + params.b_theta.len()
}

/// Analytic parameter count of an RGCN-style alternative with `bases`
/// basis matrices and per-layer weights, for the economy contrast in run
/// reports: `bases * k * d_hid^2`.
pub fn rgcn_style_count(bases: usize, k: usize, d_hid: usize) -> usize {
    bases * k * d_hid * d_hid
}

/// Everything backward needs to replay the forward pass as the adjoint of
/// its realized linear maps: inputs, pre-activations, dropout masks (held
/// pre-scaled by `1/(1-rate)`), the classifier input, and the μ actually
/// used per layer.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: FeatureMatrix,
    preact: FeatureMatrix,
    dropout_mask_h: Option<FeatureMatrix>,
    dropout_mask_z: Option<FeatureMatrix>,
    z_out: FeatureMatrix,
    logits: FeatureMatrix,
    mu_per_layer: Vec<CoefficientVector>,
    settings: ModelSettings,
    transform: Transform,
    theta: FeatureMatrix,
}

/// Result of one forward pass. `trace` is present for ensemble
/// propagation and absent for the stack baseline.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: FeatureMatrix,
    pub trace: Option<PropagationTrace>,
    pub cache: ForwardCache,
}

/// Evaluation-mode forward pass: no dropout, no randomness.
pub fn forward_eval(
    x: &FeatureMatrix,
    rels: &[NormalizedRelation],
    params: &ModelParams,
    settings: &ModelSettings,
) -> Result<ForwardOutput> {
    forward_inner(x, rels, params, settings, None)
}

/// Training-mode forward pass; dropout masks are drawn from `rng`.
pub fn forward_train(
    x: &FeatureMatrix,
    rels: &[NormalizedRelation],
    params: &ModelParams,
    settings: &ModelSettings,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardOutput> {
    forward_inner(x, rels, params, settings, Some(rng))
}

fn sample_dropout_mask(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> FeatureMatrix {
    let keep = 1.0 / (1.0 - rate);
    FeatureMatrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() >= rate {
            keep
        } else {
            0.0
        }
    })
}

fn forward_inner(
    x: &FeatureMatrix,
    rels: &[NormalizedRelation],
    params: &ModelParams,
    settings: &ModelSettings,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput> {
    let n = match rels.first() {
        Some(rel) => rel.n(),
        None => return Err(EmrError::invalid("at least one relation required")),
    };
    settings.validate(rels.len())?;
    if x.nrows() != n {
        return Err(EmrError::ShapeMismatch {
            context: "forward X",
            expected: format!("{n} rows"),
            got: format!("{} rows", x.nrows()),
        });
    }
    if x.ncols() != params.d_in() {
        return Err(EmrError::ShapeMismatch {
            context: "forward X",
            expected: format!("{} columns", params.d_in()),
            got: format!("{} columns", x.ncols()),
        });
    }

    let preact = {
        let mut p = x * &params.w;
        for mut row in p.row_iter_mut() {
            row += params.b_w.transpose();
        }
        p
    };
    let mut h = match params.transform {
        Transform::Relu => preact.map(|v| v.max(0.0)),
        Transform::Linear => preact.clone(),
    };
    let dropout_active = settings.dropout_rate > 0.0 && rng.is_some();
    let mut dropout_mask_h = None;
    if dropout_active && settings.dropout_position == DropoutPosition::Transform {
        let mask = sample_dropout_mask(
            h.nrows(),
            h.ncols(),
            settings.dropout_rate,
            rng.as_deref_mut().expect("dropout_active implies rng"),
        );
        h.component_mul_assign(&mask);
        dropout_mask_h = Some(mask);
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(EmrError::numerical("non-finite transform activations"));
    }

    let (z_final, trace, mu_per_layer) = match &settings.propagation {
        Propagation::Enmp(hyper) => {
            let trace = propagate(&h, rels, hyper)?;
            let z = trace.final_z().clone();
            let mus = trace.mu_per_layer().to_vec();
            (z, Some(trace), mus)
        }
        Propagation::GcnStack { k } => {
            let mut z = h.clone();
            for _ in 0..*k {
                z = gcn_averaged(&z, rels)?;
            }
            (z, None, Vec::new())
        }
    };

    let mut z_out = z_final;
    let mut dropout_mask_z = None;
    if dropout_active && settings.dropout_position == DropoutPosition::AfterPropagation {
        let mask = sample_dropout_mask(
            z_out.nrows(),
            z_out.ncols(),
            settings.dropout_rate,
            rng.expect("dropout_active implies rng"),
        );
        z_out.component_mul_assign(&mask);
        dropout_mask_z = Some(mask);
    }

    let logits = {
        let mut l = &z_out * &params.theta;
        for mut row in l.row_iter_mut() {
            row += params.b_theta.transpose();
        }
        l
    };
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(EmrError::numerical("non-finite logits"));
    }

    let cache = ForwardCache {
        x: x.clone(),
        preact,
        dropout_mask_h,
        dropout_mask_z,
        z_out,
        logits: logits.clone(),
        mu_per_layer,
        settings: settings.clone(),
        transform: params.transform,
        theta: params.theta.clone(),
    };
    Ok(ForwardOutput {
        logits,
        trace,
        cache,
    })
}

/// Masked mean softmax cross-entropy, log-sum-exp stabilized.
pub fn loss(logits: &FeatureMatrix, labels: &[i64], mask: &[usize]) -> Result<f64> {
    Ok(loss_and_dlogits(logits, labels, mask)?.0)
}

/// Loss plus its gradient w.r.t. the logits (zero outside the mask).
fn loss_and_dlogits(
    logits: &FeatureMatrix,
    labels: &[i64],
    mask: &[usize],
) -> Result<(f64, FeatureMatrix)> {
    if mask.is_empty() {
        return Err(EmrError::invalid("loss mask selects no nodes"));
    }
    if labels.len() != logits.nrows() {
        return Err(EmrError::ShapeMismatch {
            context: "loss labels",
            expected: format!("{} labels", logits.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    let classes = logits.ncols();
    let count = mask.len() as f64;
    let mut total = 0.0;
    let mut dlogits = FeatureMatrix::zeros(logits.nrows(), classes);
    for &i in mask {
        if i >= logits.nrows() {
            return Err(EmrError::IndexOutOfRange {
                index: i,
                n: logits.nrows(),
            });
        }
        let label = labels[i];
        if label < 0 || label as usize >= classes {
            return Err(EmrError::invalid(format!(
                "label {label} of node {i} out of range for {classes} classes"
            )));
        }
        let label = label as usize;
        let row = logits.row(i);
        let row_max = row.max();
        let log_norm: f64 = row.iter().map(|&v| (v - row_max).exp()).sum::<f64>().ln() + row_max;
        total += log_norm - row[label];
        for c in 0..classes {
            let softmax = (row[c] - log_norm).exp();
            dlogits[(i, c)] = (softmax - if c == label { 1.0 } else { 0.0 }) / count;
        }
    }
    Ok((total / count, dlogits))
}

/// Gradients for the two trainable weight groups.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: FeatureMatrix,
    pub b_w: DVector<f64>,
    pub theta: FeatureMatrix,
    pub b_theta: DVector<f64>,
}

/// Exact reverse-mode gradients treating every per-layer μ as a constant.
/// The propagation adjoint runs the layer recursion backwards, using the
/// symmetry of the normalized adjacencies, and accumulates the direct
/// `H/(1+λ₁)` contribution at every layer plus the initial-state term for
/// `Z⁰ = H`.
pub fn backward(
    cache: &ForwardCache,
    rels: &[NormalizedRelation],
    labels: &[i64],
    mask: &[usize],
) -> Result<Gradients> {
    let (_, dlogits) = loss_and_dlogits(&cache.logits, labels, mask)?;
    let dtheta = cache.z_out.transpose() * &dlogits;
    let db_theta = column_sums(&dlogits);
    let mut dz = &dlogits * cache.theta.transpose();
    if let Some(mask_z) = &cache.dropout_mask_z {
        dz.component_mul_assign(mask_z);
    }

    let mut dh = match &cache.settings.propagation {
        Propagation::Enmp(hyper) => {
            let lambda1 = hyper.lambda1;
            let beta = lambda1 / (1.0 + lambda1);
            let mut g = dz;
            let mut dh = FeatureMatrix::zeros(g.nrows(), g.ncols());
            for mu in cache.mu_per_layer.iter().rev() {
                dh += &g * (1.0 / (1.0 + lambda1));
                g = spmm_weighted_sum(rels, mu, &g)? * beta;
            }
            dh += g;
            dh
        }
        Propagation::GcnStack { k } => {
            let mut g = dz;
            for _ in 0..*k {
                g = gcn_averaged(&g, rels)?;
            }
            g
        }
    };

    if let Some(mask_h) = &cache.dropout_mask_h {
        dh.component_mul_assign(mask_h);
    }
    let dpre = match cache.transform {
        Transform::Relu => {
            let mut d = dh;
            for (dv, &p) in d.iter_mut().zip(cache.preact.iter()) {
                if p <= 0.0 {
                    *dv = 0.0;
                }
            }
            d
        }
        Transform::Linear => dh,
    };
    let dw = cache.x.transpose() * &dpre;
    let db_w = column_sums(&dpre);
    Ok(Gradients {
        w: dw,
        b_w: db_w,
        theta: dtheta,
        b_theta: db_theta,
    })
}

fn column_sums(m: &FeatureMatrix) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// Classification quality on a masked node set.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Fraction of masked nodes whose argmax logit matches the label.
    pub accuracy: f64,
    /// Unweighted mean of per-class recall over classes present in the mask.
    pub macro_recall: f64,
    /// Masked mean cross-entropy.
    pub loss: f64,
}

/// Compute metrics for `mask` from logits.
pub fn evaluate(logits: &FeatureMatrix, labels: &[i64], mask: &[usize]) -> Result<Metrics> {
    let loss_value = loss(logits, labels, mask)?;
    let classes = logits.ncols();
    let mut correct = 0usize;
    let mut per_class_total = vec![0usize; classes];
    let mut per_class_correct = vec![0usize; classes];
    for &i in mask {
        let label = labels[i] as usize;
        let mut pred = 0;
        for c in 1..classes {
            if logits[(i, c)] > logits[(i, pred)] {
                pred = c;
            }
        }
        per_class_total[label] += 1;
        if pred == label {
            correct += 1;
            per_class_correct[label] += 1;
        }
    }
    let mut recall_sum = 0.0;
    let mut recall_classes = 0usize;
    for c in 0..classes {
        if per_class_total[c] > 0 {
            recall_sum += per_class_correct[c] as f64 / per_class_total[c] as f64;
            recall_classes += 1;
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / mask.len() as f64,
        macro_recall: recall_sum / recall_classes as f64,
        loss: loss_value,
    })
}

/// Full training configuration; `seed` fixes every random choice.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop after this many epochs without a validation-accuracy
    /// improvement; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub transform: Transform,
    pub settings: ModelSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            hidden_dim: 16,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 0,
            transform: Transform::Relu,
            settings: ModelSettings {
                propagation: Propagation::Enmp(EnmpHyper::learned(2.0, 1000.0, 8)),
                dropout_rate: 0.5,
                dropout_position: DropoutPosition::Transform,
            },
        }
    }
}

impl TrainConfig {
    fn validate(&self, relation_count: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(EmrError::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(EmrError::invalid("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(EmrError::invalid("weight decay must be nonnegative"));
        }
        if self.hidden_dim == 0 {
            return Err(EmrError::invalid("hidden dimension must be positive"));
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
            || !(self.adam_eps > 0.0)
        {
            return Err(EmrError::invalid("adam settings out of range"));
        }
        self.settings.validate(relation_count)
    }
}

/// One history entry per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

/// Result of [`train`]: best-validation weights, the epoch they came
/// from, per-epoch history, and the eval-mode propagation trace of the
/// returned weights (absent for the stack baseline).
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub trace: Option<PropagationTrace>,
}

struct AdamState {
    m: Vec<FeatureMatrix>,
    v: Vec<FeatureMatrix>,
    t: usize,
}

impl AdamState {
    fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&(r, c)| FeatureMatrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| FeatureMatrix::zeros(r, c)).collect(),
            t: 0,
        }
    }

    /// Adam with coupled weight decay: `g ← g + wd·p` before the moment
    /// updates, bias-corrected first and second moments.
    fn step(&mut self, params: &mut [&mut FeatureMatrix], grads: &[&FeatureMatrix], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let grad = g[i] + cfg.weight_decay * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * grad;
                v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Train with Adam on the train split, selecting the best
/// validation-accuracy epoch (ties broken by lower validation loss).
/// Deterministic: identical `(data, config)` gives identical outcomes.
pub fn train(
    x: &FeatureMatrix,
    rels: &[NormalizedRelation],
    labels: &[i64],
    splits: &Splits,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate(rels.len())?;
    splits.validate(x.nrows())?;
    let classes = labels
        .iter()
        .copied()
        .max()
        .filter(|&m| m >= 0)
        .ok_or_else(|| EmrError::invalid("no labeled nodes"))? as usize
        + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        x.ncols(),
        config.hidden_dim,
        classes,
        config.transform,
        &mut rng,
    )?;
    let shapes = [
        (params.w.nrows(), params.w.ncols()),
        (params.b_w.len(), 1),
        (params.theta.nrows(), params.theta.ncols()),
        (params.b_theta.len(), 1),
    ];
    let mut adam = AdamState::new(&shapes);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.epochs {
        let out = forward_train(x, rels, &params, &config.settings, &mut rng)?;
        let train_loss = loss(&out.logits, labels, &splits.train)?;
        if !train_loss.is_finite() {
            return Err(EmrError::numerical(format!(
                "training diverged at epoch {epoch}: loss {train_loss}"
            )));
        }
        let grads = backward(&out.cache, rels, labels, &splits.train)?;
        {
            let mut b_w_mat = FeatureMatrix::from_column_slice(params.b_w.len(), 1, params.b_w.as_slice());
            let mut b_t_mat =
                FeatureMatrix::from_column_slice(params.b_theta.len(), 1, params.b_theta.as_slice());
            let g_bw = FeatureMatrix::from_column_slice(grads.b_w.len(), 1, grads.b_w.as_slice());
            let g_bt = FeatureMatrix::from_column_slice(grads.b_theta.len(), 1, grads.b_theta.as_slice());
            let mut w = std::mem::replace(&mut params.w, FeatureMatrix::zeros(0, 0));
            let mut theta = std::mem::replace(&mut params.theta, FeatureMatrix::zeros(0, 0));
            adam.step(
                &mut [&mut w, &mut b_w_mat, &mut theta, &mut b_t_mat],
                &[&grads.w, &g_bw, &grads.theta, &g_bt],
                config,
            );
            params.w = w;
            params.theta = theta;
            params.b_w = DVector::from_column_slice(b_w_mat.as_slice());
            params.b_theta = DVector::from_column_slice(b_t_mat.as_slice());
        }

        let eval = forward_eval(x, rels, &params, &config.settings)?;
        let val = evaluate(&eval.logits, labels, &splits.val)?;
        let improved = match &best {
            None => true,
            Some((acc, vloss, _, _)) => {
                val.accuracy > *acc || (val.accuracy == *acc && val.loss < *vloss)
            }
        };
        let improved_acc = best
            .as_ref()
            .map(|(acc, _, _, _)| val.accuracy > *acc)
            .unwrap_or(true);
        if improved {
            best = Some((val.accuracy, val.loss, epoch, params.clone()));
        }
        epochs_since_best = if improved_acc { 0 } else { epochs_since_best + 1 };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val,
        });
        if config.early_stop_patience > 0 && epochs_since_best >= config.early_stop_patience {
            break;
        }
    }

    let (_, _, best_epoch, best_params) = best.expect("epochs >= 1 ran");
    let final_out = forward_eval(x, rels, &best_params, &config.settings)?;
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        history,
        trace: final_out.trace,
    })
}
