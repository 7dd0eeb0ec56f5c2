//! The trainable linear probe over frozen embeddings.
//!
//! Prototypes `w_c` score an embedding `v` by `softmax_c((v · w_c) / τ)`.
//! Training minimizes the mean cross-entropy over the support set plus an
//! optional anchor penalty, with SGD + momentum, a cosine learning-rate
//! schedule, and (by default) a projection of every prototype back onto the
//! unit sphere after each step. The projection is not part of the
//! differentiated objective.
//!
//! Determinism: the support rows are put into a canonical order (label,
//! then feature bits) before training, and every reduction runs in a fixed
//! order, so a run is a pure function of its inputs and seed.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Rng, SupportSet};
use crate::error::{Error, Result};
use crate::penalty::{
    accumulate_penalty_gradient, alm_outer_update, init_lambda_star, lambda_variants,
    penalty_value, PenaltyKind, PenaltyState, LAMBDA_MAX, LAMBDA_MIN,
};
use crate::primitives::{
    cross_entropy, normalize_in_place, EmbeddingSet, Matrix, OneHotBatch, PrototypeBank, NORM_EPS,
};
use crate::zeroshot::{predict_unit, DEFAULT_TEMPERATURE_INV};

pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_INIT_SIGMA: f64 = 0.01;

const STREAM_INIT: u64 = 101;
const STREAM_SHUFFLE: u64 = 102;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    FullBatch,
    MiniBatch {
        size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    #[default]
    ZeroShot,
    RandomGaussian {
        sigma: f64,
    },
}

/// How the multipliers are chosen before the first epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum LambdaChoice {
    /// Mean zero-shot confidence of each class on its support rows.
    ClassWise,
    ConstantOne,
    /// Every class gets the mean of the class-wise values.
    Avg,
    /// Class-wise values divided by their mean.
    Corrected,
    Uniform(f64),
    Explicit(Vec<f64>),
}

/// Applying the quadratic penalty inside the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyStep {
    /// Penalty gradient is added to the cross-entropy gradient.
    #[default]
    Explicit,
    /// After the momentum step on the cross-entropy gradient, each row is
    /// replaced by the exact minimizer of
    /// `||w - w_half||² / (2 lr') + s λ_c ||w - t_c||²` with
    /// `lr' = lr / (1 - momentum)`, which stays stable for arbitrarily large
    /// `λ_c`. The rescaled rate matches the momentum amplification the
    /// explicit step applies to the penalty gradient, so both steps share
    /// the same fixed points. Quadratic penalties only.
    Proximal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: LambdaChoice,
    /// Multiplies the chosen multipliers.
    #[serde(default = "one")]
    pub lambda_scale: f64,
    /// Initial `ρ_c` for every class.
    #[serde(default = "one")]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

impl PenaltySpec {
    pub fn quadratic(lambda: LambdaChoice) -> Self {
        Self {
            kind: PenaltyKind::Quadratic,
            lambda,
            lambda_scale: 1.0,
            rho: 1.0,
        }
    }

    pub fn phr(lambda: LambdaChoice) -> Self {
        Self {
            kind: PenaltyKind::Phr,
            ..Self::quadratic(lambda)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub batch_mode: BatchMode,
    pub temperature_inv: f64,
    pub project_unit_norm: bool,
    pub init: Init,
    pub penalty: Option<PenaltySpec>,
    /// 0: no penalty. 1: multipliers fixed at their initial value.
    /// n > 1: up to n - 1 multiplier updates, one after each epoch.
    pub outer_steps: usize,
    pub penalty_step: PenaltyStep,
    /// Divide the penalty term by the number of support rows.
    pub penalty_mean_scale: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            lr0: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            batch_mode: BatchMode::FullBatch,
            temperature_inv: DEFAULT_TEMPERATURE_INV,
            project_unit_norm: true,
            init: Init::ZeroShot,
            penalty: None,
            outer_steps: 0,
            penalty_step: PenaltyStep::Explicit,
            penalty_mean_scale: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!(
                "lr0 must be finite and non-negative, got {}",
                self.lr0
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.temperature_inv > 0.0 && self.temperature_inv.is_finite()) {
            return bad(format!(
                "temperature_inv must be positive, got {}",
                self.temperature_inv
            ));
        }
        if let BatchMode::MiniBatch { size: 0 } = self.batch_mode {
            return bad("mini-batch size must be at least 1".into());
        }
        if let Init::RandomGaussian { sigma } = self.init {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad(format!("init sigma must be positive, got {sigma}"));
            }
        }
        match (&self.penalty, self.outer_steps) {
            (None, 0) => {}
            (Some(_), 0) => return bad("a penalty needs outer_steps >= 1".into()),
            (None, _) => return bad("outer_steps >= 1 needs a penalty".into()),
            (Some(p), steps) => {
                if !(p.lambda_scale >= 0.0 && p.lambda_scale.is_finite()) {
                    return bad(format!("lambda_scale must be >= 0, got {}", p.lambda_scale));
                }
                if !(p.rho > 0.0 && p.rho.is_finite()) {
                    return bad(format!("rho must be positive, got {}", p.rho));
                }
                if steps > 1 && p.kind != PenaltyKind::Phr {
                    return Err(Error::UnsupportedKind);
                }
                if p.kind == PenaltyKind::Phr && self.penalty_step == PenaltyStep::Proximal {
                    return bad("the proximal penalty step needs the quadratic kind".into());
                }
                match &p.lambda {
                    LambdaChoice::Uniform(x) if !(*x >= 0.0 && x.is_finite()) => {
                        return bad(format!("uniform lambda must be >= 0, got {x}"));
                    }
                    LambdaChoice::Explicit(v)
                        if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) =>
                    {
                        return bad("explicit lambdas must be >= 0".into());
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// `lr0 * (1 + cos(π e / epochs)) / 2`.
pub fn cosine_lr(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::Domain(format!(
            "epoch {epoch} outside [0, {})",
            config.epochs
        )));
    }
    let progress = epoch as f64 / config.epochs as f64;
    Ok(config.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

fn check_batch(bank: &PrototypeBank, batch: &EmbeddingSet) -> Result<()> {
    if batch.dim() != bank.dim() {
        return Err(Error::shape("probe batch dim", bank.dim(), batch.dim()));
    }
    if batch.n_classes() != bank.n_classes() {
        return Err(Error::shape(
            "probe batch classes",
            bank.n_classes(),
            batch.n_classes(),
        ));
    }
    Ok(())
}

fn forward_unit(bank: &PrototypeBank, features: &Matrix) -> Matrix {
    let mut probs = Matrix::zeros(features.rows(), bank.n_classes());
    for m in 0..features.rows() {
        predict_unit(bank, features.row(m), probs.row_mut(m));
    }
    probs
}

/// Class probabilities for every row of `batch` (rows are normalized first
/// when they are not already unit-norm).
pub fn probe_forward(bank: &PrototypeBank, batch: &EmbeddingSet) -> Result<Matrix> {
    if batch.dim() != bank.dim() {
        return Err(Error::shape("probe_forward", bank.dim(), batch.dim()));
    }
    let mut probs = Matrix::zeros(batch.len(), bank.n_classes());
    let mut unit = vec![0.0; batch.dim()];
    for m in 0..batch.len() {
        unit.copy_from_slice(batch.features.row(m));
        normalize_in_place(&mut unit, m)?;
        predict_unit(bank, &unit, probs.row_mut(m));
    }
    Ok(probs)
}

/// `∂/∂w_c` of the mean cross-entropy given precomputed probabilities.
fn ce_gradient_from_probs(
    temperature_inv: f64,
    features: &Matrix,
    labels: &[usize],
    probs: &Matrix,
    out: &mut Matrix,
) {
    let scale = temperature_inv / features.rows() as f64;
    for c in 0..probs.cols() {
        let g = out.row_mut(c);
        for (m, &label) in labels.iter().enumerate() {
            let target = if label == c { 1.0 } else { 0.0 };
            let r = probs.get(m, c) - target;
            if r == 0.0 {
                continue;
            }
            for (gi, vi) in g.iter_mut().zip(features.row(m)) {
                *gi += r * vi;
            }
        }
        for gi in g.iter_mut() {
            *gi *= scale;
        }
    }
}

/// Gradient of the mean cross-entropy over `batch` with respect to the
/// prototypes: `(1/τ)(1/M) Σ_m (ŷ_mc - y_mc) v_m`.
pub fn ce_gradient(
    bank: &PrototypeBank,
    batch: &EmbeddingSet,
    targets: &OneHotBatch,
) -> Result<Matrix> {
    check_batch(bank, batch)?;
    if targets.len() != batch.len() || targets.n_classes() != bank.n_classes() {
        return Err(Error::shape(
            "ce_gradient targets",
            format!("{}x{}", batch.len(), bank.n_classes()),
            format!("{}x{}", targets.len(), targets.n_classes()),
        ));
    }
    let unit = batch.normalized()?;
    let probs = forward_unit(bank, &unit.features);
    let mut grad = Matrix::zeros(bank.n_classes(), bank.dim());
    ce_gradient_from_probs(
        bank.temperature_inv,
        &unit.features,
        targets.labels(),
        &probs,
        &mut grad,
    );
    Ok(grad)
}

/// Mean cross-entropy plus `penalty_scale` times the anchor penalty.
pub fn probe_objective(
    bank: &PrototypeBank,
    anchors: &PrototypeBank,
    batch: &EmbeddingSet,
    penalty: Option<&PenaltyState>,
    penalty_scale: f64,
) -> Result<f64> {
    check_batch(bank, batch)?;
    let probs = probe_forward(bank, batch)?;
    let ce = cross_entropy(&probs, &batch.targets())?;
    let pen = match penalty {
        Some(state) => penalty_value(state, bank, anchors)?,
        None => 0.0,
    };
    Ok(ce + penalty_scale * pen)
}

/// Gradient of [`probe_objective`].
pub fn probe_objective_gradient(
    bank: &PrototypeBank,
    anchors: &PrototypeBank,
    batch: &EmbeddingSet,
    penalty: Option<&PenaltyState>,
    penalty_scale: f64,
) -> Result<Matrix> {
    let mut grad = ce_gradient(bank, batch, &batch.targets())?;
    if let Some(state) = penalty {
        if !bank.same_shape(anchors) {
            return Err(Error::shape(
                "objective anchors",
                bank.n_classes(),
                anchors.n_classes(),
            ));
        }
        accumulate_penalty_gradient(state, bank, anchors, penalty_scale, &mut grad);
    }
    Ok(grad)
}

/// One SGD-with-momentum step:
/// `velocity ← momentum·velocity + grad`, `w ← w − lr·velocity`, then
/// optionally re-normalize each row. The velocity is never projected.
pub fn sgd_step(
    bank: &PrototypeBank,
    grad: &Matrix,
    velocity: &Matrix,
    lr: f64,
    momentum: f64,
    project: bool,
) -> Result<(PrototypeBank, Matrix)> {
    if !grad.same_shape(&bank.weights) || !velocity.same_shape(&bank.weights) {
        return Err(Error::shape(
            "sgd_step",
            format!("{}x{}", bank.n_classes(), bank.dim()),
            format!(
                "{}x{} / {}x{}",
                grad.rows(),
                grad.cols(),
                velocity.rows(),
                velocity.cols()
            ),
        ));
    }
    let mut next = bank.clone();
    let mut vel = velocity.clone();
    momentum_update(&mut next.weights, &mut vel, grad, lr, momentum);
    if project {
        project_rows(&mut next)?;
    }
    Ok((next, vel))
}

fn momentum_update(
    weights: &mut Matrix,
    velocity: &mut Matrix,
    grad: &Matrix,
    lr: f64,
    momentum: f64,
) {
    for ((w, v), g) in weights
        .as_mut_slice()
        .iter_mut()
        .zip(velocity.as_mut_slice())
        .zip(grad.as_slice())
    {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

fn project_rows(bank: &mut PrototypeBank) -> Result<()> {
    for c in 0..bank.n_classes() {
        let row = bank.weights.row_mut(c);
        let n = crate::primitives::norm(row);
        if n.is_nan() || n < NORM_EPS {
            return Err(if n.is_finite() {
                Error::DegenerateVector { row: c, norm: n }
            } else {
                Error::Numerical {
                    context: format!("prototype {c} before projection"),
                }
            });
        }
        normalize_in_place(row, c)?;
    }
    bank.normalized = true;
    Ok(())
}

fn proximal_penalty(
    bank: &mut PrototypeBank,
    anchors: &PrototypeBank,
    state: &PenaltyState,
    lr: f64,
    scale: f64,
) {
    for c in 0..bank.n_classes() {
        let lambda = state.lambdas()[c];
        if lambda == 0.0 {
            continue;
        }
        let k = 2.0 * lr * scale * lambda;
        let t = anchors.weights.row(c);
        for (w, ti) in bank.weights.row_mut(c).iter_mut().zip(t) {
            *w = (*w + k * ti) / (1.0 + k);
        }
    }
}

/// Per-class `||w_c - t_c||`.
pub fn drift_norms(bank: &PrototypeBank, anchors: &PrototypeBank) -> Result<Vec<f64>> {
    if !bank.same_shape(anchors) {
        return Err(Error::shape(
            "drift_norms",
            format!("{}x{}", anchors.n_classes(), anchors.dim()),
            format!("{}x{}", bank.n_classes(), bank.dim()),
        ));
    }
    Ok(bank
        .weights
        .iter_rows()
        .zip(anchors.weights.iter_rows())
        .map(|(w, t)| {
            let mut sq = 0.0;
            for (a, b) in w.iter().zip(t) {
                sq += (a - b) * (a - b);
            }
            sq.sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective terms at the weights the epoch started from.
    pub ce: f64,
    pub penalty: f64,
    pub total: f64,
    pub lr: f64,
    /// `||w_c - t_c||` after the epoch's update.
    pub drift: Vec<f64>,
    pub max_norm_error: f64,
}

impl EpochRecord {
    pub fn mean_drift(&self) -> f64 {
        self.drift.iter().sum::<f64>() / self.drift.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub initial_lambdas: Option<Vec<f64>>,
    pub final_lambdas: Option<Vec<f64>>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "epoch,ce,penalty,total,lr,mean_drift";

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.ce,
                r.penalty,
                r.total,
                r.lr,
                r.mean_drift()
            );
        }
        out
    }
}

fn compare_rows(a: (&[f64], usize), b: (&[f64], usize)) -> Ordering {
    a.1.cmp(&b.1).then_with(|| {
        for (x, y) in a.0.iter().zip(b.0) {
            let o = x.to_bits().cmp(&y.to_bits());
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    })
}

/// Support rows, unit-normalized, in canonical order.
fn canonical_support(support: &SupportSet) -> Result<EmbeddingSet> {
    let data = support.data.normalized()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&i, &j| {
        compare_rows(
            (data.features.row(i), data.labels[i]),
            (data.features.row(j), data.labels[j]),
        )
    });
    Ok(data.subset(&order))
}

fn resolve_penalty(
    spec: &PenaltySpec,
    anchors: &PrototypeBank,
    support: &SupportSet,
) -> Result<PenaltyState> {
    let c = anchors.n_classes();
    let lambda_star = || init_lambda_star(anchors, support);
    let mut lambdas = match &spec.lambda {
        LambdaChoice::ClassWise => lambda_star()?,
        LambdaChoice::ConstantOne => vec![1.0; c],
        LambdaChoice::Avg => lambda_variants(&lambda_star()?)?.avg,
        LambdaChoice::Corrected => lambda_variants(&lambda_star()?)?.corrected,
        LambdaChoice::Uniform(x) => vec![*x; c],
        LambdaChoice::Explicit(v) => {
            if v.len() != c {
                return Err(Error::shape("explicit lambdas", c, v.len()));
            }
            v.clone()
        }
    };
    for l in lambdas.iter_mut() {
        *l *= spec.lambda_scale;
    }
    match spec.kind {
        PenaltyKind::Quadratic => PenaltyState::quadratic(lambdas),
        PenaltyKind::Phr => {
            for l in lambdas.iter_mut() {
                *l = l.clamp(LAMBDA_MIN, LAMBDA_MAX);
            }
            PenaltyState::phr(lambdas, spec.rho)
        }
    }
}

fn initial_bank(anchors: &PrototypeBank, config: &TrainConfig) -> Result<PrototypeBank> {
    match config.init {
        Init::ZeroShot => Ok(PrototypeBank {
            weights: anchors.weights.clone(),
            temperature_inv: config.temperature_inv,
            normalized: anchors.normalized,
        }),
        Init::RandomGaussian { sigma } => {
            let mut rng = Rng::stream(config.seed, STREAM_INIT);
            let (c, d) = (anchors.n_classes(), anchors.dim());
            let weights = Matrix::new(c, d, rng.normal_vec(c * d, sigma))?;
            PrototypeBank::normalized(&weights, config.temperature_inv)
        }
    }
}

/// Trains the probe on `support`, starting from `anchors` (or a random
/// initialization) and, when configured, penalizing deviation from them.
pub fn train_probe(
    anchors: &PrototypeBank,
    support: &SupportSet,
    config: &TrainConfig,
) -> Result<(PrototypeBank, TrainTrace)> {
    config.validate()?;
    if !anchors.normalized {
        return Err(Error::Domain("anchor bank must be unit-normalized".into()));
    }
    support.check_covers_classes()?;
    let support = &SupportSet {
        data: canonical_support(support)?,
        ..support.clone()
    };
    let data = &support.data;
    check_batch(anchors, data)?;

    let mut state = match &config.penalty {
        Some(spec) if config.outer_steps >= 1 => Some(resolve_penalty(spec, anchors, support)?),
        _ => None,
    };
    let scale = if config.penalty_mean_scale {
        1.0 / data.len() as f64
    } else {
        1.0
    };
    let proximal = config.penalty_step == PenaltyStep::Proximal;

    let mut bank = initial_bank(anchors, config)?;
    let (c, d) = (bank.n_classes(), bank.dim());
    let mut velocity = Matrix::zeros(c, d);
    let mut grad = Matrix::zeros(c, d);
    let mut trace = TrainTrace {
        epochs: Vec::with_capacity(config.epochs),
        initial_lambdas: state.as_ref().map(|s| s.lambdas().to_vec()),
        final_lambdas: None,
    };
    let mut shuffle_rng = Rng::stream(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut outer_updates = 0;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config)?;
        let probs = forward_unit(&bank, &data.features);
        let ce = cross_entropy(&probs, &data.targets()).map_err(|e| at_epoch(e, epoch))?;
        let pen = match &state {
            Some(s) => penalty_value(s, &bank, anchors)?,
            None => 0.0,
        };
        let total = ce + scale * pen;
        if !total.is_finite() {
            return Err(Error::Numerical {
                context: format!("training loss at epoch {epoch}"),
            });
        }

        match config.batch_mode {
            BatchMode::FullBatch => {
                grad.as_mut_slice().fill(0.0);
                ce_gradient_from_probs(
                    bank.temperature_inv,
                    &data.features,
                    &data.labels,
                    &probs,
                    &mut grad,
                );
                apply_step(
                    &mut bank,
                    &mut velocity,
                    &mut grad,
                    anchors,
                    state.as_ref(),
                    lr,
                    scale,
                    config,
                    proximal,
                )
                .map_err(|e| at_epoch(e, epoch))?;
            }
            BatchMode::MiniBatch { size } => {
                shuffle_rng.shuffle(&mut order);
                for chunk in order.chunks(size) {
                    let mut idx = chunk.to_vec();
                    idx.sort_unstable();
                    let features = data.features.select_rows(&idx);
                    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
                    let probs = forward_unit(&bank, &features);
                    grad.as_mut_slice().fill(0.0);
                    ce_gradient_from_probs(
                        bank.temperature_inv,
                        &features,
                        &labels,
                        &probs,
                        &mut grad,
                    );
                    apply_step(
                        &mut bank,
                        &mut velocity,
                        &mut grad,
                        anchors,
                        state.as_ref(),
                        lr,
                        scale,
                        config,
                        proximal,
                    )
                    .map_err(|e| at_epoch(e, epoch))?;
                }
            }
        }

        trace.epochs.push(EpochRecord {
            epoch,
            ce,
            penalty: pen,
            total,
            lr,
            drift: drift_norms(&bank, anchors)?,
            max_norm_error: bank.max_norm_error(),
        });

        if config.outer_steps > 1
            && outer_updates + 1 < config.outer_steps
            && epoch + 1 < config.epochs
        {
            if let Some(s) = &state {
                state = Some(alm_outer_update(s, &bank, anchors, support)?);
                outer_updates += 1;
            }
        }
    }
    trace.final_lambdas = state.as_ref().map(|s| s.lambdas().to_vec());
    Ok((bank, trace))
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numerical { context } => Error::Numerical {
            context: format!("{context} at epoch {epoch}"),
        },
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    bank: &mut PrototypeBank,
    velocity: &mut Matrix,
    grad: &mut Matrix,
    anchors: &PrototypeBank,
    state: Option<&PenaltyState>,
    lr: f64,
    scale: f64,
    config: &TrainConfig,
    proximal: bool,
) -> Result<()> {
    if let (Some(s), false) = (state, proximal) {
        accumulate_penalty_gradient(s, bank, anchors, scale, grad);
    }
    momentum_update(&mut bank.weights, velocity, grad, lr, config.momentum);
    if let (Some(s), true) = (state, proximal) {
        proximal_penalty(bank, anchors, s, lr / (1.0 - config.momentum), scale);
    }
    if config.project_unit_norm {
        project_rows(bank)?;
    } else {
        bank.normalized = false;
        if !bank.weights.is_finite() {
            return Err(Error::Numerical {
                context: "prototype weights after update".into(),
            });
        }
    }
    Ok(())
}
