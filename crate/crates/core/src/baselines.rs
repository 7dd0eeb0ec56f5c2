//! Reference adapters: training-free TIP-Adapter logit fusion, the TaskRes
//! reparameterization viewed as a learning-rate rescaling, and a linear
//! probe started from random prototypes.

use serde::{Deserialize, Serialize};

use crate::data::SupportSet;
use crate::error::{Error, Result};
use crate::primitives::{argmax, dot, norm, EmbeddingSet, Matrix, OneHotBatch, PrototypeBank};
use crate::probe::{ce_gradient, train_probe, Init, TrainConfig, TrainTrace, DEFAULT_INIT_SIGMA};

const KEY_NORM_TOLERANCE: f64 = 1e-9;

/// Cached support features (keys) with their one-hot labels (values).
#[derive(Debug, Clone, PartialEq)]
pub struct TipCache {
    keys: Matrix,
    values: OneHotBatch,
    pub alpha: f64,
    pub beta: f64,
}

impl TipCache {
    /// `alpha` and `beta` may be zero: `alpha = 0` switches the cache off,
    /// `beta = 0` gives every key affinity 1.
    pub fn new(keys: Matrix, values: OneHotBatch, alpha: f64, beta: f64) -> Result<Self> {
        if keys.rows() != values.len() {
            return Err(Error::shape("TipCache values", keys.rows(), values.len()));
        }
        if keys.rows() == 0 {
            return Err(Error::EmptyInput("TipCache keys"));
        }
        for (row, k) in keys.iter_rows().enumerate() {
            let n = norm(k);
            if n.is_nan() || (n - 1.0).abs() > KEY_NORM_TOLERANCE {
                return Err(Error::Domain(format!(
                    "cache key {row} has norm {n}, expected 1"
                )));
            }
        }
        for (name, x) in [("alpha", alpha), ("beta", beta)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Domain(format!(
                    "{name} must be finite and >= 0, got {x}"
                )));
            }
        }
        Ok(Self {
            keys,
            values,
            alpha,
            beta,
        })
    }

    /// Every support row (views included) becomes a key.
    pub fn from_support(support: &SupportSet, alpha: f64, beta: f64) -> Result<Self> {
        let data = support.data.normalized()?;
        let values = data.targets();
        Self::new(data.features, values, alpha, beta)
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &OneHotBatch {
        &self.values
    }

    pub fn n_classes(&self) -> usize {
        self.values.n_classes()
    }
}

/// `alpha * Σ_m exp(-beta (1 - v·k_m)) onehot(y_m)`.
pub fn tip_vision_logits(cache: &TipCache, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != cache.keys.cols() {
        return Err(Error::shape(
            "tip_vision_logits",
            cache.keys.cols(),
            v.len(),
        ));
    }
    let mut out = vec![0.0; cache.n_classes()];
    for (m, k) in cache.keys.iter_rows().enumerate() {
        let affinity = (-cache.beta * (1.0 - dot(v, k))).exp();
        out[cache.values.labels()[m]] += affinity;
    }
    for o in out.iter_mut() {
        *o *= cache.alpha;
    }
    Ok(out)
}

/// Cache logits plus zero-shot logits `temperature_inv · v·t_c`. With
/// `alpha = 0` the result is exactly the zero-shot logits.
pub fn tip_adapter_logits(
    cache: &TipCache,
    anchors: &PrototypeBank,
    v: &[f64],
) -> Result<Vec<f64>> {
    if cache.n_classes() != anchors.n_classes() {
        return Err(Error::shape(
            "tip_adapter_logits classes",
            anchors.n_classes(),
            cache.n_classes(),
        ));
    }
    if cache.keys.cols() != anchors.dim() {
        return Err(Error::shape(
            "tip_adapter_logits dim",
            anchors.dim(),
            cache.keys.cols(),
        ));
    }
    let mut logits = anchors.logits(v)?;
    if cache.alpha != 0.0 {
        for (l, x) in logits.iter_mut().zip(tip_vision_logits(cache, v)?) {
            *l += x;
        }
    }
    Ok(logits)
}

/// Argmax of the fused logits for every row of `data`.
pub fn tip_adapter_predict(
    cache: &TipCache,
    anchors: &PrototypeBank,
    data: &EmbeddingSet,
) -> Result<Vec<usize>> {
    data.features
        .iter_rows()
        .map(|v| tip_adapter_logits(cache, anchors, v).map(|l| argmax(&l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResReport {
    pub alpha: f64,
    pub eta: f64,
    pub steps: usize,
    /// Max over steps of `|w_taskres - w_lp|` with the plain probe at `lr = eta·alpha`.
    pub max_diff_lr_eta_alpha: f64,
    /// Same, with the plain probe at `lr = eta·alpha²`.
    pub max_diff_lr_eta_alpha_sq: f64,
    /// The learned residual `w_r` after the last step.
    pub residual: Matrix,
}

impl TaskResReport {
    pub fn max_diff(&self) -> f64 {
        self.max_diff_lr_eta_alpha
    }
}

fn plain_step(w: &mut Matrix, grad: &Matrix, lr: f64) {
    for (wi, gi) in w.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *wi -= lr * gi;
    }
}

fn ce_grad_at(
    weights: &Matrix,
    temperature_inv: f64,
    data: &EmbeddingSet,
    targets: &OneHotBatch,
) -> Result<Matrix> {
    let bank = PrototypeBank::raw(weights.clone(), temperature_inv)?;
    ce_gradient(&bank, data, targets)
}

/// Trains `w = t + alpha·w_r` (with `w_r = 0` at start) by plain full-batch
/// gradient descent on `w_r` at rate `eta`, next to plain probes on `w`
/// started at `t`, and reports how far the trajectories drift apart.
/// No momentum and no projection, so every step is a pure gradient step.
pub fn taskres_step_equivalence(
    alpha: f64,
    eta: f64,
    anchors: &PrototypeBank,
    support: &SupportSet,
    steps: usize,
) -> Result<TaskResReport> {
    for (name, x) in [("alpha", alpha), ("eta", eta)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{name} must be positive, got {x}"
            )));
        }
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    support.check_covers_classes()?;
    let data = support.data.normalized()?;
    let targets = data.targets();
    let t = anchors.temperature_inv;

    let mut residual = Matrix::zeros(anchors.n_classes(), anchors.dim());
    let mut lp_a = anchors.weights.clone();
    let mut lp_a2 = anchors.weights.clone();
    let (mut diff_a, mut diff_a2) = (0.0f64, 0.0f64);

    for _ in 0..steps {
        let mut w = anchors.weights.clone();
        for (wi, ri) in w.as_mut_slice().iter_mut().zip(residual.as_slice()) {
            *wi += alpha * ri;
        }
        // ∂L/∂w_r = alpha · ∂L/∂w
        let mut g_r = ce_grad_at(&w, t, &data, &targets)?;
        for g in g_r.as_mut_slice() {
            *g *= alpha;
        }
        plain_step(&mut residual, &g_r, eta);

        let g = ce_grad_at(&lp_a, t, &data, &targets)?;
        plain_step(&mut lp_a, &g, eta * alpha);
        let g = ce_grad_at(&lp_a2, t, &data, &targets)?;
        plain_step(&mut lp_a2, &g, eta * alpha * alpha);

        let mut w = anchors.weights.clone();
        for (wi, ri) in w.as_mut_slice().iter_mut().zip(residual.as_slice()) {
            *wi += alpha * ri;
        }
        diff_a = diff_a.max(w.max_abs_diff(&lp_a).unwrap_or(f64::INFINITY));
        diff_a2 = diff_a2.max(w.max_abs_diff(&lp_a2).unwrap_or(f64::INFINITY));
    }
    if !(diff_a.is_finite() && diff_a2.is_finite()) {
        return Err(Error::Numerical {
            context: "taskres trajectories".into(),
        });
    }
    Ok(TaskResReport {
        alpha,
        eta,
        steps,
        max_diff_lr_eta_alpha: diff_a,
        max_diff_lr_eta_alpha_sq: diff_a2,
        residual,
    })
}

/// Linear probe from random prototypes (`N(0, σ)` rows, projected), no
/// penalty. Anchors only fix the shape and serve as the drift reference.
pub fn random_lp(
    anchors: &PrototypeBank,
    support: &SupportSet,
    config: &TrainConfig,
) -> Result<(PrototypeBank, TrainTrace)> {
    let init = match config.init {
        Init::RandomGaussian { .. } => config.init,
        Init::ZeroShot => Init::RandomGaussian {
            sigma: DEFAULT_INIT_SIGMA,
        },
    };
    let config = TrainConfig {
        init,
        penalty: None,
        outer_steps: 0,
        ..config.clone()
    };
    train_probe(anchors, support, &config)
}
