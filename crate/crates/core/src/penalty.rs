//! Anchor penalties: the plain quadratic penalty, the PHR
//! penalty-Lagrangian, per-class multiplier state, and the multiplier
//! initialization / outer update used by the class-adaptive probe.
//!
//! Two readings of a scalar penalty applied to the vector `t_c - w_c` are
//! provided:
//!
//! * [`PenaltyKind::Quadratic`]: `λ_c ||t_c - w_c||²` (ρ unused).
//! * [`PenaltyKind::Phr`]: `Σ_d PHR(t_cd - w_cd, ρ_c, λ_c)`, i.e. PHR
//!   applied per coordinate and summed.

use serde::{Deserialize, Serialize};

use crate::data::SupportSet;
use crate::error::{Error, Result};
use crate::primitives::PrototypeBank;
use crate::zeroshot::predict_unit;

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;
pub const RHO_MAX: f64 = 1e6;
/// ρ doubles when the mean |deviation| shrank by less than this fraction.
pub const RHO_PROGRESS: f64 = 0.1;
pub const RHO_GROWTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Quadratic,
    Phr,
}

fn check_params(rho: f64, lambda: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) || !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!(
            "PHR needs rho > 0 and lambda > 0, got rho={rho}, lambda={lambda}"
        )));
    }
    Ok(())
}

#[inline]
fn phr_unchecked(z: f64, rho: f64, lambda: f64) -> f64 {
    if lambda + rho * z >= 0.0 {
        lambda * z + 0.5 * rho * z * z
    } else {
        -lambda * lambda / (2.0 * rho)
    }
}

#[inline]
fn phr_derivative_unchecked(z: f64, rho: f64, lambda: f64) -> f64 {
    (lambda + rho * z).max(0.0)
}

/// PHR penalty-Lagrangian:
/// `λz + ρz²/2` when `λ + ρz >= 0`, otherwise `-λ²/(2ρ)`.
pub fn phr(z: f64, rho: f64, lambda: f64) -> Result<f64> {
    check_params(rho, lambda)?;
    Ok(phr_unchecked(z, rho, lambda))
}

/// `∂PHR/∂z = max(λ + ρz, 0)`.
pub fn phr_derivative(z: f64, rho: f64, lambda: f64) -> Result<f64> {
    check_params(rho, lambda)?;
    Ok(phr_derivative_unchecked(z, rho, lambda))
}

/// Per-class multipliers `λ_c` and penalty parameters `ρ_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    lambdas: Vec<f64>,
    rhos: Vec<f64>,
    kind: PenaltyKind,
    /// Mean |t - w| per class at the previous outer step.
    last_deviation: Option<Vec<f64>>,
}

impl PenaltyState {
    /// Quadratic multipliers may be zero (switching a class's penalty off);
    /// PHR multipliers must be strictly positive. All ρ must be positive.
    pub fn new(lambdas: Vec<f64>, rhos: Vec<f64>, kind: PenaltyKind) -> Result<Self> {
        if lambdas.len() != rhos.len() {
            return Err(Error::shape("PenaltyState rhos", lambdas.len(), rhos.len()));
        }
        if lambdas.is_empty() {
            return Err(Error::EmptyInput("penalty state has no classes"));
        }
        for &l in &lambdas {
            let ok = match kind {
                PenaltyKind::Quadratic => l >= 0.0 && l.is_finite(),
                PenaltyKind::Phr => l > 0.0 && l.is_finite(),
            };
            if !ok {
                return Err(Error::Domain(format!(
                    "invalid multiplier {l} for {kind:?}"
                )));
            }
        }
        if let Some(&r) = rhos.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Domain(format!("invalid penalty parameter {r}")));
        }
        Ok(Self {
            lambdas,
            rhos,
            kind,
            last_deviation: None,
        })
    }

    /// Quadratic state with `ρ_c = 1`.
    pub fn quadratic(lambdas: Vec<f64>) -> Result<Self> {
        let rhos = vec![1.0; lambdas.len()];
        Self::new(lambdas, rhos, PenaltyKind::Quadratic)
    }

    /// PHR state with every `ρ_c` set to `rho`.
    pub fn phr(lambdas: Vec<f64>, rho: f64) -> Result<Self> {
        let rhos = vec![rho; lambdas.len()];
        Self::new(lambdas, rhos, PenaltyKind::Phr)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn n_classes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_zero(&self) -> bool {
        self.lambdas.iter().all(|&l| l == 0.0)
    }

    fn check_shapes(&self, protos: &PrototypeBank, anchors: &PrototypeBank) -> Result<()> {
        if !protos.same_shape(anchors) {
            return Err(Error::shape(
                "penalty prototypes vs anchors",
                format!("{}x{}", anchors.n_classes(), anchors.dim()),
                format!("{}x{}", protos.n_classes(), protos.dim()),
            ));
        }
        if self.n_classes() != protos.n_classes() {
            return Err(Error::shape(
                "penalty multipliers",
                protos.n_classes(),
                self.n_classes(),
            ));
        }
        Ok(())
    }
}

/// Value of the anchor penalty for prototypes `protos` and anchors `anchors`.
pub fn penalty_value(
    state: &PenaltyState,
    protos: &PrototypeBank,
    anchors: &PrototypeBank,
) -> Result<f64> {
    state.check_shapes(protos, anchors)?;
    let mut total = 0.0;
    for c in 0..state.n_classes() {
        let (w, t) = (protos.weights.row(c), anchors.weights.row(c));
        let (lambda, rho) = (state.lambdas[c], state.rhos[c]);
        match state.kind {
            PenaltyKind::Quadratic => {
                let mut sq = 0.0;
                for (ti, wi) in t.iter().zip(w) {
                    let z = ti - wi;
                    sq += z * z;
                }
                total += lambda * sq;
            }
            PenaltyKind::Phr => {
                for (ti, wi) in t.iter().zip(w) {
                    total += phr_unchecked(ti - wi, rho, lambda);
                }
            }
        }
    }
    Ok(total)
}

/// Adds `scale * ∂penalty/∂W` into `grad`, class by class.
pub(crate) fn accumulate_penalty_gradient(
    state: &PenaltyState,
    protos: &PrototypeBank,
    anchors: &PrototypeBank,
    scale: f64,
    grad: &mut crate::primitives::Matrix,
) {
    for c in 0..state.n_classes() {
        let (lambda, rho) = (state.lambdas[c], state.rhos[c]);
        if state.kind == PenaltyKind::Quadratic && lambda == 0.0 {
            continue;
        }
        let (w, t) = (protos.weights.row(c), anchors.weights.row(c));
        let g = grad.row_mut(c);
        for ((gi, wi), ti) in g.iter_mut().zip(w).zip(t) {
            let d = match state.kind {
                PenaltyKind::Quadratic => 2.0 * lambda * (wi - ti),
                PenaltyKind::Phr => -phr_derivative_unchecked(ti - wi, rho, lambda),
            };
            *gi += scale * d;
        }
    }
}

/// Gradient of [`penalty_value`] with respect to the prototypes.
pub fn penalty_gradient(
    state: &PenaltyState,
    protos: &PrototypeBank,
    anchors: &PrototypeBank,
) -> Result<crate::primitives::Matrix> {
    state.check_shapes(protos, anchors)?;
    let mut grad = crate::primitives::Matrix::zeros(protos.n_classes(), protos.dim());
    accumulate_penalty_gradient(state, protos, anchors, 1.0, &mut grad);
    Ok(grad)
}

/// Mean zero-shot probability of the true class over each class's support
/// rows. Every augmentation view counts as its own term.
pub fn init_lambda_star(anchors: &PrototypeBank, support: &SupportSet) -> Result<Vec<f64>> {
    let data = &support.data;
    let c = anchors.n_classes();
    if data.n_classes() != c {
        return Err(Error::shape(
            "init_lambda_star classes",
            c,
            data.n_classes(),
        ));
    }
    if data.dim() != anchors.dim() {
        return Err(Error::shape(
            "init_lambda_star dim",
            anchors.dim(),
            data.dim(),
        ));
    }
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    let mut probs = vec![0.0; c];
    let mut unit = vec![0.0; data.dim()];
    for (row, &label) in data.features.iter_rows().zip(&data.labels) {
        unit.copy_from_slice(row);
        crate::primitives::normalize_in_place(&mut unit, 0)?;
        predict_unit(anchors, &unit, &mut probs);
        sums[label] += probs[label];
        counts[label] += 1;
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass { class });
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect())
}

/// The multiplier choices compared in the ablations.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaVariants {
    pub class_wise: Vec<f64>,
    pub constant_one: Vec<f64>,
    pub avg: Vec<f64>,
    pub corrected: Vec<f64>,
}

pub fn lambda_variants(lambda_star: &[f64]) -> Result<LambdaVariants> {
    if lambda_star.is_empty() {
        return Err(Error::EmptyInput("lambda_star"));
    }
    if let Some(&bad) = lambda_star.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::Domain(format!(
            "lambda_star entries must lie in (0, 1], got {bad}"
        )));
    }
    let c = lambda_star.len();
    let mean = lambda_star.iter().sum::<f64>() / c as f64;
    Ok(LambdaVariants {
        class_wise: lambda_star.to_vec(),
        constant_one: vec![1.0; c],
        avg: vec![mean; c],
        corrected: lambda_star.iter().map(|l| l / mean).collect(),
    })
}

/// One outer step of the augmented-Lagrangian scheme (PHR kind only).
///
/// `λ_c ← mean over support rows and dimensions of PHR'(t_cd - w_cd, ρ_c, λ_c)`,
/// clamped to `[LAMBDA_MIN, LAMBDA_MAX]`. Because the deviation depends on
/// the class only, the support mean is over identical terms; the support
/// set still has to cover every class. Afterwards `ρ_c` doubles (capped at
/// `RHO_MAX`) when the class's mean |deviation| did not shrink by at least
/// 10% since the previous outer step.
pub fn alm_outer_update(
    state: &PenaltyState,
    protos: &PrototypeBank,
    anchors: &PrototypeBank,
    support: &SupportSet,
) -> Result<PenaltyState> {
    if state.kind != PenaltyKind::Phr {
        return Err(Error::UnsupportedKind);
    }
    state.check_shapes(protos, anchors)?;
    support.check_covers_classes()?;
    let c = state.n_classes();
    let d = protos.dim() as f64;
    let mut lambdas = Vec::with_capacity(c);
    let mut rhos = Vec::with_capacity(c);
    let mut deviations = Vec::with_capacity(c);
    for class in 0..c {
        let (w, t) = (protos.weights.row(class), anchors.weights.row(class));
        let (lambda, rho) = (state.lambdas[class], state.rhos[class]);
        let mut sum = 0.0;
        let mut abs_dev = 0.0;
        for (ti, wi) in t.iter().zip(w) {
            let z = ti - wi;
            sum += phr_derivative_unchecked(z, rho, lambda);
            abs_dev += z.abs();
        }
        lambdas.push((sum / d).clamp(LAMBDA_MIN, LAMBDA_MAX));
        let abs_dev = abs_dev / d;
        let stalled = state
            .last_deviation
            .as_ref()
            .is_some_and(|prev| abs_dev > (1.0 - RHO_PROGRESS) * prev[class]);
        rhos.push(if stalled {
            (rho * RHO_GROWTH).min(RHO_MAX)
        } else {
            rho
        });
        deviations.push(abs_dev);
    }
    Ok(PenaltyState {
        lambdas,
        rhos,
        kind: PenaltyKind::Phr,
        last_deviation: Some(deviations),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;
    use crate::primitives::{EmbeddingSet, Matrix};
    use approx::assert_abs_diff_eq;

    fn bank(rows: &[&[f64]]) -> PrototypeBank {
        PrototypeBank::raw(Matrix::from_rows(rows).unwrap(), 100.0).unwrap()
    }

    #[test]
    fn phr_examples() {
        assert_eq!(phr(0.0, 3.0, 0.7).unwrap(), 0.0);
        assert_eq!(phr(1.0, 1.0, 1.0).unwrap(), 1.5);
        assert_eq!(phr(-3.0, 1.0, 1.0).unwrap(), -0.5);
        assert!(matches!(phr(1.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(
            phr_derivative(1.0, 1.0, -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn phr_derivative_examples() {
        assert_eq!(phr_derivative(0.0, 5.0, 0.3).unwrap(), 0.3);
        assert_eq!(phr_derivative(-10.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(phr_derivative(2.0, 3.0, 1.0).unwrap(), 7.0);
    }

    #[test]
    fn phr_is_c1_at_branch_boundary() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let rho = 0.1 + 10.0 * rng.uniform();
            let lambda = 0.1 + 10.0 * rng.uniform();
            let z0 = -lambda / rho;
            // first branch evaluated at the boundary vs the constant branch
            let first = lambda * z0 + 0.5 * rho * z0 * z0;
            let second = -lambda * lambda / (2.0 * rho);
            assert!((first - second).abs() <= 1e-12 * (1.0 + second.abs()));
            assert!((lambda + rho * z0).abs() <= 1e-12 * lambda);
            // one-sided values approach the same limit
            let h = 1e-9;
            let left = phr(z0 - h, rho, lambda).unwrap();
            let right = phr(z0 + h, rho, lambda).unwrap();
            assert!((left - right).abs() < 1e-12 * (1.0 + rho));
        }
    }

    #[test]
    fn penalty_value_examples() {
        let t = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let q = PenaltyState::quadratic(vec![0.5, 2.0]).unwrap();
        let p = PenaltyState::phr(vec![0.5, 2.0], 1.0).unwrap();
        assert_eq!(penalty_value(&q, &t, &t).unwrap(), 0.0);
        assert_eq!(penalty_value(&p, &t, &t).unwrap(), 0.0);

        let w = bank(&[&[0.0, 0.0]]);
        let t1 = bank(&[&[1.0, 0.0]]);
        let q1 = PenaltyState::quadratic(vec![2.0]).unwrap();
        assert_eq!(penalty_value(&q1, &w, &t1).unwrap(), 2.0);

        let w2 = bank(&[&[0.3, -0.1], &[0.2, 0.9]]);
        let doubled = PenaltyState::quadratic(vec![1.0, 4.0]).unwrap();
        let v1 = penalty_value(&q, &w2, &t).unwrap();
        let v2 = penalty_value(&doubled, &w2, &t).unwrap();
        assert_abs_diff_eq!(v2, 2.0 * v1, epsilon = 1e-15);

        let short = bank(&[&[1.0, 0.0]]);
        assert!(matches!(
            penalty_value(&q, &short, &t),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn penalty_gradient_examples() {
        let t = bank(&[&[1.0, 0.0]]);
        let q = PenaltyState::quadratic(vec![1.0]).unwrap();
        let g = penalty_gradient(&q, &t, &t).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));

        let w = bank(&[&[4.0, 0.0]]);
        let g = penalty_gradient(&q, &w, &t).unwrap();
        assert_eq!(g.row(0), &[6.0, 0.0]);
    }

    fn central_difference(
        state: &PenaltyState,
        w: &PrototypeBank,
        t: &PrototypeBank,
        c: usize,
        d: usize,
    ) -> f64 {
        let h = 1e-6;
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus.weights.set(c, d, w.weights.get(c, d) + h);
        minus.weights.set(c, d, w.weights.get(c, d) - h);
        (penalty_value(state, &plus, t).unwrap() - penalty_value(state, &minus, t).unwrap())
            / (2.0 * h)
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        for trial in 0..100 {
            let c = 1 + rng.index(5);
            let d = 1 + rng.index(8);
            let w = PrototypeBank::raw(Matrix::new(c, d, rng.normal_vec(c * d, 0.5)).unwrap(), 1.0)
                .unwrap();
            let t = PrototypeBank::raw(Matrix::new(c, d, rng.normal_vec(c * d, 0.5)).unwrap(), 1.0)
                .unwrap();
            let lambdas: Vec<f64> = (0..c).map(|_| 0.05 + 2.0 * rng.uniform()).collect();
            let state = if trial % 2 == 0 {
                PenaltyState::quadratic(lambdas).unwrap()
            } else {
                let rhos = (0..c).map(|_| 0.1 + 3.0 * rng.uniform()).collect();
                PenaltyState::new(lambdas, rhos, PenaltyKind::Phr).unwrap()
            };
            let g = penalty_gradient(&state, &w, &t).unwrap();
            for ci in 0..c {
                for di in 0..d {
                    let fd = central_difference(&state, &w, &t, ci, di);
                    let an = g.get(ci, di);
                    let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                    // PHR kinks only in the second derivative; skip points
                    // straddling the branch boundary within the FD step
                    let z = t.weights.get(ci, di) - w.weights.get(ci, di);
                    let boundary = state.kind() == PenaltyKind::Phr
                        && (state.lambdas()[ci] + state.rhos()[ci] * z).abs() < 1e-5;
                    if !boundary {
                        assert!(rel < 1e-5, "trial {trial} ({ci},{di}): fd {fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn quadratic_value_permutation_invariant() {
        let w = bank(&[&[0.1, 0.2], &[0.5, -0.5], &[1.0, 1.0]]);
        let t = bank(&[&[0.0, 1.0], &[1.0, 0.0], &[0.6, 0.8]]);
        let state = PenaltyState::quadratic(vec![0.2, 1.5, 3.0]).unwrap();
        let perm = [2, 0, 1];
        let pw = PrototypeBank::raw(w.weights.select_rows(&perm), 100.0).unwrap();
        let pt = PrototypeBank::raw(t.weights.select_rows(&perm), 100.0).unwrap();
        let pl =
            PenaltyState::quadratic(perm.iter().map(|&i| state.lambdas()[i]).collect()).unwrap();
        let a = penalty_value(&state, &w, &t).unwrap();
        let b = penalty_value(&pl, &pw, &pt).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    fn support(rows: &[&[f64]], labels: Vec<usize>, c: usize) -> SupportSet {
        SupportSet::from_set(EmbeddingSet::from_rows(rows, labels, c).unwrap()).unwrap()
    }

    #[test]
    fn lambda_star_uniform_predictions() {
        // every sample is orthogonal to both prototypes -> uniform softmax
        let anchors = PrototypeBank::normalized(
            &Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(),
            100.0,
        )
        .unwrap();
        let s = support(
            &[&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0], &[0.0, 0.0, 1.0]],
            vec![0, 1, 1],
            2,
        );
        let l = init_lambda_star(&anchors, &s).unwrap();
        assert_eq!(l, vec![0.5, 0.5]);
    }

    #[test]
    fn lambda_star_samples_at_prototypes() {
        let anchors = PrototypeBank::normalized(
            &Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            100.0,
        )
        .unwrap();
        let s = support(&[&[1.0, 0.0], &[0.0, 1.0]], vec![0, 1], 2);
        let l = init_lambda_star(&anchors, &s).unwrap();
        for x in l {
            assert!((1.0 - x) < 1e-20 + f64::EPSILON);
            assert!(1.0 - x <= (-100f64).exp() + f64::EPSILON);
        }
    }

    #[test]
    fn lambda_star_hand_example() {
        // orthogonal prototypes at scale 10; a sample at angle θ from t_0
        // has p_0 = σ(10 (cos θ - sin θ)). Choose θ so p_0 is 0.9 and 0.7.
        let anchors =
            PrototypeBank::normalized(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), 10.0)
                .unwrap();
        let at = |p: f64| {
            let gap = (p / (1.0 - p)).ln() / 10.0;
            // cos θ - sin θ = √2 cos(θ + π/4)
            let theta = (gap / 2f64.sqrt()).acos() - std::f64::consts::FRAC_PI_4;
            vec![theta.cos(), theta.sin()]
        };
        let (a, b) = (at(0.9), at(0.7));
        let s = support(&[&a, &b, &[0.0, 1.0]], vec![0, 0, 1], 2);
        let l = init_lambda_star(&anchors, &s).unwrap();
        assert_abs_diff_eq!(l[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn lambda_star_missing_class() {
        let anchors =
            PrototypeBank::normalized(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), 1.0)
                .unwrap();
        let set = EmbeddingSet::from_rows(&[[1.0, 0.0]], vec![0], 2).unwrap();
        let s = SupportSet {
            shots: 1,
            seed: 0,
            chosen: vec![vec![0], vec![]],
            rows: vec![0],
            data: set,
        };
        assert!(matches!(
            init_lambda_star(&anchors, &s),
            Err(Error::MissingClass { class: 1 })
        ));
    }

    #[test]
    fn variants_examples() {
        let v = lambda_variants(&[0.2, 0.6]).unwrap();
        assert_abs_diff_eq!(v.avg[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(v.avg[1], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(v.corrected[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v.corrected[1], 1.5, epsilon = 1e-15);
        assert_eq!(v.constant_one, vec![1.0, 1.0]);
        assert_eq!(v.class_wise, vec![0.2, 0.6]);

        let u = lambda_variants(&[0.3; 4]).unwrap();
        assert_eq!(u.corrected, u.constant_one);

        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let n = 1 + rng.index(20);
            let l: Vec<f64> = (0..n).map(|_| 0.01 + 0.98 * rng.uniform()).collect();
            let v = lambda_variants(&l).unwrap();
            let mean = v.corrected.iter().sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() <= 1e-12);
        }
        assert!(lambda_variants(&[0.0, 0.5]).is_err());
    }

    #[test]
    fn outer_update_examples() {
        let t = bank(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let s = support(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], vec![0, 1], 2);
        let state = PenaltyState::phr(vec![0.3, 0.7], 1.0).unwrap();

        let same = alm_outer_update(&state, &t, &t, &s).unwrap();
        for (a, b) in same.lambdas().iter().zip(state.lambdas()) {
            assert!((a - b).abs() <= 1e-15 * b);
        }

        // t - w large and positive -> multiplier grows
        let w = bank(&[&[-1.0, -1.0, -1.0], &[-1.0, 0.0, -1.0]]);
        let up = alm_outer_update(&state, &w, &t, &s).unwrap();
        assert!(up.lambdas().iter().zip(state.lambdas()).all(|(n, o)| n > o));

        // t - w very negative -> derivative clamps to 0 -> floor
        let far = bank(&[&[10.0, 10.0, 10.0], &[10.0, 11.0, 10.0]]);
        let down = alm_outer_update(&state, &far, &t, &s).unwrap();
        assert_eq!(down.lambdas(), &[LAMBDA_MIN, LAMBDA_MIN]);

        let q = PenaltyState::quadratic(vec![0.3, 0.7]).unwrap();
        assert!(matches!(
            alm_outer_update(&q, &t, &t, &s),
            Err(Error::UnsupportedKind)
        ));
    }

    #[test]
    fn rho_doubles_when_deviation_stalls() {
        let t = bank(&[&[1.0, 0.0]]);
        let w = bank(&[&[0.5, 0.5]]);
        let s = support(&[&[1.0, 0.0]], vec![0], 1);
        let state = PenaltyState::phr(vec![0.5], 1.0).unwrap();
        let first = alm_outer_update(&state, &w, &t, &s).unwrap();
        assert_eq!(first.rhos(), &[1.0]);
        let second = alm_outer_update(&first, &w, &t, &s).unwrap();
        assert_eq!(second.rhos(), &[2.0]);
        let closer = bank(&[&[0.9, 0.1]]);
        let third = alm_outer_update(&second, &closer, &t, &s).unwrap();
        assert_eq!(third.rhos(), &[2.0]);
    }
}
