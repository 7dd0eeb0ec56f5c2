//! Shared domain types: row-major matrices, embedding sets, prototype banks,
//! one-hot targets, and the softmax / cross-entropy primitives.
//!
//! All arithmetic is `f64`. Sums run in ascending index order so that two
//! calls with the same inputs produce bitwise-identical outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with an ℓ2 norm below this are rejected as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// A row whose norm is within this distance of 1 is treated as already unit
/// and left untouched, which makes normalization idempotent bit for bit.
pub const UNIT_TOLERANCE: f64 = 1e-10;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> Option<f64> {
        if !self.same_shape(other) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Normalizes one vector in place. `row` is only used for error reporting.
pub(crate) fn normalize_in_place(v: &mut [f64], row: usize) -> Result<()> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::Numerical {
            context: format!("norm of row {row}"),
        });
    }
    if n < NORM_EPS {
        return Err(Error::DegenerateVector { row, norm: n });
    }
    if (n - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(());
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

/// Returns a unit-norm copy of `v`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out, 0)?;
    Ok(out)
}

/// ℓ2-normalizes every row of `m`.
///
/// Rows already within [`UNIT_TOLERANCE`] of unit norm are copied
/// unchanged, so applying this twice is a bitwise no-op the second time.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        normalize_in_place(out.row_mut(i), i)?;
    }
    Ok(out)
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax_scores(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax logits"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            context: "softmax logits".into(),
        });
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax without input validation; callers guarantee finite logits.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One-hot targets, stored as class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotBatch {
    labels: Vec<usize>,
    n_classes: usize,
}

impl OneHotBatch {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Entry `(m, c)` of the 0/1 target matrix.
    #[inline]
    pub fn get(&self, m: usize, c: usize) -> f64 {
        if self.labels[m] == c {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut out = Matrix::zeros(self.labels.len(), self.n_classes);
        for (m, &l) in self.labels.iter().enumerate() {
            out.set(m, l, 1.0);
        }
        out
    }
}

/// Mean cross-entropy of `probs` against one-hot `targets`.
pub fn cross_entropy(probs: &Matrix, targets: &OneHotBatch) -> Result<f64> {
    if probs.rows() != targets.len() || probs.cols() != targets.n_classes() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{}x{}", targets.len(), targets.n_classes()),
            format!("{}x{}", probs.rows(), probs.cols()),
        ));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("cross_entropy batch"));
    }
    let mut total = 0.0;
    for (m, &label) in targets.labels().iter().enumerate() {
        total -= probs.get(m, label).max(LOG_CLAMP).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Feature vectors with labels and optional augmentation-view tags.
///
/// View rows (`view_id > 0`) belong to the nearest preceding row with
/// `view_id == 0`, so a base sample and its views are stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub views: Option<Vec<u32>>,
    pub class_names: Vec<String>,
    /// Maps local class `i` to a class of a larger parent label space.
    pub parent_class_ids: Option<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        views: Option<Vec<u32>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let set = Self {
            features,
            labels,
            views,
            class_names,
            parent_class_ids: None,
        };
        set.validate()?;
        Ok(set)
    }

    /// Convenience constructor with generated class names `class_0..`.
    pub fn from_rows<R: AsRef<[f64]>>(
        rows: &[R],
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let names = (0..n_classes).map(|c| format!("class_{c}")).collect();
        Self::new(Matrix::from_rows(rows)?, labels, None, names)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.features.rows();
        if m == 0 {
            return Err(Error::EmptyInput("embedding set has no rows"));
        }
        if self.features.cols() == 0 {
            return Err(Error::EmptyInput("embedding dimension is zero"));
        }
        if self.labels.len() != m {
            return Err(Error::shape("EmbeddingSet labels", m, self.labels.len()));
        }
        if let Some(views) = &self.views {
            if views.len() != m {
                return Err(Error::shape("EmbeddingSet views", m, views.len()));
            }
            if views[0] != 0 {
                return Err(Error::Domain(
                    "first row must be a base sample (view 0)".into(),
                ));
            }
        }
        let c = self.class_names.len();
        if c == 0 {
            return Err(Error::EmptyInput("embedding set has no classes"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::Numerical {
                context: "embedding features".into(),
            });
        }
        if let Some(parents) = &self.parent_class_ids {
            if parents.len() != c {
                return Err(Error::shape("parent_class_ids", c, parents.len()));
            }
        }
        Ok(())
    }

    /// Additionally requires every class to appear at least once.
    pub fn validate_training_split(&self) -> Result<()> {
        self.validate()?;
        let counts = self.class_counts();
        if let Some(class) = counts.iter().position(|&n| n == 0) {
            return Err(Error::MissingClass { class });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn view_id(&self, row: usize) -> u32 {
        self.views.as_ref().map_or(0, |v| v[row])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn targets(&self) -> OneHotBatch {
        OneHotBatch {
            labels: self.labels.clone(),
            n_classes: self.n_classes(),
        }
    }

    /// Copy with every row ℓ2-normalized.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            features: l2_normalize_rows(&self.features)?,
            ..self.clone()
        })
    }

    /// Rows at `indices`, in order, with metadata carried over.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            views: self
                .views
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            class_names: self.class_names.clone(),
            parent_class_ids: self.parent_class_ids.clone(),
        }
    }
}

/// `C` class prototypes with a logit scale (`1/τ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub weights: Matrix,
    pub temperature_inv: f64,
    pub normalized: bool,
}

impl PrototypeBank {
    /// Normalizes every row and marks the bank as unit-norm.
    pub fn normalized(weights: &Matrix, temperature_inv: f64) -> Result<Self> {
        check_temperature(temperature_inv)?;
        Ok(Self {
            weights: l2_normalize_rows(weights)?,
            temperature_inv,
            normalized: true,
        })
    }

    /// Wraps `weights` as-is; rows are not required to be unit-norm.
    pub fn raw(weights: Matrix, temperature_inv: f64) -> Result<Self> {
        check_temperature(temperature_inv)?;
        if !weights.is_finite() {
            return Err(Error::Numerical {
                context: "prototype weights".into(),
            });
        }
        Ok(Self {
            weights,
            temperature_inv,
            normalized: false,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn same_shape(&self, other: &PrototypeBank) -> bool {
        self.weights.same_shape(&other.weights)
    }

    /// Scaled logits `(v · w_c) / τ` for one embedding.
    pub fn logits(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape("logits", self.dim(), v.len()));
        }
        Ok(self
            .weights
            .iter_rows()
            .map(|w| dot(v, w) * self.temperature_inv)
            .collect())
    }

    /// Largest `| ||w_c|| - 1 |` over rows.
    pub fn max_norm_error(&self) -> f64 {
        self.weights
            .iter_rows()
            .map(|w| (norm(w) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_temperature(temperature_inv: f64) -> Result<()> {
    if !(temperature_inv > 0.0 && temperature_inv.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature_inv must be positive and finite, got {temperature_inv}"
        )));
    }
    Ok(())
}
