//! Text-derived class prototypes and zero-shot inference.

use crate::error::{Error, Result};
use crate::primitives::{
    argmax, normalize_in_place, softmax_in_place, EmbeddingSet, Matrix, PrototypeBank, NORM_EPS,
};

/// Logit scale used when none is given.
pub const DEFAULT_TEMPERATURE_INV: f64 = 100.0;

/// Per-class prompt-ensemble embeddings; `classes[c]` holds `N_c >= 1` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddings {
    classes: Vec<Vec<Vec<f64>>>,
    dim: usize,
}

impl PromptEmbeddings {
    pub fn new(classes: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyInput("prompt embeddings have no classes"));
        }
        let dim = classes
            .iter()
            .flatten()
            .next()
            .map(Vec::len)
            .ok_or(Error::EmptyInput("prompt embeddings have no vectors"))?;
        for (c, prompts) in classes.iter().enumerate() {
            if prompts.is_empty() {
                return Err(Error::MissingClass { class: c });
            }
            for p in prompts {
                if p.len() != dim {
                    return Err(Error::shape("PromptEmbeddings", dim, p.len()));
                }
                if p.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical {
                        context: format!("prompt embedding of class {c}"),
                    });
                }
            }
        }
        Ok(Self { classes, dim })
    }

    /// Groups the rows of a feature container by label: each row is one
    /// prompt embedding of class `label`.
    pub fn from_embedding_set(set: &EmbeddingSet) -> Result<Self> {
        let mut classes = vec![Vec::new(); set.n_classes()];
        for (i, &label) in set.labels.iter().enumerate() {
            classes[label].push(set.features.row(i).to_vec());
        }
        Self::new(classes)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class(&self, c: usize) -> &[Vec<f64>] {
        &self.classes[c]
    }
}

/// Mean of the ℓ2-normalized prompt embeddings of each class, before any
/// renormalization of the mean.
pub fn text_prototype_centers(prompts: &PromptEmbeddings) -> Result<Matrix> {
    let c = prompts.n_classes();
    let d = prompts.dim();
    let mut centers = Matrix::zeros(c, d);
    for class in 0..c {
        let list = prompts.class(class);
        let row = centers.row_mut(class);
        for p in list {
            let mut unit = p.clone();
            normalize_in_place(&mut unit, class)?;
            for (acc, x) in row.iter_mut().zip(&unit) {
                *acc += x;
            }
        }
        let n = list.len() as f64;
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    Ok(centers)
}

/// Builds class prototypes from prompt ensembles.
///
/// With `renormalize` the averaged center is projected back onto the unit
/// sphere (the default used everywhere else in the crate); without it the
/// raw center is kept and the bank is flagged as not normalized.
pub fn build_text_prototypes_with(
    prompts: &PromptEmbeddings,
    temperature_inv: f64,
    renormalize: bool,
) -> Result<PrototypeBank> {
    let centers = text_prototype_centers(prompts)?;
    for (c, row) in centers.iter_rows().enumerate() {
        let n = crate::primitives::norm(row);
        if n < NORM_EPS {
            return Err(Error::DegenerateVector { row: c, norm: n });
        }
    }
    if renormalize {
        PrototypeBank::normalized(&centers, temperature_inv)
    } else {
        PrototypeBank::raw(centers, temperature_inv)
    }
}

pub fn build_text_prototypes(prompts: &PromptEmbeddings) -> Result<PrototypeBank> {
    build_text_prototypes_with(prompts, DEFAULT_TEMPERATURE_INV, true)
}

/// Class probabilities for one embedding `v`. Shared by the zero-shot path
/// and the trained probe so both produce identical bits.
pub(crate) fn predict_unit(bank: &PrototypeBank, v: &[f64], out: &mut [f64]) {
    for (o, w) in out.iter_mut().zip(bank.weights.iter_rows()) {
        *o = crate::primitives::dot(v, w) * bank.temperature_inv;
    }
    softmax_in_place(out);
}

/// Softmax over temperature-scaled cosine similarities to the prototypes.
/// `v` is normalized first if it is not already unit-norm.
pub fn zero_shot_predict(bank: &PrototypeBank, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != bank.dim() {
        return Err(Error::shape("zero_shot_predict", bank.dim(), v.len()));
    }
    let mut unit = v.to_vec();
    normalize_in_place(&mut unit, 0)?;
    let mut out = vec![0.0; bank.n_classes()];
    predict_unit(bank, &unit, &mut out);
    Ok(out)
}

/// Argmax class of each row (lowest index on ties).
pub fn predict_labels(bank: &PrototypeBank, data: &EmbeddingSet) -> Result<Vec<usize>> {
    if data.dim() != bank.dim() {
        return Err(Error::shape("predict_labels", bank.dim(), data.dim()));
    }
    let mut logits = vec![0.0; bank.n_classes()];
    Ok(data
        .features
        .iter_rows()
        .map(|v| {
            for (o, w) in logits.iter_mut().zip(bank.weights.iter_rows()) {
                *o = crate::primitives::dot(v, w);
            }
            argmax(&logits)
        })
        .collect())
}

/// Fraction of rows whose predicted class equals the label.
pub fn zero_shot_accuracy(bank: &PrototypeBank, data: &EmbeddingSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("zero_shot_accuracy data"));
    }
    let predicted = predict_labels(bank, data)?;
    let hits = predicted
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}
