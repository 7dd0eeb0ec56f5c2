#![allow(dead_code)]

use anchorprobe::data::{Rng, SupportSet};
use anchorprobe::{EmbeddingSet, Matrix, PrototypeBank};

pub fn random_bank(rng: &mut Rng, c: usize, d: usize, temperature_inv: f64) -> PrototypeBank {
    let w = Matrix::new(c, d, rng.normal_vec(c * d, 1.0)).unwrap();
    PrototypeBank::normalized(&w, temperature_inv).unwrap()
}

/// `per_class` base rows per class, each followed by `views` jittered copies.
pub fn random_set(rng: &mut Rng, per_class: usize, c: usize, d: usize, views: u32) -> EmbeddingSet {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut view_ids = Vec::new();
    for class in 0..c {
        for _ in 0..per_class {
            let base = rng.normal_vec(d, 1.0);
            for v in 0..=views {
                let row: Vec<f64> = if v == 0 {
                    base.clone()
                } else {
                    base.iter().map(|x| x + 0.1 * rng.normal()).collect()
                };
                rows.push(row);
                labels.push(class);
                view_ids.push(v);
            }
        }
    }
    let set = EmbeddingSet::new(
        Matrix::from_rows(&rows).unwrap(),
        labels,
        (views > 0).then_some(view_ids),
        (0..c).map(|i| format!("class_{i}")).collect(),
    )
    .unwrap();
    set.normalized().unwrap()
}

pub fn random_support(
    rng: &mut Rng,
    per_class: usize,
    c: usize,
    d: usize,
    views: u32,
) -> SupportSet {
    SupportSet::from_set(random_set(rng, per_class, c, d, views)).unwrap()
}

/// Central differences of `f` with respect to every weight of `bank`.
pub fn fd_gradient(bank: &PrototypeBank, h: f64, f: impl Fn(&PrototypeBank) -> f64) -> Matrix {
    let mut out = Matrix::zeros(bank.n_classes(), bank.dim());
    for i in 0..bank.n_classes() {
        for j in 0..bank.dim() {
            let mut plus = bank.clone();
            let mut minus = bank.clone();
            plus.weights.set(i, j, bank.weights.get(i, j) + h);
            minus.weights.set(i, j, bank.weights.get(i, j) - h);
            out.set(i, j, (f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    out
}

/// `||a - b|| / max(||a||, ||b||, floor)` over all entries.
pub fn relative_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = anchorprobe::norm(a.as_slice());
    let nb = anchorprobe::norm(b.as_slice());
    diff / na.max(nb).max(floor)
}
