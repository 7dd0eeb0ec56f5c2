//! Seeded K-shot support-set selection.

use crate::data::rng::Rng;
use crate::error::{Error, Result};
use crate::primitives::EmbeddingSet;

/// K base samples per class plus all of their augmentation views.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub shots: usize,
    pub seed: u64,
    /// Chosen base-sample row indices of the parent set, per class, ascending.
    pub chosen: Vec<Vec<usize>>,
    /// Parent row indices of every support row (bases and views), class-major.
    pub rows: Vec<usize>,
    /// The support rows themselves, in the order of `rows`.
    pub data: EmbeddingSet,
}

impl SupportSet {
    /// Uses every row of `data` as support. `shots` is the smallest per-class
    /// base-sample count; `seed` is 0.
    pub fn from_set(data: EmbeddingSet) -> Result<Self> {
        data.validate_training_split()?;
        let groups = base_groups(&data);
        let mut chosen = vec![Vec::new(); data.n_classes()];
        for (base, _) in &groups {
            chosen[data.labels[*base]].push(*base);
        }
        let shots = chosen.iter().map(Vec::len).min().unwrap_or(0);
        Ok(Self {
            shots,
            seed: 0,
            chosen,
            rows: (0..data.len()).collect(),
            data,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.data.n_classes()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fails with `MissingClass` if some class has no support rows.
    pub fn check_covers_classes(&self) -> Result<()> {
        let counts = self.data.class_counts();
        match counts.iter().position(|&n| n == 0) {
            Some(class) => Err(Error::MissingClass { class }),
            None => Ok(()),
        }
    }
}

/// Pairs every base row with the view rows that follow it.
pub fn base_groups(data: &EmbeddingSet) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for row in 0..data.len() {
        if data.view_id(row) == 0 {
            groups.push((row, Vec::new()));
        } else if let Some(last) = groups.last_mut() {
            last.1.push(row);
        }
    }
    groups
}

/// Draws `k` distinct base samples per class without replacement and
/// attaches their augmentation views.
///
/// Classes are visited in ascending order from one RNG stream seeded with
/// `seed`; within a class the candidates are the base rows in ascending
/// index order and a partial Fisher-Yates shuffle picks the first `k`.
pub fn sample_few_shot(data: &EmbeddingSet, k: usize, seed: u64) -> Result<SupportSet> {
    if k == 0 {
        return Err(Error::InvalidConfig("shots must be at least 1".into()));
    }
    data.validate()?;
    let groups = base_groups(data);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (g, (base, views)) in groups.iter().enumerate() {
        let label = data.labels[*base];
        if let Some(&bad) = views.iter().find(|&&v| data.labels[v] != label) {
            return Err(Error::Domain(format!(
                "view row {bad} has a different label than its base row {base}"
            )));
        }
        per_class[label].push(g);
    }

    let mut rng = Rng::new(seed);
    let mut chosen = Vec::with_capacity(per_class.len());
    let mut rows = Vec::new();
    for (class, candidates) in per_class.iter().enumerate() {
        let n = candidates.len();
        if n < k {
            return Err(Error::InsufficientShots {
                class,
                available: n,
                requested: k,
            });
        }
        let mut pool = candidates.clone();
        for i in 0..k {
            let j = i + rng.index(n - i);
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool[..k].to_vec();
        picked.sort_unstable();
        for &g in &picked {
            let (base, views) = &groups[g];
            rows.push(*base);
            rows.extend_from_slice(views);
        }
        chosen.push(picked.iter().map(|&g| groups[g].0).collect());
    }

    Ok(SupportSet {
        shots: k,
        seed,
        chosen,
        data: data.subset(&rows),
        rows,
    })
}
