//! Synthetic few-shot tasks on the unit sphere.
//!
//! Each class has a ground-truth direction `mu_c`. Samples are
//! `normalize(mu_c + sigma * z)` with `z ~ N(0, I)`; augmentation views of a
//! training sample are `normalize(x + view_sigma * z')`. The returned
//! anchors play the role of text prototypes: they equal `mu_c` unless
//! `anchor_noise > 0`, in which case they are perturbed copies.
//!
//! Random streams (see [`Rng::stream`]): 0 class directions, 1 anchor
//! noise, 2 training samples, 3 test samples, 4 test-time shift.

use serde::{Deserialize, Serialize};

use crate::data::rng::Rng;
use crate::error::{Error, Result};
use crate::primitives::{dot, normalize_in_place, EmbeddingSet, Matrix, PrototypeBank};
use crate::zeroshot::DEFAULT_TEMPERATURE_INV;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Canonical basis vectors `e_0 .. e_{C-1}`; requires `C <= D`.
    Orthogonal,
    /// Random unit directions with pairwise angles of at least the given
    /// number of degrees (rejection sampled).
    RandomUnit { min_pairwise_angle_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shift {
    #[default]
    None,
    /// Each test class direction is rotated by `angle_deg` toward a random
    /// direction orthogonal to it.
    Rotate { angle_deg: f64 },
    /// Test samples use `sigma` instead of the task's noise level.
    NoiseBoost { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub name: String,
    pub n_classes: usize,
    pub dim: usize,
    pub geometry: Geometry,
    /// Per-coordinate standard deviation of the intra-class noise.
    pub sigma: f64,
    #[serde(default)]
    pub shift: Shift,
    /// Base samples per class in the training pool.
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Augmentation views per training sample.
    #[serde(default)]
    pub views: usize,
    #[serde(default)]
    pub view_sigma: f64,
    #[serde(default)]
    pub anchor_noise: f64,
    pub seed: u64,
}

const DEFAULT_SPEC: &str = include_str!("../../synthetic/default.toml");
const NOISY_SPEC: &str = include_str!("../../synthetic/noisy.toml");

impl SyntheticTaskSpec {
    /// Names of the task specs shipped with the crate.
    pub const BUNDLED: [&'static str; 2] = ["default", "noisy"];

    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "default" => DEFAULT_SPEC,
            "noisy" => NOISY_SPEC,
            _ => return None,
        };
        Some(Self::from_toml(text).expect("bundled synthetic spec parses"))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig(
                "n_classes and dim must be positive".into(),
            ));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig("pool sizes must be positive".into()));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("view_sigma", self.view_sigma),
            ("anchor_noise", self.anchor_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if let Shift::NoiseBoost { sigma } = self.shift {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidConfig(
                    "shift sigma must be finite and >= 0".into(),
                ));
            }
        }
        if self.geometry == Geometry::Orthogonal && self.n_classes > self.dim {
            return Err(Error::Geometry(format!(
                "{} orthogonal classes do not fit in dimension {}",
                self.n_classes, self.dim
            )));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub name: String,
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub anchors: PrototypeBank,
    /// Ground-truth class directions of the training distribution.
    pub directions: Matrix,
}

fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = rng.normal_vec(dim, 1.0);
        if normalize_in_place(&mut v, 0).is_ok() {
            return v;
        }
    }
}

fn class_directions(spec: &SyntheticTaskSpec) -> Result<Matrix> {
    let (c, d) = (spec.n_classes, spec.dim);
    match spec.geometry {
        Geometry::Orthogonal => {
            let mut m = Matrix::zeros(c, d);
            for i in 0..c {
                m.set(i, i, 1.0);
            }
            Ok(m)
        }
        Geometry::RandomUnit {
            min_pairwise_angle_deg,
        } => {
            let max_cos = min_pairwise_angle_deg.to_radians().cos();
            let mut rng = Rng::stream(spec.seed, 0);
            let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(c);
            let mut attempts = 0;
            while dirs.len() < c {
                attempts += 1;
                if attempts > MAX_PLACEMENT_ATTEMPTS * c {
                    return Err(Error::Geometry(format!(
                        "could not place {c} directions in dimension {d} with pairwise angle >= {min_pairwise_angle_deg} deg"
                    )));
                }
                let v = random_unit(&mut rng, d);
                if dirs.iter().all(|u| dot(u, &v) <= max_cos) {
                    dirs.push(v);
                }
            }
            Matrix::from_rows(&dirs)
        }
    }
}

fn noisy_sample(rng: &mut Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = center.iter().map(|&m| m + sigma * rng.normal()).collect();
        if normalize_in_place(&mut x, 0).is_ok() {
            return x;
        }
    }
}

fn class_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class_{i}")).collect()
}

/// Builds train/test splits and anchors for a synthetic task. Bitwise
/// reproducible for a given spec.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let (c, d) = (spec.n_classes, spec.dim);
    let directions = class_directions(spec)?;

    let anchors = if spec.anchor_noise > 0.0 {
        let mut rng = Rng::stream(spec.seed, 1);
        let rows: Vec<Vec<f64>> = directions
            .iter_rows()
            .map(|mu| noisy_sample(&mut rng, mu, spec.anchor_noise))
            .collect();
        PrototypeBank::normalized(&Matrix::from_rows(&rows)?, DEFAULT_TEMPERATURE_INV)?
    } else {
        PrototypeBank::normalized(&directions, DEFAULT_TEMPERATURE_INV)?
    };

    let mut rng = Rng::stream(spec.seed, 2);
    let mut rows = Vec::with_capacity(c * spec.train_per_class * (spec.views + 1));
    let mut labels = Vec::with_capacity(rows.capacity());
    let mut views = Vec::with_capacity(rows.capacity());
    for class in 0..c {
        let mu = directions.row(class);
        for _ in 0..spec.train_per_class {
            let base = noisy_sample(&mut rng, mu, spec.sigma);
            let augmented: Vec<Vec<f64>> = (0..spec.views)
                .map(|_| noisy_sample(&mut rng, &base, spec.view_sigma))
                .collect();
            rows.push(base);
            rows.extend(augmented);
            labels.extend(std::iter::repeat_n(class, spec.views + 1));
            views.extend(0..=spec.views as u32);
        }
    }
    let train = EmbeddingSet::new(
        Matrix::from_rows(&rows)?,
        labels,
        if spec.views > 0 { Some(views) } else { None },
        class_names(c),
    )?;

    let mut test_dirs = directions.clone();
    let mut test_sigma = spec.sigma;
    match spec.shift {
        Shift::None => {}
        Shift::NoiseBoost { sigma } => test_sigma = sigma,
        Shift::Rotate { angle_deg } => {
            let (sin, cos) = angle_deg.to_radians().sin_cos();
            let mut rng = Rng::stream(spec.seed, 4);
            for class in 0..c {
                let mu = directions.row(class).to_vec();
                let mut u = loop {
                    let g = random_unit(&mut rng, d);
                    let proj = dot(&g, &mu);
                    let mut u: Vec<f64> = g.iter().zip(&mu).map(|(g, m)| g - proj * m).collect();
                    if normalize_in_place(&mut u, class).is_ok() {
                        break u;
                    }
                };
                for (x, m) in u.iter_mut().zip(&mu) {
                    *x = cos * m + sin * *x;
                }
                test_dirs.row_mut(class).copy_from_slice(&u);
            }
        }
    }

    let mut rng = Rng::stream(spec.seed, 3);
    let mut test_rows = Vec::with_capacity(c * spec.test_per_class);
    let mut test_labels = Vec::with_capacity(test_rows.capacity());
    for class in 0..c {
        for _ in 0..spec.test_per_class {
            test_rows.push(noisy_sample(&mut rng, test_dirs.row(class), test_sigma));
            test_labels.push(class);
        }
    }
    let test = EmbeddingSet::new(
        Matrix::from_rows(&test_rows)?,
        test_labels,
        None,
        class_names(c),
    )?;

    Ok(SyntheticTask {
        name: spec.name.clone(),
        train,
        test,
        anchors,
        directions,
    })
}
