//! Binary feature containers with a JSON sidecar.
//!
//! Payload layout (little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "VLFEAT01"
//! offset 8   u32       n_samples
//! offset 12  u32       dim
//! offset 16  f32 * n_samples * dim, row-major
//! ```
//!
//! The sidecar lives next to the payload with the extension replaced by
//! `.json` and carries labels, class names, view ids and a split tag.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{l2_normalize_rows, EmbeddingSet, Matrix, PrototypeBank};

pub const MAGIC: &[u8; 8] = b"VLFEAT01";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSidecar {
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub view_ids: Vec<u32>,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_inv: Option<f64>,
}

pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub fn encode_payload(features: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + features.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for &x in features.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

/// Parses a payload into an (unnormalized) matrix.
pub fn decode_payload(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
        });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    let expected = n * d * 4;
    if body.len() != expected {
        return Err(Error::SizeMismatch {
            field: "payload",
            expected,
            found: body.len(),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Matrix::new(n, d, data)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_sidecar(payload: &Path, sidecar: &ContainerSidecar) -> Result<()> {
    let mut json = serde_json::to_string_pretty(sidecar).map_err(|source| Error::Json {
        context: "sidecar".into(),
        source,
    })?;
    json.push('\n');
    write_file(&sidecar_path(payload), json.as_bytes())
}

pub fn save_container(path: &Path, set: &EmbeddingSet, split: &str) -> Result<()> {
    set.validate()?;
    write_file(path, &encode_payload(&set.features))?;
    let sidecar = ContainerSidecar {
        n_samples: set.len(),
        dim: set.dim(),
        n_classes: set.n_classes(),
        class_names: set.class_names.clone(),
        labels: set.labels.clone(),
        view_ids: set.views.clone().unwrap_or_default(),
        split: split.to_string(),
        parent_class_ids: set.parent_class_ids.clone(),
        temperature_inv: None,
    };
    write_sidecar(path, &sidecar)
}

fn read_sidecar(payload: &Path) -> Result<ContainerSidecar> {
    let path = sidecar_path(payload);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

fn check_sidecar(sidecar: &ContainerSidecar, features: &Matrix) -> Result<()> {
    let mismatch = |field, detail: String| Err(Error::SidecarMismatch { field, detail });
    if sidecar.n_samples != features.rows() {
        return mismatch(
            "n_samples",
            format!(
                "sidecar {} vs payload {}",
                sidecar.n_samples,
                features.rows()
            ),
        );
    }
    if sidecar.dim != features.cols() {
        return mismatch(
            "dim",
            format!("sidecar {} vs payload {}", sidecar.dim, features.cols()),
        );
    }
    if sidecar.labels.len() != sidecar.n_samples {
        return mismatch(
            "labels",
            format!(
                "{} labels for {} samples",
                sidecar.labels.len(),
                sidecar.n_samples
            ),
        );
    }
    if sidecar.class_names.len() != sidecar.n_classes {
        return mismatch(
            "class_names",
            format!(
                "{} names for {} classes",
                sidecar.class_names.len(),
                sidecar.n_classes
            ),
        );
    }
    if let Some(&max) = sidecar.labels.iter().max() {
        if max >= sidecar.n_classes {
            return mismatch(
                "n_classes",
                format!("label {max} but n_classes {}", sidecar.n_classes),
            );
        }
    }
    if !sidecar.view_ids.is_empty() && sidecar.view_ids.len() != sidecar.n_samples {
        return mismatch(
            "view_ids",
            format!(
                "{} view ids for {} samples",
                sidecar.view_ids.len(),
                sidecar.n_samples
            ),
        );
    }
    if let Some(parents) = &sidecar.parent_class_ids {
        if parents.len() != sidecar.n_classes {
            return mismatch(
                "parent_class_ids",
                format!("{} ids for {} classes", parents.len(), sidecar.n_classes),
            );
        }
    }
    Ok(())
}

/// Loads a container and its sidecar; rows are ℓ2-normalized.
pub fn load_container_with_meta(path: &Path) -> Result<(EmbeddingSet, ContainerSidecar)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_payload(&bytes, path)?;
    let sidecar = read_sidecar(path)?;
    check_sidecar(&sidecar, &raw)?;
    let views = if sidecar.view_ids.is_empty() {
        None
    } else {
        Some(sidecar.view_ids.clone())
    };
    let mut set = EmbeddingSet::new(
        l2_normalize_rows(&raw)?,
        sidecar.labels.clone(),
        views,
        sidecar.class_names.clone(),
    )?;
    set.parent_class_ids = sidecar.parent_class_ids.clone();
    set.validate()?;
    Ok((set, sidecar))
}

pub fn load_container(path: &Path) -> Result<EmbeddingSet> {
    load_container_with_meta(path).map(|(set, _)| set)
}

/// Stores a prototype bank: one row per class, label `c` on row `c`.
pub fn save_bank(path: &Path, bank: &PrototypeBank, class_names: &[String]) -> Result<()> {
    if class_names.len() != bank.n_classes() {
        return Err(Error::shape(
            "save_bank class names",
            bank.n_classes(),
            class_names.len(),
        ));
    }
    write_file(path, &encode_payload(&bank.weights))?;
    let sidecar = ContainerSidecar {
        n_samples: bank.n_classes(),
        dim: bank.dim(),
        n_classes: bank.n_classes(),
        class_names: class_names.to_vec(),
        labels: (0..bank.n_classes()).collect(),
        view_ids: Vec::new(),
        split: "prototypes".into(),
        parent_class_ids: None,
        temperature_inv: Some(bank.temperature_inv),
    };
    write_sidecar(path, &sidecar)
}

pub fn load_bank(path: &Path) -> Result<PrototypeBank> {
    let (set, sidecar) = load_container_with_meta(path)?;
    let temperature_inv = sidecar
        .temperature_inv
        .unwrap_or(crate::zeroshot::DEFAULT_TEMPERATURE_INV);
    PrototypeBank::normalized(&set.features, temperature_inv)
}
