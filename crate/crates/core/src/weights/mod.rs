//! Checkpoint tensor containers and extraction of the six per-layer weight
//! matrices of an encoder model.
//!
//! Each encoder layer contributes the attention query/key/value matrices,
//! the attention output dense matrix, and the two feed-forward dense
//! matrices. Biases, embeddings and layer norms are never extracted.

mod container;
mod layout;

pub use container::{write_safetensors_f32, Dtype, TensorContainer, TensorInfo};
pub use layout::{resolve_layout, LayoutConfig, LayoutMap};

use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::MatrixF64;

/// Encoder layers every analyzed model must have.
pub const LAYER_COUNT: usize = 12;

/// The six matrix kinds extracted per layer: attention query/key/value,
/// attention output dense, feed-forward intermediate dense and feed-forward
/// output dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatrixKind {
    Q,
    K,
    V,
    OA,
    DI,
    DO,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 6] = [
        MatrixKind::Q,
        MatrixKind::K,
        MatrixKind::V,
        MatrixKind::OA,
        MatrixKind::DI,
        MatrixKind::DO,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixKind::Q => "Q",
            MatrixKind::K => "K",
            MatrixKind::V => "V",
            MatrixKind::OA => "OA",
            MatrixKind::DI => "DI",
            MatrixKind::DO => "DO",
        }
    }
}

impl std::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MatrixKind {
    type Err = WeightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MatrixKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| WeightsError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("corrupt tensor container: {0}")]
    CorruptContainer(String),
    #[error("layout mismatch; missing tensors: {}", missing.join(", "))]
    LayoutMismatch { missing: Vec<String> },
    #[error("tensor {0} contains NaN or infinite entries")]
    NonFiniteWeights(String),
    #[error("tensor {name} has rank {rank}, expected a 2-D matrix")]
    BadTensorRank { name: String, rank: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("layer {0} is out of range (expected 0..{LAYER_COUNT})")]
    LayerOutOfRange(usize),
    #[error("matrices have incompatible shapes {0:?} and {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("unknown matrix kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dense weight matrix tagged with its position in the model.
///
/// Data is promoted to 64-bit floats on extraction regardless of the stored
/// dtype; the stored row/column orientation is preserved.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub language: String,
    pub layer: usize,
    pub kind: MatrixKind,
    pub data: MatrixF64,
}

impl WeightMatrix {
    /// (rows, cols) exactly as stored in the checkpoint.
    pub fn orientation(&self) -> (usize, usize) {
        self.data.shape()
    }
}

/// Decodes one weight matrix from the container.
pub fn extract(
    container: &TensorContainer,
    layout: &LayoutMap,
    layer: usize,
    kind: MatrixKind,
) -> Result<WeightMatrix, WeightsError> {
    if layer >= layout.layer_count() {
        return Err(WeightsError::LayerOutOfRange(layer));
    }
    let name = layout.tensor_name(kind, layer);
    let info = container
        .info(name)
        .ok_or_else(|| WeightsError::LayoutMismatch {
            missing: vec![name.to_string()],
        })?;
    if info.shape.len() != 2 {
        return Err(WeightsError::BadTensorRank {
            name: name.to_string(),
            rank: info.shape.len(),
        });
    }
    let data = container.decode_f64(name)?;
    let matrix = MatrixF64::from_vec(info.shape[0], info.shape[1], data);
    if matrix.has_non_finite() {
        return Err(WeightsError::NonFiniteWeights(name.to_string()));
    }
    Ok(WeightMatrix {
        language: container.language_tag().unwrap_or_default().to_string(),
        layer,
        kind,
        data: matrix,
    })
}

/// Summary of a validated model architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    pub hidden_size: usize,
    pub layer_count: usize,
    /// Stored shape per kind, identical across layers.
    pub kind_shapes: BTreeMap<MatrixKind, (usize, usize)>,
}

/// Checks shape consistency across all layers without decoding payloads.
///
/// Requires the full [`LAYER_COUNT`] layers, a single hidden size across
/// the attention matrices, feed-forward matrices of shape (4h, h) or
/// (h, 4h), and per-kind orientation that does not flip between layers.
pub fn validate_model(
    container: &TensorContainer,
    layout: &LayoutMap,
) -> Result<ArchitectureReport, WeightsError> {
    if layout.layer_count() != LAYER_COUNT {
        return Err(WeightsError::ArchitectureMismatch(format!(
            "model has {} layers, {} required",
            layout.layer_count(),
            LAYER_COUNT
        )));
    }
    let mut kind_shapes: BTreeMap<MatrixKind, (usize, usize)> = BTreeMap::new();
    for layer in 0..layout.layer_count() {
        for &kind in MatrixKind::ALL.iter() {
            let name = layout.tensor_name(kind, layer);
            let info = container
                .info(name)
                .ok_or_else(|| WeightsError::LayoutMismatch {
                    missing: vec![name.to_string()],
                })?;
            if info.shape.len() != 2 {
                return Err(WeightsError::BadTensorRank {
                    name: name.to_string(),
                    rank: info.shape.len(),
                });
            }
            let shape = (info.shape[0], info.shape[1]);
            match kind_shapes.get(&kind) {
                None => {
                    kind_shapes.insert(kind, shape);
                }
                Some(&expected) if expected != shape => {
                    return Err(WeightsError::ArchitectureMismatch(format!(
                        "kind {kind} has shape {expected:?} at earlier layers but {shape:?} at layer {layer}"
                    )));
                }
                _ => {}
            }
        }
    }
    let q_shape = kind_shapes[&MatrixKind::Q];
    if q_shape.0 != q_shape.1 {
        return Err(WeightsError::ArchitectureMismatch(format!(
            "attention query matrix is not square: {q_shape:?}"
        )));
    }
    let hidden = q_shape.0;
    for kind in [MatrixKind::K, MatrixKind::V, MatrixKind::OA] {
        let shape = kind_shapes[&kind];
        if shape != (hidden, hidden) {
            return Err(WeightsError::ArchitectureMismatch(format!(
                "kind {kind} has shape {shape:?}, expected ({hidden}, {hidden})"
            )));
        }
    }
    for kind in [MatrixKind::DI, MatrixKind::DO] {
        let shape = kind_shapes[&kind];
        if shape != (4 * hidden, hidden) && shape != (hidden, 4 * hidden) {
            return Err(WeightsError::ArchitectureMismatch(format!(
                "kind {kind} has shape {shape:?}, expected ({}, {hidden}) or ({hidden}, {})",
                4 * hidden,
                4 * hidden
            )));
        }
    }
    Ok(ArchitectureReport {
        hidden_size: hidden,
        layer_count: layout.layer_count(),
        kind_shapes,
    })
}

/// Aligns the second matrix to the first by transposing it when the two
/// checkpoints store the same logical matrix in opposite orientations.
///
/// Bidimensional CKA is invariant under simultaneous transposition, so this
/// normalization never changes a score; it only makes the shapes agree.
pub fn oriented_pair<'a>(
    a: &'a WeightMatrix,
    b: &'a WeightMatrix,
) -> Result<(&'a MatrixF64, Cow<'a, MatrixF64>), WeightsError> {
    let sa = a.data.shape();
    let sb = b.data.shape();
    if sa == sb {
        Ok((&a.data, Cow::Borrowed(&b.data)))
    } else if sa == (sb.1, sb.0) {
        Ok((&a.data, Cow::Owned(b.data.transposed())))
    } else {
        Err(WeightsError::ShapeMismatch(sa, sb))
    }
}
