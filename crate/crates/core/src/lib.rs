//! typosim — layer-wise similarity between monolingual transformer weight
//! matrices, correlated with typological similarity between the languages
//! they were trained on.
//!
//! The crate is organized around five analysis modules plus an orchestration
//! layer:
//!
//! * [`typology`] — WALS-style feature tables, one-hot language vectors and
//!   cosine similarity between languages.
//! * [`weights`] — checkpoint tensor containers and extraction of the six
//!   per-layer weight matrices (Q, K, V, OA, DI, DO).
//! * [`simkernel`] — linear CKA, the block-diagonal embedding and the
//!   bidimensional CKA score for weight matrices, with a closed-form fast
//!   path.
//! * [`stats`] — average ranks, Spearman correlation and Student-t
//!   significance for correlation grids.
//! * [`typoclusters`] — k-means over typological vectors, Gini-impurity
//!   feature analysis and extra-cluster pair enumeration.
//! * [`runner`] — end-to-end experiments (full / focused / adapted) with
//!   checkpoint fetching, score caching and CSV/JSON/SVG reports.
//!
//! Numeric kernels are generic over the scalar type through [`Scalar`];
//! the weight pipeline instantiates `f64` throughout (see [`MatrixF64`]).

pub mod matrix;
pub mod pairtable;
pub mod runner;
pub mod simkernel;
pub mod stats;
pub mod typoclusters;
pub mod typology;
pub mod weights;

use std::fmt;

/// Scalar types the numeric kernels accept: IEEE floats with assignment
/// operators, shareable across rayon tasks.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
}

impl<T> Scalar for T where
    T: num_traits::Float + num_traits::NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
}

/// Dense `f64` matrix, the concrete type the weight pipeline works in.
pub type MatrixF64 = matrix::Matrix<f64>;
/// Dense `f32` matrix for callers that accept the reduced precision.
pub type MatrixF32 = matrix::Matrix<f32>;
