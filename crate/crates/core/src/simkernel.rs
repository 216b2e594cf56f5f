//! Linear CKA over weight matrices and its bidimensional extension.
//!
//! Plain linear CKA compares two matrices through their column Gram
//! structures. For weight matrices both the row and the column covariance
//! carry signal, so the bidimensional score embeds each matrix `W` into the
//! block-diagonal matrix
//!
//! ```text
//! F(W) = | W   0  |
//!        | 0   Wᵀ |
//! ```
//!
//! and evaluates CKA on the embeddings. [`bicka_direct`] materializes the
//! embeddings and is the reference route; [`bicka_fast`] evaluates the same
//! score through the block structure — cross products plus rank-1 centering
//! corrections — without ever forming `F(W)`, and
//! [`MatrixKernelStats`]/[`bicka_from_stats`] split the work into cacheable
//! per-matrix summaries plus a cheap per-pair combine step for batch use.
//!
//! All reductions run in a fixed order, so scores are bit-identical across
//! rayon thread counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{a_bt, at_b, frobenius_dot, frobenius_norm, frobenius_norm_sq, Matrix};
use crate::Scalar;

/// Whether the columns of the compared matrices are mean-centered before
/// the Gram products. For the bidimensional score the centering applies to
/// the columns of the embeddings `F(W)`, whose means run over `n + p`
/// entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenteringMode {
    #[default]
    Centered,
    Uncentered,
}

impl std::fmt::Display for CenteringMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CenteringMode::Centered => write!(f, "centered"),
            CenteringMode::Uncentered => write!(f, "uncentered"),
        }
    }
}

impl std::str::FromStr for CenteringMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "centered" => Ok(CenteringMode::Centered),
            "uncentered" => Ok(CenteringMode::Uncentered),
            other => Err(format!("unknown centering mode {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("matrices have incompatible shapes {0:?} and {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("degenerate input: a compared matrix has an all-zero (centered) Gram")]
    DegenerateInput,
}

/// `‖YᵀX‖²_F`, the numerator of linear CKA. Equals `trace(XXᵀYYᵀ)` and
/// `vec(XXᵀ)ᵀ·vec(YYᵀ)`.
pub fn gram_frobenius_product<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
) -> Result<T, KernelError> {
    if x.rows() != y.rows() {
        return Err(KernelError::ShapeMismatch(x.shape(), y.shape()));
    }
    Ok(frobenius_norm_sq(&at_b(y, x)))
}

/// Linear CKA: `‖YᵀX‖²_F / (‖XᵀX‖_F · ‖YᵀY‖_F)` on optionally
/// column-centered inputs.
pub fn linear_cka<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    mode: CenteringMode,
) -> Result<T, KernelError> {
    if x.rows() != y.rows() {
        return Err(KernelError::ShapeMismatch(x.shape(), y.shape()));
    }
    let (xc, yc);
    let (x, y) = match mode {
        CenteringMode::Uncentered => (x, y),
        CenteringMode::Centered => {
            xc = x.center_columns();
            yc = y.center_columns();
            (&xc, &yc)
        }
    };
    let numerator = gram_frobenius_product(x, y)?;
    let denominator = frobenius_norm(&at_b(x, x)) * frobenius_norm(&at_b(y, y));
    if denominator == T::zero() {
        return Err(KernelError::DegenerateInput);
    }
    Ok(clamp_unit(numerator / denominator))
}

/// The block-diagonal embedding `F(W)`: `W` in the top-left block, `Wᵀ` in
/// the bottom-right, zeros elsewhere; shape `(n+p) × (p+n)`.
pub fn block_embed<T: Scalar>(w: &Matrix<T>) -> Matrix<T> {
    let (n, p) = w.shape();
    let mut out = Matrix::zeros(n + p, p + n);
    for i in 0..n {
        for j in 0..p {
            let value = w.get(i, j);
            out.set(i, j, value);
            out.set(n + j, p + i, value);
        }
    }
    out
}

/// Bidimensional CKA by the definition: CKA of the block embeddings.
pub fn bicka_direct<T: Scalar>(
    w1: &Matrix<T>,
    w2: &Matrix<T>,
    mode: CenteringMode,
) -> Result<T, KernelError> {
    if w1.shape() != w2.shape() {
        return Err(KernelError::ShapeMismatch(w1.shape(), w2.shape()));
    }
    linear_cka(&block_embed(w1), &block_embed(w2), mode)
}

/// Cacheable per-matrix summaries from which any pairwise bidimensional
/// score combines in O(n² + p²): the two Gram matrices plus the rank-1
/// centering terms.
#[derive(Debug, Clone)]
pub struct MatrixKernelStats<T> {
    shape: (usize, usize),
    /// `W·Wᵀ`
    gram_rows: Matrix<T>,
    /// `Wᵀ·W`
    gram_cols: Matrix<T>,
    /// `W·colsums(W)`
    u: Vec<T>,
    /// `Wᵀ·rowsums(W)`
    v: Vec<T>,
    /// `‖colsums‖² + ‖rowsums‖²` — squared norm of the embedding's column sums
    s_sq: T,
    /// `‖WᵀW‖²_F` (equals `‖WWᵀ‖²_F`)
    gram_fro_sq: T,
    /// `‖u‖² + ‖v‖²`
    uv_sq: T,
}

impl<T: Scalar> MatrixKernelStats<T> {
    pub fn new(w: &Matrix<T>) -> Self {
        let gram_rows = a_bt(w, w);
        let gram_cols = at_b(w, w);
        let col_sums = w.column_sums();
        let row_sums = w.row_sums();
        let u = w.matvec(&col_sums);
        let v = w.tr_matvec(&row_sums);
        let s_sq = sum_sq(&col_sums) + sum_sq(&row_sums);
        let gram_fro_sq = frobenius_norm_sq(&gram_cols);
        let uv_sq = sum_sq(&u) + sum_sq(&v);
        Self {
            shape: w.shape(),
            gram_rows,
            gram_cols,
            u,
            v,
            s_sq,
            gram_fro_sq,
            uv_sq,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    /// `‖F(W)ᵀ·C·F(W)‖_F` — the matrix's denominator contribution.
    fn denominator(&self, mode: CenteringMode) -> T {
        let two = T::from(2).expect("2 representable");
        match mode {
            CenteringMode::Uncentered => (two * self.gram_fro_sq).sqrt(),
            CenteringMode::Centered => {
                let m = T::from(self.shape.0 + self.shape.1).expect("m representable");
                let sq =
                    two * self.gram_fro_sq - two / m * self.uv_sq + self.s_sq * self.s_sq / (m * m);
                sq.max(T::zero()).sqrt()
            }
        }
    }
}

/// Combines two per-matrix summaries into the bidimensional score.
pub fn bicka_from_stats<T: Scalar>(
    s1: &MatrixKernelStats<T>,
    s2: &MatrixKernelStats<T>,
    mode: CenteringMode,
) -> Result<T, KernelError> {
    if s1.shape != s2.shape {
        return Err(KernelError::ShapeMismatch(s1.shape, s2.shape));
    }
    let cross_rows = frobenius_dot(&s1.gram_rows, &s2.gram_rows);
    let cross_cols = frobenius_dot(&s1.gram_cols, &s2.gram_cols);
    let numerator = match mode {
        CenteringMode::Uncentered => cross_rows + cross_cols,
        CenteringMode::Centered => {
            let two = T::from(2).expect("2 representable");
            let m = T::from(s1.shape.0 + s1.shape.1).expect("m representable");
            let rank1 = dot(&s1.u, &s2.u) + dot(&s1.v, &s2.v);
            cross_rows + cross_cols - two / m * rank1 + s1.s_sq * s2.s_sq / (m * m)
        }
    };
    let denominator = s1.denominator(mode) * s2.denominator(mode);
    if denominator == T::zero() {
        return Err(KernelError::DegenerateInput);
    }
    Ok(clamp_unit(numerator / denominator))
}

/// Bidimensional CKA without materializing the embeddings: block cross
/// products for the numerator, the smaller-side Gram for each denominator,
/// and closed-form rank-1 corrections when centering.
pub fn bicka_fast<T: Scalar>(
    w1: &Matrix<T>,
    w2: &Matrix<T>,
    mode: CenteringMode,
) -> Result<T, KernelError> {
    if w1.shape() != w2.shape() {
        return Err(KernelError::ShapeMismatch(w1.shape(), w2.shape()));
    }
    let (n, p) = w1.shape();
    // ‖W2ᵀW1‖²_F + ‖W2W1ᵀ‖²_F
    let numerator_unc = frobenius_norm_sq(&at_b(w2, w1)) + frobenius_norm_sq(&a_bt(w2, w1));
    let gram_fro = |w: &Matrix<T>| {
        if n <= p {
            frobenius_norm_sq(&a_bt(w, w))
        } else {
            frobenius_norm_sq(&at_b(w, w))
        }
    };
    let two = T::from(2).expect("2 representable");
    let (numerator, d1_sq, d2_sq) = match mode {
        CenteringMode::Uncentered => (
            numerator_unc,
            two * gram_fro(w1),
            two * gram_fro(w2),
        ),
        CenteringMode::Centered => {
            let m = T::from(n + p).expect("m representable");
            let term = |w: &Matrix<T>| {
                let c = w.column_sums();
                let r = w.row_sums();
                let u = w.matvec(&c);
                let v = w.tr_matvec(&r);
                (u, v, sum_sq(&c) + sum_sq(&r))
            };
            let (u1, v1, s1_sq) = term(w1);
            let (u2, v2, s2_sq) = term(w2);
            let rank1 = dot(&u1, &u2) + dot(&v1, &v2);
            let numerator = numerator_unc - two / m * rank1 + s1_sq * s2_sq / (m * m);
            let den_sq = |w: &Matrix<T>, u: &[T], v: &[T], s_sq: T| {
                (two * gram_fro(w) - two / m * (sum_sq(u) + sum_sq(v)) + s_sq * s_sq / (m * m))
                    .max(T::zero())
            };
            (
                numerator,
                den_sq(w1, &u1, &v1, s1_sq),
                den_sq(w2, &u2, &v2, s2_sq),
            )
        }
    };
    let denominator = d1_sq.sqrt() * d2_sq.sqrt();
    if denominator == T::zero() {
        return Err(KernelError::DegenerateInput);
    }
    Ok(clamp_unit(numerator / denominator))
}

fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

fn sum_sq<T: Scalar>(xs: &[T]) -> T {
    crate::matrix::neumaier_sum(xs.iter().map(|&x| x * x))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    crate::matrix::neumaier_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix<f64> {
        Matrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn gram_product_examples() {
        let eye = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(gram_frobenius_product(&eye, &eye).unwrap(), 2.0);
        let y = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(gram_frobenius_product(&eye, &y).unwrap(), 3.0);
    }

    #[test]
    fn gram_product_equals_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 5, 3);
        let y = random_matrix(&mut rng, 5, 4);
        let lhs = gram_frobenius_product(&x, &y).unwrap();
        // trace(XXᵀYYᵀ) = <XXᵀ, YYᵀ> for symmetric Grams
        let trace = frobenius_dot(&a_bt(&x, &x), &a_bt(&y, &y));
        assert!((lhs - trace).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn gram_product_rejects_row_mismatch() {
        let x = Matrix::<f64>::zeros(3, 2);
        let y = Matrix::<f64>::zeros(4, 2);
        assert!(matches!(
            gram_frobenius_product(&x, &y).unwrap_err(),
            KernelError::ShapeMismatch(..)
        ));
    }

    #[test]
    fn cka_self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 6, 4);
        for mode in [CenteringMode::Centered, CenteringMode::Uncentered] {
            let s = linear_cka(&x, &x, mode).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "mode {mode}: {s}");
        }
    }

    #[test]
    fn cka_uncentered_hand_example() {
        let eye = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let s = linear_cka(&eye, &y, CenteringMode::Uncentered).unwrap();
        assert!((s - 3.0 / 14f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cka_invariant_under_orthogonal_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 5, 2);
        let theta: f64 = 0.73;
        let rot = Matrix::from_rows(&[
            &[theta.cos(), -theta.sin()],
            &[theta.sin(), theta.cos()],
        ]);
        // X·O: contract columns of X with rows of O
        let xo = at_b(&x.transposed(), &rot);
        let s = linear_cka(&x, &xo, CenteringMode::Uncentered).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn cka_zero_matrix_is_degenerate() {
        let z = Matrix::<f64>::zeros(3, 3);
        let x = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(matches!(
            linear_cka(&z, &x, CenteringMode::Uncentered).unwrap_err(),
            KernelError::DegenerateInput
        ));
    }

    #[test]
    fn block_embed_examples() {
        let w = Matrix::from_rows(&[&[1.0, 2.0]]);
        let f = block_embed(&w);
        assert_eq!(f.shape(), (3, 3));
        let expected = Matrix::from_rows(&[
            &[1.0, 2.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[0.0, 0.0, 2.0],
        ]);
        assert_eq!(f, expected);

        let sq = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(block_embed(&sq).shape(), (4, 4));
    }

    #[test]
    fn block_embed_of_transpose_swaps_blocks() {
        let w = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let f_t = block_embed(&w.transposed());
        let (n, p) = w.shape();
        // top-left block of F(Wᵀ) is Wᵀ, bottom-right is W
        for i in 0..p {
            for j in 0..n {
                assert_eq!(f_t.get(i, j), w.get(j, i));
                assert_eq!(f_t.get(p + j, n + i), w.get(j, i));
            }
        }
    }

    #[test]
    fn bicka_self_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 4, 7);
        for mode in [CenteringMode::Centered, CenteringMode::Uncentered] {
            assert!((bicka_direct(&w, &w, mode).unwrap() - 1.0).abs() < 1e-12);
            let scaled = w.scaled(-3.25);
            let s = bicka_direct(&w, &scaled, mode).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "mode {mode}: {s}");
        }
    }

    #[test]
    fn bicka_uncentered_hand_examples() {
        let eye = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        for f in [bicka_direct, bicka_fast] {
            let s = f(&eye, &y, CenteringMode::Uncentered).unwrap();
            assert!((s - 3.0 / 14f64.sqrt()).abs() < 1e-10, "{s}");
        }
        let perm = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = bicka_fast(&eye, &perm, CenteringMode::Uncentered).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fast_agrees_with_direct_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.gen_range(2..12);
            let p = rng.gen_range(2..12);
            let w1 = random_matrix(&mut rng, n, p);
            let w2 = random_matrix(&mut rng, n, p);
            for mode in [CenteringMode::Centered, CenteringMode::Uncentered] {
                let direct = bicka_direct(&w1, &w2, mode).unwrap();
                let fast = bicka_fast(&w1, &w2, mode).unwrap();
                assert!(
                    (direct - fast).abs() <= 1e-8 * direct.abs().max(1e-12),
                    "mode {mode} shape ({n},{p}): direct {direct} fast {fast}"
                );
                let s1 = MatrixKernelStats::new(&w1);
                let s2 = MatrixKernelStats::new(&w2);
                let stats = bicka_from_stats(&s1, &s2, mode).unwrap();
                assert!((stats - fast).abs() <= 1e-10 * fast.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn fast_transposition_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w1 = random_matrix(&mut rng, 5, 9);
        let w2 = random_matrix(&mut rng, 5, 9);
        for mode in [CenteringMode::Centered, CenteringMode::Uncentered] {
            let plain = bicka_fast(&w1, &w2, mode).unwrap();
            let transposed =
                bicka_fast(&w1.transposed(), &w2.transposed(), mode).unwrap();
            assert!((plain - transposed).abs() < 1e-12, "mode {mode}");
        }
    }

    #[test]
    fn bicka_shape_mismatch_and_zero() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(3, 2);
        assert!(matches!(
            bicka_fast(&a, &b, CenteringMode::Uncentered).unwrap_err(),
            KernelError::ShapeMismatch(..)
        ));
        let z = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(
            bicka_fast(&z, &z, CenteringMode::Uncentered).unwrap_err(),
            KernelError::DegenerateInput
        ));
    }

    #[test]
    fn works_in_f32_too() {
        let w1 = Matrix::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let w2 = Matrix::<f32>::from_rows(&[&[2.0, 1.0], &[0.5, 2.0]]);
        let direct = bicka_direct(&w1, &w2, CenteringMode::Centered).unwrap();
        let fast = bicka_fast(&w1, &w2, CenteringMode::Centered).unwrap();
        assert!((direct - fast).abs() < 1e-5);
    }
}
