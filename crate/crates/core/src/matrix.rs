//! Dense row-major matrices with the small set of kernels the similarity
//! pipeline needs: transposed products, Gram products, Frobenius reductions
//! and column centering.
//!
//! All kernels accumulate in the scalar type of the matrix (the weight
//! pipeline instantiates `f64`) and use a fixed reduction order per output
//! element, so results are bit-identical regardless of the rayon thread
//! count.

use rayon::prelude::*;

use crate::Scalar;

/// Row chunk handed to one rayon task. Chunking only decides which thread
/// owns which output rows; per-element accumulation order never changes.
const PAR_ROW_CHUNK: usize = 32;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from a row-major buffer. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Convenience constructor for literal test matrices.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transposed(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * factor).collect(),
        }
    }

    /// Column sums, i.e. `1ᵀ·A` as a length-`cols` vector.
    pub fn column_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    /// Row sums, i.e. `A·1` as a length-`rows` vector.
    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| neumaier_sum(self.row(i).iter().copied()))
            .collect()
    }

    /// Subtracts each column's mean from the column.
    pub fn center_columns(&self) -> Self {
        let n = T::from(self.rows).expect("row count representable");
        let means: Vec<T> = self.column_sums().into_iter().map(|s| s / n).collect();
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            for (x, &m) in row.iter_mut().zip(&means) {
                *x -= m;
            }
        }
        out
    }

    /// `A·x` for a length-`cols` vector.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        (0..self.rows)
            .map(|i| neumaier_sum(self.row(i).iter().zip(x).map(|(&a, &b)| a * b)))
            .collect()
    }

    /// `Aᵀ·x` for a length-`rows` vector.
    pub fn tr_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "vector length mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.data.iter().copied()
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }
}

/// `Aᵀ·B` for `A: n×p`, `B: n×q`, giving a `p×q` matrix.
///
/// Uses a k-outer rank-1 update schedule so both operand rows stream
/// contiguously; output rows are split across threads in fixed chunks.
pub fn at_b<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.rows, b.rows, "contraction dimension mismatch");
    let (n, p, q) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(p, q);
    if out.data.is_empty() {
        return out;
    }
    out.data
        .par_chunks_mut(PAR_ROW_CHUNK * q)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let i0 = chunk_idx * PAR_ROW_CHUNK;
            for k in 0..n {
                let a_row = a.row(k);
                let b_row = b.row(k);
                for (local_i, c_row) in chunk.chunks_mut(q).enumerate() {
                    let aki = a_row[i0 + local_i];
                    for (c, &bkj) in c_row.iter_mut().zip(b_row) {
                        *c += aki * bkj;
                    }
                }
            }
        });
    out
}

/// `A·Bᵀ` for `A: n×p`, `B: m×p`, giving an `n×m` matrix of row dot products.
pub fn a_bt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.cols, "contraction dimension mismatch");
    let (n, m) = (a.rows, b.rows);
    let mut out = Matrix::zeros(n, m);
    if out.data.is_empty() {
        return out;
    }
    out.data
        .par_chunks_mut(PAR_ROW_CHUNK * m)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let i0 = chunk_idx * PAR_ROW_CHUNK;
            for (local_i, c_row) in chunk.chunks_mut(m).enumerate() {
                let a_row = a.row(i0 + local_i);
                for (j, c) in c_row.iter_mut().enumerate() {
                    *c = dot(a_row, b.row(j));
                }
            }
        });
    out
}

/// Frobenius inner product `Σ_ij A_ij·B_ij` with compensated summation.
pub fn frobenius_dot<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    neumaier_sum(a.data.iter().zip(&b.data).map(|(&x, &y)| x * y))
}

/// Squared Frobenius norm `‖A‖²_F` with compensated summation.
pub fn frobenius_norm_sq<T: Scalar>(a: &Matrix<T>) -> T {
    neumaier_sum(a.data.iter().map(|&x| x * x))
}

/// Frobenius norm via two passes: a max-abs scan, then a scaled sum of
/// squares, which keeps large matrices away from overflow/underflow.
pub fn frobenius_norm<T: Scalar>(a: &Matrix<T>) -> T {
    let scale = a
        .data
        .iter()
        .fold(T::zero(), |acc, &x| acc.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let sum = neumaier_sum(a.data.iter().map(|&x| {
        let y = x / scale;
        y * y
    }));
    scale * sum.sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Neumaier-compensated sequential summation; fixed order, deterministic.
pub fn neumaier_sum<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
