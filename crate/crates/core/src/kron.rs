//! Matrix-calculus helpers: column-stacking `vec`, commutation matrices, and
//! small selector constants used by the factored Jacobian forms.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

/// Column-major stacking of a matrix into a vector.
pub fn vec_col<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

/// Commutation matrix `K_{m,n}` with `K_{m,n}·vec(A) = vec(Aᵀ)` for `A` of
/// shape `m×n`. It is a permutation, so its inverse is its transpose.
pub fn commutation<T: Scalar>(m: usize, n: usize) -> DMatrix<T> {
    let mut k = DMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            k[(j + i * n, i + j * m)] = T::one();
        }
    }
    k
}

/// All-ones matrix.
pub fn ones<T: Scalar>(rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_element(rows, cols, T::one())
}

/// The 4×2 selector that keeps the first and last columns of a `vec`'d 2×2
/// layout: ones at rows 0 and 3 of columns 0 and 1 respectively.
pub fn selector_4_2<T: Scalar>() -> DMatrix<T> {
    let mut s = DMatrix::zeros(4, 2);
    s[(0, 0)] = T::one();
    s[(3, 1)] = T::one();
    s
}
