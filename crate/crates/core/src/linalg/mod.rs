//! Small dense linear algebra: a row-major matrix, a cached symmetric
//! eigendecomposition for fast shifted inverses, a Cholesky solver and an
//! SVD-based pseudo-inverse.

mod eigen;
mod matrix;
mod solve;
mod svd;

pub use eigen::{
    eigen_decompose_symmetric, eigen_decompositions_on_this_thread, matrix_fingerprint,
    shifted_inverse_apply, shifted_inverse_apply_matrix, EigenCache,
};
pub use matrix::{dot, norm2, Matrix};
pub use solve::Cholesky;
pub use svd::{pinv, svd, Svd, DEFAULT_RCOND};
