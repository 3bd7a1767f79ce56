//! Dense 64-bit linear algebra, seeded sampling and careful statistics.

mod orthogonal;
pub mod quadrature;
mod rng;
mod stats;

pub use orthogonal::{fan_gain, gaussian_matrix, haar_orthogonal, orthogonal_submatrix_init};
pub use rng::Rng;
pub use stats::{
    bias_ratio_in, column_covariance, one_pass_mean_and_trace, psd_sqrt,
    two_pass_mean_and_trace, StreamingMoments,
};

use crate::error::{NlcError, Result};

/// Column-major dense matrix. Batches are stored `features x batch`, one
/// sample per column.
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Rejects matrices with NaN or infinite entries.
pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NlcError::Consistency(format!("{what} contains non-finite entries")))
    }
}

/// Gathers the listed columns of `m` into a new matrix.
pub fn select_columns(m: &Matrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}
