//! Differentiable batch maps.
//!
//! Metrics are written against [`Model`] so that closed-form test functions
//! can be measured alongside networks.

use crate::error::{NlcError, Result};
use crate::tensor::Matrix;

/// A forward pass at a fixed batch, ready for any number of VJPs.
pub trait Linearization {
    fn output(&self) -> &Matrix;
    fn vjp(&self, v: &Matrix) -> Result<Matrix>;
}

/// A map from `d_in x B` batches to `d_out x B` outputs.
pub trait Model: Sync {
    fn d_in(&self) -> usize;
    fn d_out(&self) -> usize;
    /// Whether output columns depend on other columns of the batch.
    fn batch_coupled(&self) -> bool;
    fn apply(&self, x: &Matrix) -> Result<Matrix>;
    fn linearize<'a>(&'a self, x: &Matrix) -> Result<Box<dyn Linearization + 'a>>;
}

/// Largest Jacobian (in entries) that [`exact_jacobian`] will assemble.
pub const JACOBIAN_CAPACITY: usize = 1_000_000;

/// Dense batch Jacobian `d vec(F) / d vec(X)`, both vectorized column-major:
/// row `k * d_out + j` is output `j` of column `k`, column `l * d_in + i`
/// is input `i` of column `l`.
#[derive(Clone, Debug)]
pub struct BatchJacobian {
    pub d_in: usize,
    pub d_out: usize,
    pub batch: usize,
    pub matrix: Matrix,
}

impl BatchJacobian {
    /// `d F[j, k] / d X[i, l]`.
    pub fn entry(&self, j: usize, k: usize, i: usize, l: usize) -> f64 {
        self.matrix[(k * self.d_out + j, l * self.d_in + i)]
    }

    /// `d F[:, k] / d X[:, l]` as a `d_out x d_in` block.
    pub fn block(&self, k: usize, l: usize) -> Matrix {
        self.matrix
            .view((k * self.d_out, l * self.d_in), (self.d_out, self.d_in))
            .into_owned()
    }

    /// Contracts with `V` on the output side, like a VJP.
    pub fn contract(&self, v: &Matrix) -> Matrix {
        let flat = nalgebra::DVector::from_column_slice(v.as_slice());
        let g = self.matrix.tr_mul(&flat);
        Matrix::from_column_slice(self.d_in, self.batch, g.as_slice())
    }
}

/// Assembles the batch Jacobian from `d_out * B` VJPs with basis matrices.
pub fn exact_jacobian<M: Model + ?Sized>(model: &M, x: &Matrix) -> Result<BatchJacobian> {
    let (d_in, d_out, b) = (model.d_in(), model.d_out(), x.ncols());
    let entries = (b * d_out).saturating_mul(b * d_in);
    if entries > JACOBIAN_CAPACITY {
        return Err(NlcError::Capacity(format!(
            "exact Jacobian would hold {entries} entries (limit {JACOBIAN_CAPACITY})"
        )));
    }
    let lin = model.linearize(x)?;
    let mut jac = Matrix::zeros(b * d_out, b * d_in);
    let mut basis = Matrix::zeros(d_out, b);
    for k in 0..b {
        for j in 0..d_out {
            basis[(j, k)] = 1.0;
            let g = lin.vjp(&basis)?;
            basis[(j, k)] = 0.0;
            jac.row_mut(k * d_out + j)
                .copy_from(&nalgebra::RowDVector::from_column_slice(g.as_slice()));
        }
    }
    Ok(BatchJacobian {
        d_in,
        d_out,
        batch: b,
        matrix: jac,
    })
}
