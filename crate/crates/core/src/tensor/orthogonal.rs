use super::{Matrix, Rng};
use crate::error::{NlcError, Result};

/// Matrix of i.i.d. unit Gaussians.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(NlcError::Dimension(format!(
            "gaussian matrix needs positive dims, got {rows}x{cols}"
        )));
    }
    // from_fn visits entries in column-major (storage) order.
    Ok(Matrix::from_fn(rows, cols, |_, _| rng.normal()))
}

/// Uniformly (Haar) distributed `n x n` orthogonal matrix.
///
/// QR-factorises a Gaussian matrix and flips the columns of `Q` so that `R`
/// has a positive diagonal, which makes the factorisation unique and the
/// resulting distribution exactly Haar.
pub fn haar_orthogonal(n: usize, rng: &mut Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(NlcError::Dimension("haar_orthogonal needs n >= 1".into()));
    }
    let g = gaussian_matrix(n, n, rng)?;
    let qr = g.qr();
    let r_diag = qr.r().diagonal();
    let mut q = qr.q();
    for (j, rjj) in r_diag.iter().enumerate() {
        if *rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `gain` times the top-left `d_out x d_in` block of a Haar orthogonal matrix
/// of size `max(d_in, d_out)`.
pub fn orthogonal_submatrix_init(
    d_out: usize,
    d_in: usize,
    gain: f64,
    rng: &mut Rng,
) -> Result<Matrix> {
    if d_out == 0 || d_in == 0 {
        return Err(NlcError::Dimension(format!(
            "orthogonal init needs positive dims, got {d_out}x{d_in}"
        )));
    }
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(NlcError::Parameter(format!("gain must be positive, got {gain}")));
    }
    let n = d_in.max(d_out);
    let q = haar_orthogonal(n, rng)?;
    Ok(q.view((0, 0), (d_out, d_in)).into_owned() * gain)
}

/// `max(1, sqrt(d_out / d_in))`, the forward-scale-preserving gain.
pub fn fan_gain(d_out: usize, d_in: usize) -> f64 {
    (d_out as f64 / d_in as f64).sqrt().max(1.0)
}
