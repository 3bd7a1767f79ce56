use crate::error::{NlcError, Result};
use crate::tensor::Matrix;

/// Mean softmax cross-entropy of `F / c_loss` over the batch columns and its
/// gradient with respect to `F`.
pub fn softmax_cross_entropy(f: &Matrix, labels: &[usize], c_loss: f64) -> Result<(f64, Matrix)> {
    if labels.len() != f.ncols() {
        return Err(NlcError::Dimension(format!(
            "{} labels for a batch of {}",
            labels.len(),
            f.ncols()
        )));
    }
    if !(c_loss > 0.0) {
        return Err(NlcError::Parameter(format!("c_loss must be positive, got {c_loss}")));
    }
    let k = f.nrows();
    let b = f.ncols() as f64;
    let mut grad = Matrix::zeros(k, f.ncols());
    let mut loss = 0.0;
    for (j, (col, &y)) in f.column_iter().zip(labels).enumerate() {
        if y >= k {
            return Err(NlcError::Parameter(format!("label {y} out of range for {k} classes")));
        }
        let max = col.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v / c_loss));
        let mut z = 0.0;
        for v in col.iter() {
            z += (v / c_loss - max).exp();
        }
        let log_z = z.ln() + max;
        loss += log_z - col[y] / c_loss;
        for (i, v) in col.iter().enumerate() {
            let p = (v / c_loss - log_z).exp();
            let target = if i == y { 1.0 } else { 0.0 };
            grad[(i, j)] = (p - target) / (b * c_loss);
        }
    }
    Ok((loss / b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let f = Matrix::zeros(5, 3);
        let (l, _) = softmax_cross_entropy(&f, &[0, 3, 4], 1.0).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = Matrix::from_row_slice(3, 2, &[0.3, -1.2, 2.0, 0.1, -0.5, 0.7]);
        let labels = [2, 0];
        let c = 1.7;
        let (_, g) = softmax_cross_entropy(&f, &labels, c).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut p = f.clone();
                p[(i, j)] += h;
                let mut m = f.clone();
                m[(i, j)] -= h;
                let fd = (softmax_cross_entropy(&p, &labels, c).unwrap().0
                    - softmax_cross_entropy(&m, &labels, c).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-8, "{fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn joint_scaling_is_invariant() {
        let f = Matrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let (l1, g1) = softmax_cross_entropy(&f, &[0, 1], 2.0).unwrap();
        let (l2, g2) = softmax_cross_entropy(&(&f * 8.0), &[0, 1], 16.0).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        // d loss / d(F / c) = c * dL/dF.
        assert!((g1 * 2.0 - g2 * 16.0).amax() < 1e-14);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let f = Matrix::from_row_slice(2, 1, &[1e6, -1e6]);
        let (l, g) = softmax_cross_entropy(&f, &[1], 1.0).unwrap();
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        assert!((l - 2e6).abs() < 1e-6);
    }

    #[test]
    fn bad_labels() {
        let f = Matrix::zeros(2, 1);
        assert!(softmax_cross_entropy(&f, &[2], 1.0).is_err());
        assert!(softmax_cross_entropy(&f, &[0, 1], 1.0).is_err());
    }
}
