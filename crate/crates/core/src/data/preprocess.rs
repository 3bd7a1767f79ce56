use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::{Dataset, SplitFractions};
use crate::error::{NlcError, Result};
use crate::tensor::{haar_orthogonal, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PreprocessMode {
    /// Per-input normalization, per-feature centring, PCA-sized random
    /// orthogonal projection, global rescale.
    Full { variance_fraction: f64 },
    /// Per-feature mean/variance normalization followed by the global rescale.
    FeatureStandardize,
}

impl Default for PreprocessMode {
    fn default() -> Self {
        PreprocessMode::Full {
            variance_fraction: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub d_raw: usize,
    pub d_out: usize,
    /// Eigenvalues of the centred feature covariance, descending (full mode).
    pub spectrum: Vec<f64>,
    pub global_scale: f64,
}

fn population_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Number of leading eigenvalues holding at least `fraction` of the total.
pub fn components_for_fraction(spectrum_desc: &[f64], fraction: f64) -> usize {
    let total: f64 = spectrum_desc.iter().map(|l| l.max(0.0)).sum();
    let mut acc = 0.0;
    for (i, l) in spectrum_desc.iter().enumerate() {
        acc += l.max(0.0);
        if acc >= fraction * total * (1.0 - 1e-12) {
            return i + 1;
        }
    }
    spectrum_desc.len()
}

/// Applies the preprocessing pipeline to a `d_raw x N` matrix.
pub fn preprocess_inputs(
    raw: &Matrix,
    mode: PreprocessMode,
    rng: &mut Rng,
) -> Result<(Matrix, PreprocessReport)> {
    let (d_raw, n) = raw.shape();
    if n < 2 || d_raw < 2 {
        return Err(NlcError::Dimension(format!(
            "preprocessing needs at least 2 points of dimension >= 2, got {d_raw} x {n}"
        )));
    }
    let nf = n as f64;
    let mut x = raw.clone();
    let mut spectrum = Vec::new();
    match mode {
        PreprocessMode::Full { variance_fraction } => {
            if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
                return Err(NlcError::Parameter(format!(
                    "variance fraction {variance_fraction} outside (0, 1]"
                )));
            }
            for (j, mut col) in x.column_iter_mut().enumerate() {
                let (m, v) = population_moments(col.as_slice());
                if v <= 0.0 {
                    return Err(NlcError::DegenerateInput(format!("input {j} is constant")));
                }
                let s = v.sqrt();
                col.apply(|e| *e = (*e - m) / s);
            }
            let means = x.column_mean();
            for mut col in x.column_iter_mut() {
                col -= &means;
            }
            let cov = &x * x.transpose() / nf;
            let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let k = components_for_fraction(&eig, variance_fraction);
            spectrum = eig;
            let q = haar_orthogonal(d_raw, rng)?;
            let q_sub = q.columns(0, k);
            x = q_sub.tr_mul(&x);
        }
        PreprocessMode::FeatureStandardize => {
            for r in 0..d_raw {
                let row: Vec<f64> = x.row(r).iter().copied().collect();
                let (m, v) = population_moments(&row);
                if v <= 0.0 {
                    return Err(NlcError::DegenerateInput(format!("feature {r} is constant")));
                }
                let s = v.sqrt();
                x.row_mut(r).apply(|e| *e = (*e - m) / s);
            }
        }
    }
    let global_scale = rescale_unit_second_moment(&mut x)?;
    let d_out = x.nrows();
    Ok((
        x,
        PreprocessReport {
            d_raw,
            d_out,
            spectrum,
            global_scale,
        },
    ))
}

/// Multiplies by one constant so that `E ||x||^2 / d = 1`; returns the constant.
pub fn rescale_unit_second_moment(x: &mut Matrix) -> Result<f64> {
    let second = x.norm_squared() / (x.ncols() as f64 * x.nrows() as f64);
    if !(second > 0.0) {
        return Err(NlcError::DegenerateInput("all inputs are zero".into()));
    }
    let s = 1.0 / second.sqrt();
    *x *= s;
    Ok(s)
}

/// Preprocesses raw inputs and wraps them into a dataset with random splits.
pub fn preprocess(
    name: &str,
    raw: &Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    mode: PreprocessMode,
    fractions: SplitFractions,
    rng: &mut Rng,
) -> Result<(Dataset, PreprocessReport)> {
    let (x, report) = preprocess_inputs(raw, mode, &mut rng.fork("projection"))?;
    let ds = Dataset::new(name, x, labels, n_classes, fractions, &mut rng.fork("splits"))?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_matrix;

    fn second_moment(x: &Matrix) -> f64 {
        x.norm_squared() / (x.ncols() * x.nrows()) as f64
    }

    #[test]
    fn unit_second_moment_after_full_pipeline() {
        let mut rng = Rng::new(1);
        let raw = gaussian_matrix(12, 300, &mut rng).unwrap().map(|v| 3.0 * v + 1.0);
        let (x, rep) = preprocess_inputs(&raw, PreprocessMode::default(), &mut rng).unwrap();
        assert!((second_moment(&x) - 1.0).abs() < 1e-9);
        assert_eq!(rep.d_out, x.nrows());
        // Step 5 is idempotent.
        let mut again = x.clone();
        let s = rescale_unit_second_moment(&mut again).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((again - x).amax() < 1e-12);
    }

    #[test]
    fn constructed_spectrum_gives_five_components() {
        // Inputs spanning 5 directions; after per-input normalization and
        // centring the data still lies in a space of dimension <= 5.
        let mut rng = Rng::new(3);
        let basis = crate::tensor::haar_orthogonal(20, &mut rng).unwrap();
        let coeff = gaussian_matrix(5, 400, &mut rng).unwrap();
        let raw = basis.columns(0, 5) * coeff;
        // Make each input zero-mean with unit variance so step 1 is a pure rescale
        // that keeps the 5-dimensional span.
        let mut centred = raw.clone();
        for mut c in centred.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        let (_, rep) = preprocess_inputs(&centred, PreprocessMode::default(), &mut rng).unwrap();
        let oracle = {
            let mut x = centred.clone();
            for mut c in x.column_iter_mut() {
                let n = (c.norm_squared() / 20.0).sqrt();
                c /= n;
            }
            let means = x.column_mean();
            for mut c in x.column_iter_mut() {
                c -= &means;
            }
            let mut e: Vec<f64> = SymmetricEigen::new(&x * x.transpose() / 400.0)
                .eigenvalues
                .iter()
                .copied()
                .collect();
            e.sort_by(|a, b| b.partial_cmp(a).unwrap());
            e
        };
        assert!(oracle[5..].iter().all(|l| l.abs() < 1e-10));
        assert_eq!(rep.d_out, components_for_fraction(&oracle, 0.99));
        assert!(rep.d_out <= 5);
        let k_all = components_for_fraction(&oracle, 1.0);
        assert_eq!(k_all, 5);
    }

    #[test]
    fn feature_standardize_is_unit_variance() {
        let mut rng = Rng::new(4);
        let raw = gaussian_matrix(4, 50, &mut rng).unwrap().map(|v| v * 7.0 - 2.0);
        let (x, _) = preprocess_inputs(&raw, PreprocessMode::FeatureStandardize, &mut rng).unwrap();
        for r in 0..4 {
            assert!(x.row(r).mean().abs() < 1e-12);
        }
        assert!((second_moment(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_rejected() {
        let mut rng = Rng::new(5);
        let mut raw = gaussian_matrix(3, 10, &mut rng).unwrap();
        raw.column_mut(4).fill(2.0);
        assert!(matches!(
            preprocess_inputs(&raw, PreprocessMode::default(), &mut rng),
            Err(NlcError::DegenerateInput(_))
        ));
    }

    #[test]
    fn components_count() {
        assert_eq!(components_for_fraction(&[5.0, 3.0, 1.0, 1.0], 0.8), 2);
        assert_eq!(components_for_fraction(&[5.0, 3.0, 1.0, 1.0], 0.81), 3);
    }
}
