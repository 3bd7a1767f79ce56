use nalgebra::{DVector, RealField, SymmetricEigen};

use super::Matrix;
use crate::error::{NlcError, Result};

/// Mean and population trace-covariance of a vector stream.
///
/// The stream is visited twice: once for the mean, once for the centred
/// squared deviations. Subtracting the mean before squaring keeps the
/// result accurate for bias-to-spread ratios up to roughly `2^b` (`b` the
/// mantissa width), whereas [`one_pass_mean_and_trace`] loses everything
/// beyond roughly `2^(b/2)`.
pub fn two_pass_mean_and_trace<I, V>(stream: I) -> Result<(Vec<f64>, f64)>
where
    I: IntoIterator<Item = V> + Clone,
    V: AsRef<[f64]>,
{
    let mut moments = StreamingMoments::default();
    for v in stream.clone() {
        moments.observe(v.as_ref())?;
    }
    moments.begin_second_pass()?;
    for v in stream {
        moments.accumulate(v.as_ref())?;
    }
    let trace = moments.trace()?;
    Ok((moments.mean().unwrap().to_vec(), trace))
}

/// The cancelling `E||v||^2 - ||mean||^2` form. Kept for comparisons only.
pub fn one_pass_mean_and_trace<I, V>(stream: I) -> Result<(Vec<f64>, f64)>
where
    I: IntoIterator<Item = V>,
    V: AsRef<[f64]>,
{
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    let mut sq = 0.0;
    for v in stream {
        let v = v.as_ref();
        if count == 0 {
            sum = vec![0.0; v.len()];
        } else if v.len() != sum.len() {
            return Err(dim_mismatch(sum.len(), v.len()));
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        sq += v.iter().map(|x| x * x).sum::<f64>();
        count += 1;
    }
    if count < 2 {
        return Err(NlcError::Statistics(format!("need at least 2 vectors, got {count}")));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    Ok((mean, sq / n - mean_sq))
}

/// Two-phase accumulator behind [`two_pass_mean_and_trace`].
///
/// Phase one: `observe` every vector. Then `begin_second_pass` and
/// `accumulate` the same vectors again.
#[derive(Clone, Debug, Default)]
pub struct StreamingMoments {
    count: usize,
    sum: Vec<f64>,
    mean: Option<Vec<f64>>,
    second_count: usize,
    sq_dev: f64,
}

impl StreamingMoments {
    pub fn observe(&mut self, v: &[f64]) -> Result<()> {
        if self.mean.is_some() {
            return Err(NlcError::Statistics("observe called during second pass".into()));
        }
        if self.count == 0 {
            self.sum = vec![0.0; v.len()];
        } else if v.len() != self.sum.len() {
            return Err(dim_mismatch(self.sum.len(), v.len()));
        }
        for (s, x) in self.sum.iter_mut().zip(v) {
            *s += x;
        }
        self.count += 1;
        Ok(())
    }

    /// Observes every column of `m`.
    pub fn observe_columns(&mut self, m: &Matrix) -> Result<()> {
        for c in m.column_iter() {
            self.observe(c.as_slice())?;
        }
        Ok(())
    }

    pub fn begin_second_pass(&mut self) -> Result<()> {
        if self.count < 2 {
            return Err(NlcError::Statistics(format!(
                "need at least 2 vectors, got {}",
                self.count
            )));
        }
        let n = self.count as f64;
        self.mean = Some(self.sum.iter().map(|s| s / n).collect());
        Ok(())
    }

    pub fn accumulate(&mut self, v: &[f64]) -> Result<()> {
        let mean = self
            .mean
            .as_ref()
            .ok_or_else(|| NlcError::Statistics("accumulate before begin_second_pass".into()))?;
        if v.len() != mean.len() {
            return Err(dim_mismatch(mean.len(), v.len()));
        }
        self.sq_dev += v
            .iter()
            .zip(mean)
            .map(|(x, m)| (x - m) * (x - m))
            .sum::<f64>();
        self.second_count += 1;
        Ok(())
    }

    pub fn accumulate_columns(&mut self, m: &Matrix) -> Result<()> {
        for c in m.column_iter() {
            self.accumulate(c.as_slice())?;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    /// Population trace of the covariance, `(1/N) sum ||v - mean||^2`.
    pub fn trace(&self) -> Result<f64> {
        if self.mean.is_none() {
            return Err(NlcError::Statistics("trace requested before second pass".into()));
        }
        if self.second_count != self.count {
            return Err(NlcError::Statistics(format!(
                "second pass saw {} vectors, first pass saw {}",
                self.second_count, self.count
            )));
        }
        Ok(self.sq_dev / self.count as f64)
    }
}

fn dim_mismatch(expected: usize, got: usize) -> NlcError {
    NlcError::Dimension(format!("vector of length {got} in a stream of length {expected}"))
}

/// Second moment over squared centred spread, `sqrt(E||v||^2 / E||v - mean||^2)`,
/// computed in the scalar type `T` with either the two-pass or the one-pass
/// recipe. Used to demonstrate where reduced precision breaks down.
pub fn bias_ratio_in<T: RealField + Copy>(values: &[Vec<f64>], two_pass: bool) -> f64 {
    let cast = |x: f64| nalgebra::convert::<f64, T>(x);
    let n = cast(values.len() as f64);
    let dim = values[0].len();
    let mut mean = vec![T::zero(); dim];
    let mut second = T::zero();
    for v in values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += cast(*x);
        }
        second += v.iter().fold(T::zero(), |acc, x| acc + cast(*x) * cast(*x));
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    second /= n;
    let spread = if two_pass {
        let mut acc = T::zero();
        for v in values {
            for (m, x) in mean.iter().zip(v) {
                let d = cast(*x) - *m;
                acc += d * d;
            }
        }
        acc / n
    } else {
        second - mean.iter().fold(T::zero(), |acc, m| acc + *m * *m)
    };
    let ratio: T = (second / spread).sqrt();
    nalgebra::try_convert::<T, f64>(ratio).unwrap_or(f64::NAN)
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues (rounding noise) are clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    if m.nrows() != m.ncols() {
        return Err(NlcError::Dimension(format!(
            "psd_sqrt needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let eig = SymmetricEigen::new(m.clone());
    let root: DVector<f64> = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * Matrix::from_diagonal(&root) * v.transpose())
}

/// Population covariance of the columns of `x` around their mean.
pub fn column_covariance(x: &Matrix) -> Result<(DVector<f64>, Matrix)> {
    let n = x.ncols();
    if n < 2 {
        return Err(NlcError::Statistics(format!("need at least 2 columns, got {n}")));
    }
    let mean = x.column_mean();
    let mut centred = x.clone();
    for mut c in centred.column_iter_mut() {
        c -= &mean;
    }
    let cov = &centred * centred.transpose() / n as f64;
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_stream() {
        let data = vec![vec![3.0, 3.0]; 100];
        let (mean, tr) = two_pass_mean_and_trace(&data).unwrap();
        assert_eq!(mean, vec![3.0, 3.0]);
        assert_eq!(tr, 0.0);
    }

    #[test]
    fn plus_minus_one() {
        let data = vec![vec![-1.0], vec![1.0]];
        let (mean, tr) = two_pass_mean_and_trace(&data).unwrap();
        assert_eq!(mean, vec![0.0]);
        assert_eq!(tr, 1.0);
    }

    #[test]
    fn large_offset_breaks_one_pass_only() {
        let data = vec![vec![1e8 - 1.0], vec![1e8 + 1.0]];
        let (_, tr) = two_pass_mean_and_trace(&data).unwrap();
        assert_eq!(tr, 1.0);
        // (1e16 - 2e8 + 1 + 1e16 + 2e8 + 1)/2 - 1e16: the +1 terms sit below
        // the 2.0 ulp of 1e16, so the cancelling form cannot return 1.
        let (_, naive) = one_pass_mean_and_trace(&data).unwrap();
        assert_ne!(naive, 1.0);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            two_pass_mean_and_trace(&empty),
            Err(NlcError::Statistics(_))
        ));
        assert!(matches!(
            two_pass_mean_and_trace(&vec![vec![1.0]]),
            Err(NlcError::Statistics(_))
        ));
        assert!(matches!(
            two_pass_mean_and_trace(&vec![vec![1.0], vec![1.0, 2.0]]),
            Err(NlcError::Dimension(_))
        ));
    }

    #[test]
    fn psd_sqrt_reconstructs() {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 0.0]);
        let cov = &a * a.transpose();
        let r = psd_sqrt(&cov).unwrap();
        assert!((&r * r.transpose() - &cov).amax() < 1e-12);
    }

    #[test]
    fn reduced_precision_bias_ratio() {
        // Spread 1 around an offset of 1e5: ratio ~1e5, beyond 2^(24/2) = 4096
        // but well below 2^24.
        let data: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![1e5 + if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
        let exact = (1.0f64 + 1e10).sqrt();
        let two = bias_ratio_in::<f32>(&data, true);
        assert!((two - exact).abs() / exact < 1e-3, "{two}");
        let one = bias_ratio_in::<f32>(&data, false);
        assert!(!((one - exact).abs() / exact < 0.1), "{one}");
    }

    // Exact rational oracle: N^2 * trace = N * sum ||v||^2 - ||sum v||^2.
    fn rational_trace(data: &[Vec<i64>]) -> f64 {
        let n = data.len() as i128;
        let dim = data[0].len();
        let mut sum = vec![0i128; dim];
        let mut sq = 0i128;
        for v in data {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += *x as i128;
                sq += (*x as i128) * (*x as i128);
            }
        }
        let num = n * sq - sum.iter().map(|s| s * s).sum::<i128>();
        num as f64 / (n * n) as f64
    }

    proptest! {
        #[test]
        fn matches_rational_oracle(
            data in (1usize..5).prop_flat_map(|d| {
                proptest::collection::vec(proptest::collection::vec(-1_000_000i64..1_000_000, d), 2..60)
            })
        ) {
            let as_f64: Vec<Vec<f64>> = data.iter().map(|v| v.iter().map(|x| *x as f64).collect()).collect();
            let (_, tr) = two_pass_mean_and_trace(&as_f64).unwrap();
            let exact = rational_trace(&data);
            prop_assert!(tr >= 0.0);
            let scale = exact.abs().max(1e-300);
            prop_assert!((tr - exact).abs() <= 1e-10 * scale + 1e-12, "{} vs {}", tr, exact);
        }

        #[test]
        fn mean_is_arithmetic_mean(data in proptest::collection::vec(-1e6f64..1e6, 2..50)) {
            let stream: Vec<Vec<f64>> = data.iter().map(|x| vec![*x]).collect();
            let (mean, _) = two_pass_mean_and_trace(&stream).unwrap();
            let direct = data.iter().sum::<f64>() / data.len() as f64;
            prop_assert!((mean[0] - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }
}
