use rayon::prelude::*;

use super::moments::{denominator_outputs, moments_of};
use super::EstimatorConfig;
use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::Model;
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct NlcEstimate {
    pub nlc: f64,
    /// Mean of `(u^T J (x' - x_mean))^2` per column.
    pub numerator: f64,
    /// `E ||f - f_mean||^2`.
    pub denominator: f64,
    pub samples: usize,
}

/// Stochastic NLC with its two halves.
///
/// Each numerator batch forwards `B` training points drawn without
/// replacement, pulls a Gaussian `U` back through the batch Jacobian and
/// pairs column `k` of the result with an independent training point
/// `x'_k - x_mean`. For batch-coupled models the pulled-back column `k`
/// already sums over every output column, so the same per-column average
/// estimates the batch-generalized trace.
pub fn nlc_estimate<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &EstimatorConfig,
) -> Result<NlcEstimate> {
    let b = cfg.effective_batch(model, data, Split::Train)?;
    let outputs = denominator_outputs(model, data, cfg)?;
    let moments = moments_of(&outputs)?;
    if !(moments.trace > 0.0) {
        return Err(NlcError::DegenerateOutput("output covariance has zero trace".into()));
    }

    let root = cfg.root().fork("numerator");
    let train = data.indices(Split::Train);
    let mean = &data.stats().mean;
    let sums: Vec<f64> = (0..cfg.n_batches)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = root.fork_index(i as u64);
            let idx: Vec<usize> = rng
                .sample_without_replacement(train.len(), b)
                .into_iter()
                .map(|j| train[j])
                .collect();
            let primed = data.sample_train_indices(b, &mut rng);
            let u = Matrix::from_fn(model.d_out(), b, |_, _| rng.normal());
            let lin = model.linearize(&data.batch(&idx).0)?;
            let g = lin.vjp(&u)?;
            let (xp, _) = data.batch(&primed);
            let mut total = 0.0;
            for k in 0..b {
                let dot: f64 = g
                    .column(k)
                    .iter()
                    .zip(xp.column(k).iter().zip(mean.iter()))
                    .map(|(gv, (x, m))| gv * (x - m))
                    .sum();
                total += dot * dot;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let samples = cfg.n_batches * b;
    let numerator = sums.iter().sum::<f64>() / samples as f64;
    let nlc = (numerator / moments.trace).sqrt();
    if !nlc.is_finite() {
        return Err(NlcError::overflow(0, "NLC estimate is not finite"));
    }
    Ok(NlcEstimate {
        nlc,
        numerator,
        denominator: moments.trace,
        samples,
    })
}

/// `sqrt(E Tr(J Cov_x J^T) / Tr(Cov_f))` on the training split.
pub fn nlc<M: Model + ?Sized>(model: &M, data: &Dataset, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(nlc_estimate(model, data, cfg)?.nlc)
}
