use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::aligned_training_outputs;
use super::EstimatorConfig;
use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::{Model, Network};
use crate::tensor::{Matrix, Rng, Vector};

/// `E ||d loss / dx||^2` over the training split.
///
/// The network loss is a batch mean, so the per-example gradient of column
/// `k` is `B` times column `k` of the batch input gradient.
pub fn input_gradient_second_moment(
    net: &Network,
    data: &Dataset,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let b = cfg.effective_batch(net, data, Split::Train)?;
    let batches = data.split_batches(Split::Train, b);
    let sums: Vec<f64> = batches
        .par_iter()
        .map(|idx| -> Result<f64> {
            let (x, labels) = data.batch(idx);
            let (_, g) = net.loss_and_input_grad(&x, &labels)?;
            let scale = idx.len() as f64;
            Ok(g.norm_squared() * scale * scale)
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / data.indices(Split::Train).len() as f64)
}

/// Gradient vector component size, `sqrt(E ||d loss / dx||^2 / d_in)`.
pub fn gvcs(net: &Network, data: &Dataset, cfg: &EstimatorConfig) -> Result<f64> {
    Ok((input_gradient_second_moment(net, data, cfg)? / data.d_in() as f64).sqrt())
}

/// Gradient vector length, `sqrt(E ||d loss / dx||^2)`.
pub fn gvl(net: &Network, data: &Dataset, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(input_gradient_second_moment(net, data, cfg)?.sqrt())
}

/// Reference point subtracted before taking cosines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Subtract the mean input (output).
    #[default]
    Centered,
    /// Use raw vectors.
    Uncentered,
}

pub const CORRELATION_PAIRS: usize = 10_000;

fn quadratic_mean_cosine(cols: &Matrix, center: &Vector, pairs: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    let mut used = 0usize;
    for &(i, j) in pairs {
        let a = cols.column(i) - center;
        let b = cols.column(j) - center;
        let denom = a.norm_squared() * b.norm_squared();
        if denom > 0.0 {
            total += a.dot(&b).powi(2) / denom;
            used += 1;
        }
    }
    if used == 0 {
        0.0
    } else {
        (total / used as f64).sqrt()
    }
}

/// Quadratic mean of the pairwise cosine similarity of inputs and of
/// outputs, over `CORRELATION_PAIRS` random pairs of distinct training
/// points.
pub fn io_correlation<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &EstimatorConfig,
    mode: CorrelationMode,
) -> Result<(f64, f64)> {
    let b = cfg.effective_batch(model, data, Split::Train)?;
    let train = data.indices(Split::Train);
    let n = train.len();
    if n < 2 {
        return Err(NlcError::Statistics("correlations need two training points".into()));
    }
    let x = data.split_data(Split::Train).0;
    let f = aligned_training_outputs(model, data, b)?;
    let mut rng = Rng::new(cfg.seed).fork("correlation");
    let pairs: Vec<(usize, usize)> = (0..CORRELATION_PAIRS)
        .map(|_| {
            let i = rng.below(n);
            let j = (i + 1 + rng.below(n - 1)) % n;
            (i, j)
        })
        .collect();
    let (x_center, f_center) = match mode {
        CorrelationMode::Centered => (data.stats().mean.clone(), f.column_mean()),
        CorrelationMode::Uncentered => (Vector::zeros(x.nrows()), Vector::zeros(f.nrows())),
    };
    Ok((
        quadratic_mean_cosine(&x, &x_center, &pairs),
        quadratic_mean_cosine(&f, &f_center, &pairs),
    ))
}

