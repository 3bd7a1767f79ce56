use rayon::prelude::*;

use super::EstimatorConfig;
use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::Model;
use crate::tensor::{Matrix, StreamingMoments, Vector};

/// Mean and centred spread of the network outputs over the training set.
#[derive(Clone, Debug)]
pub struct OutputMoments {
    pub mean: Vector,
    /// `E ||f - f_mean||^2`.
    pub trace: f64,
    pub count: usize,
}

impl OutputMoments {
    /// `sqrt(E||f||^2 / E||f - f_mean||^2)`, evaluated as
    /// `sqrt(1 + ||f_mean||^2 / trace)` so it never drops below 1.
    pub fn bias(&self) -> Result<f64> {
        if !(self.trace > 0.0) {
            return Err(NlcError::InfiniteBias);
        }
        let ratio = (1.0 + self.mean.norm_squared() / self.trace).sqrt();
        if !(ratio >= 1.0) {
            return Err(NlcError::Consistency(format!("output bias {ratio} below 1")));
        }
        Ok(ratio)
    }
}

fn evaluate_batches<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    batches: &[Vec<usize>],
) -> Result<Vec<Matrix>> {
    batches
        .par_iter()
        .map(|idx| model.apply(&data.batch(idx).0))
        .collect()
}

/// Outputs of every training point, in the order of the training split.
/// Batch-coupled models see the points in consecutive batches of size `b`.
pub fn aligned_training_outputs<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    b: usize,
) -> Result<Matrix> {
    let batches = data.split_batches(Split::Train, b);
    let parts = evaluate_batches(model, data, &batches)?;
    let n: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Matrix::zeros(model.d_out(), n);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(&p);
        at += p.ncols();
    }
    Ok(out)
}

/// Output columns entering the denominator: one in-order pass for
/// independent models; for batch-coupled models, shuffled passes of
/// batches of size `B` until at least `n_batches` batches were seen.
pub(super) fn denominator_outputs<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &EstimatorConfig,
) -> Result<Vec<Matrix>> {
    let b = cfg.effective_batch(model, data, Split::Train)?;
    let batches = if model.batch_coupled() {
        let rng = cfg.root().fork("outputs");
        let mut all = Vec::new();
        let mut pass = 0u64;
        while pass == 0 || all.len() < cfg.n_batches {
            all.extend(data.epoch_batches(b, &mut rng.fork_index(pass)));
            pass += 1;
        }
        all
    } else {
        data.split_batches(Split::Train, b)
    };
    evaluate_batches(model, data, &batches)
}

/// Two-pass output moments.
pub fn output_moments<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &EstimatorConfig,
) -> Result<OutputMoments> {
    moments_of(&denominator_outputs(model, data, cfg)?)
}

pub(super) fn moments_of(parts: &[Matrix]) -> Result<OutputMoments> {
    let mut m = StreamingMoments::default();
    for p in parts {
        m.observe_columns(p)?;
    }
    m.begin_second_pass()?;
    for p in parts {
        m.accumulate_columns(p)?;
    }
    Ok(OutputMoments {
        mean: Vector::from_column_slice(m.mean().expect("second pass started")),
        trace: m.trace()?,
        count: m.count(),
    })
}

/// Output bias of `model` on the training split.
pub fn output_bias<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    output_moments(model, data, cfg)?.bias()
}
