//! Measurement machinery: NLC, output bias, activation nonlinearity,
//! the nonlinearity distribution, gradient-based confounder metrics and
//! the confounder scenario suite.

mod confounded;
pub mod confounders;
mod moments;
mod nlc;
mod nonlinearity;
mod precision;
mod region;
mod report;
mod tau;

use serde::{Deserialize, Serialize};

pub use confounded::{gvcs, gvl, input_gradient_second_moment, io_correlation, CorrelationMode};
pub use moments::{aligned_training_outputs, output_bias, output_moments, OutputMoments};
pub use nlc::{nlc, nlc_estimate, NlcEstimate};
pub use nonlinearity::{
    c_grid, error_preserving_perturbation, nonlinearity_samples, NonlinearitySamples,
    PerturbationSamples,
};
pub use precision::{precision_check, PrecisionRow, PRECISION_HEADER};
pub use region::{output_region_map, RegionMap};
pub use report::{measure_report, MetricReport, ReportOptions, METRIC_REPORT_HEADER};
pub use tau::{linear_approx_error, nlc_tau};

use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::Model;
use crate::tensor::Rng;

/// Batching and seeding shared by the stochastic estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub batch_size: usize,
    pub n_batches: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            batch_size: 250,
            n_batches: 20,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn new(batch_size: usize, n_batches: usize, seed: u64) -> Self {
        EstimatorConfig {
            batch_size,
            n_batches,
            seed,
        }
    }

    fn root(&self) -> Rng {
        Rng::new(self.seed)
    }

    /// Batch size actually usable on `split`, checked against the model.
    fn effective_batch<M: Model + ?Sized>(
        &self,
        model: &M,
        data: &Dataset,
        split: Split,
    ) -> Result<usize> {
        if self.n_batches == 0 || self.batch_size == 0 {
            return Err(NlcError::Configuration(
                "estimator needs at least one batch of at least one point".into(),
            ));
        }
        if model.d_in() != data.d_in() {
            return Err(NlcError::Dimension(format!(
                "model expects {} inputs, data has {}",
                model.d_in(),
                data.d_in()
            )));
        }
        let b = self.batch_size.min(data.indices(split).len());
        if model.batch_coupled() && b < 2 {
            return Err(NlcError::BatchSize(format!(
                "batch-coupled model needs batches of at least 2, got {b}"
            )));
        }
        if b == 0 {
            return Err(NlcError::Statistics("split is empty".into()));
        }
        Ok(b)
    }
}

/// Sweep settings for the nonlinearity distribution and the
/// error-preserving perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityProbeConfig {
    pub tolerance: f64,
    pub c_start: f64,
    pub spacing: f64,
    pub c_cap: f64,
    /// Samples with `|<V, J U>| < g_floor * ||V|| ||U||` are discarded.
    pub g_floor: f64,
    pub n_batches: usize,
    pub n_u: usize,
    pub n_v: usize,
}

impl Default for NonlinearityProbeConfig {
    fn default() -> Self {
        NonlinearityProbeConfig {
            tolerance: 2.0,
            c_start: 1e-9,
            spacing: 10f64.powf(0.1),
            c_cap: 1.0,
            g_floor: 1e-12,
            n_batches: 10,
            n_u: 10,
            n_v: 10,
        }
    }
}

impl NonlinearityProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NlcError::Configuration(m.to_string()));
        if !(self.tolerance > 1.0) {
            return bad("tolerance must exceed 1");
        }
        if !(self.spacing > 1.0) {
            return bad("spacing must exceed 1");
        }
        if !(self.c_start > 0.0) || !(self.c_cap >= self.c_start) {
            return bad("need 0 < c_start <= c_cap");
        }
        if self.n_batches == 0 || self.n_u == 0 || self.n_v == 0 {
            return bad("probe counts must be positive");
        }
        Ok(())
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
