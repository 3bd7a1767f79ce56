use serde::{Deserialize, Serialize};

use super::{
    error_preserving_perturbation, gvcs, io_correlation, nlc, nonlinearity_samples,
    output_bias, CorrelationMode, EstimatorConfig, NonlinearityProbeConfig,
};
use crate::data::Dataset;
use crate::error::{NlcError, Result};
use crate::net::Network;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nlc: f64,
    pub output_bias: f64,
    pub gvcs: f64,
    pub gvl: f64,
    pub input_correlation: f64,
    pub output_correlation: f64,
    pub nonlinearity_median: Option<f64>,
    pub perturbation_radius: Option<f64>,
}

pub const METRIC_REPORT_HEADER: &str = "nlc,output_bias,gvcs,gvl,input_correlation,\
output_correlation,nonlinearity_median,perturbation_radius";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl MetricReport {
    /// Values in [`METRIC_REPORT_HEADER`] order; absent values are empty.
    pub fn csv(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            self.nlc,
            self.output_bias,
            self.gvcs,
            self.gvl,
            self.input_correlation,
            self.output_correlation,
            opt(self.nonlinearity_median),
            opt(self.perturbation_radius)
        )
    }

    /// `(name, value)` pairs of the values present.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("nlc", self.nlc),
            ("output_bias", self.output_bias),
            ("gvcs", self.gvcs),
            ("gvl", self.gvl),
            ("input_correlation", self.input_correlation),
            ("output_correlation", self.output_correlation),
        ];
        if let Some(v) = self.nonlinearity_median {
            out.push(("nonlinearity_median", v));
        }
        if let Some(v) = self.perturbation_radius {
            out.push(("perturbation_radius", v));
        }
        out
    }
}

/// Which optional measurements [`measure_report`] performs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub correlation: CorrelationMode,
    pub nonlinearity: Option<NonlinearityProbeConfig>,
    pub perturbation: Option<(f64, NonlinearityProbeConfig)>,
}

pub fn measure_report(
    net: &Network,
    data: &Dataset,
    cfg: &EstimatorConfig,
    opts: &ReportOptions,
) -> Result<MetricReport> {
    let nlc = nlc(net, data, cfg)?;
    let output_bias = output_bias(net, data, cfg)?;
    let gvcs = gvcs(net, data, cfg)?;
    let (input_correlation, output_correlation) = io_correlation(net, data, cfg, opts.correlation)?;
    let nonlinearity_median = opts
        .nonlinearity
        .as_ref()
        .map(|p| nonlinearity_samples(net, data, p, cfg).map(|s| s.median))
        .transpose()?;
    let perturbation_radius = opts
        .perturbation
        .as_ref()
        .map(|(t, p)| error_preserving_perturbation(net, data, *t, p, cfg).map(|s| s.median))
        .transpose()?;
    if !(nlc > 0.0) {
        return Err(NlcError::Consistency(format!("NLC {nlc} is not positive")));
    }
    Ok(MetricReport {
        nlc,
        output_bias,
        gvcs,
        gvl: gvcs * (data.d_in() as f64).sqrt(),
        input_correlation,
        output_correlation,
        nonlinearity_median,
        perturbation_radius,
    })
}
