//! Architecture studies: sample many networks, measure them at
//! initialization and optionally train each one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{instantiate, sample_network, DepthRange};
use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{gvcs, median, nlc, nonlinearity_samples, output_bias, EstimatorConfig, NonlinearityProbeConfig};
use crate::net::{ActivationConfig, ArchitectureSpec, Network, Normalization};
use crate::tensor::Rng;
use crate::trainer::{better_than_random_threshold, lr_search, TrainConfig};

/// Seed of architecture `index` in a study seeded with `seed`.
pub fn architecture_seed(seed: u64, index: usize) -> u64 {
    Rng::new(seed).fork("architectures").fork_index(index as u64).seed()
}

/// Static description of a sampled network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSummary {
    pub arch_id: u64,
    pub depth: usize,
    pub width: usize,
    pub activation: String,
    pub normalization: String,
    pub skip: bool,
}

impl ArchitectureSummary {
    pub fn of(net: &Network) -> Self {
        let spec = net.spec();
        let first = &spec.layers[0];
        ArchitectureSummary {
            arch_id: spec.seed,
            depth: spec.depth,
            width: spec.width,
            activation: first.activation.as_ref().map_or("none".into(), |a| a.base.clone()),
            normalization: first.normalization.name().into(),
            skip: spec.skip.enabled,
        }
    }
}

/// Initial-state measurements of one architecture. Failed measurements
/// keep the architecture and carry the error text instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub arch: ArchitectureSummary,
    pub nlc: Option<f64>,
    pub output_bias: Option<f64>,
    pub gvcs: Option<f64>,
    pub nonlinearity_median: Option<f64>,
    pub error: Option<String>,
}

pub const MEASURE_HEADER: &str = "arch_id,depth,width,activation,normalization,skip,nlc,output_bias,gvcs,nonlinearity_median,error";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

fn quoted(e: &Option<String>) -> String {
    e.as_ref().map_or(String::new(), |s| format!("\"{}\"", s.replace('"', "'")))
}

impl MeasureRow {
    pub fn csv(&self) -> String {
        let a = &self.arch;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.arch_id,
            a.depth,
            a.width,
            a.activation,
            a.normalization,
            a.skip,
            opt(self.nlc),
            opt(self.output_bias),
            opt(self.gvcs),
            opt(self.nonlinearity_median),
            quoted(&self.error)
        )
    }
}

/// Settings shared by both study kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub seed: u64,
    pub n: usize,
    pub budget: usize,
    pub depths: (usize, usize),
    pub estimator: EstimatorConfig,
    /// Also sample the nonlinearity distribution when set.
    pub probe: Option<NonlinearityProbeConfig>,
}

impl StudyConfig {
    fn depth_range(&self) -> DepthRange {
        DepthRange {
            min: self.depths.0,
            max: self.depths.1,
        }
    }

    fn network(&self, index: usize, data: &Dataset) -> Result<Network> {
        let batch = self.estimator.batch_size.min(data.len());
        sample_network(architecture_seed(self.seed, index), self.budget, data, self.depth_range(), batch)
    }
}

fn measure(net: &Network, data: &Dataset, cfg: &StudyConfig) -> MeasureRow {
    let mut row = MeasureRow {
        arch: ArchitectureSummary::of(net),
        nlc: None,
        output_bias: None,
        gvcs: None,
        nonlinearity_median: None,
        error: None,
    };
    let fail = |e: crate::NlcError, row: &mut MeasureRow| {
        if row.error.is_none() {
            row.error = Some(e.to_string());
        }
    };
    let est = &cfg.estimator;
    match nlc(net, data, est) {
        Ok(v) => row.nlc = Some(v),
        Err(e) => fail(e, &mut row),
    }
    match output_bias(net, data, est) {
        Ok(v) => row.output_bias = Some(v),
        Err(e) => fail(e, &mut row),
    }
    match gvcs(net, data, est) {
        Ok(v) => row.gvcs = Some(v),
        Err(e) => fail(e, &mut row),
    }
    if let Some(p) = &cfg.probe {
        match nonlinearity_samples(net, data, p, est) {
            Ok(s) => row.nonlinearity_median = Some(s.median),
            Err(e) => fail(e, &mut row),
        }
    }
    row
}

/// Samples `cfg.n` architectures and measures each in its initial state.
/// Sampling failures are returned as errors; measurement failures are
/// recorded in the row.
pub fn sample_and_measure(data: &Dataset, cfg: &StudyConfig) -> Result<Vec<MeasureRow>> {
    (0..cfg.n)
        .into_par_iter()
        .map(|i| Ok(measure(&cfg.network(i, data)?, data, cfg)))
        .collect()
}

/// Outcome of measuring, training and re-measuring one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub initial: MeasureRow,
    pub smallest_lr: Option<f64>,
    pub selected_lr: Option<f64>,
    pub selected_index: Option<usize>,
    pub n_runs: usize,
    pub test_error: Option<f64>,
    pub final_nlc: Option<f64>,
    pub better_than_random: bool,
    pub error: Option<String>,
}

pub const STUDY_HEADER: &str = "arch_id,depth,width,activation,normalization,skip,initial_nlc,initial_output_bias,initial_gvcs,smallest_lr,selected_lr,selected_index,n_runs,test_error,final_nlc,better_than_random,error";

impl StudyRow {
    pub fn csv(&self) -> String {
        let a = &self.initial.arch;
        let err = self.error.clone().or_else(|| self.initial.error.clone());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            a.arch_id,
            a.depth,
            a.width,
            a.activation,
            a.normalization,
            a.skip,
            opt(self.initial.nlc),
            opt(self.initial.output_bias),
            opt(self.initial.gvcs),
            opt(self.smallest_lr),
            opt(self.selected_lr),
            self.selected_index.map_or(String::new(), |i| i.to_string()),
            self.n_runs,
            opt(self.test_error),
            opt(self.final_nlc),
            self.better_than_random,
            quoted(&err)
        )
    }
}

fn study_one(net: &Network, data: &Dataset, cfg: &StudyConfig, train: &TrainConfig) -> StudyRow {
    let initial = measure(net, data, cfg);
    let mut row = StudyRow {
        initial,
        smallest_lr: None,
        selected_lr: None,
        selected_index: None,
        n_runs: train.n_runs,
        test_error: None,
        final_nlc: None,
        better_than_random: false,
        error: None,
    };
    let result = match lr_search(net, data, train) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let best = result.selected_run();
    row.smallest_lr = Some(result.smallest_lr);
    row.selected_lr = Some(best.lr0);
    row.selected_index = Some(result.selected);
    row.test_error = Some(best.test_error);
    row.better_than_random = best.test_error < better_than_random_threshold(data.n_classes());
    match nlc(&best.snapshot, data, &cfg.estimator) {
        Ok(v) => row.final_nlc = Some(v),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Full pipeline for architecture `index`: sample, measure, search
/// learning rates and re-measure the selected network.
pub fn study_architecture(index: usize, data: &Dataset, cfg: &StudyConfig, train: &TrainConfig) -> Result<StudyRow> {
    let net = cfg.network(index, data)?;
    let mut tc = train.clone();
    tc.seed = architecture_seed(train.seed, index);
    Ok(study_one(&net, data, cfg, &tc))
}

/// [`study_architecture`] for every index. Architectures run one after
/// another and each learning-rate search is parallel inside.
pub fn mini_study(data: &Dataset, cfg: &StudyConfig, train: &TrainConfig) -> Result<Vec<StudyRow>> {
    (0..cfg.n).map(|i| study_architecture(i, data, cfg, train)).collect()
}

/// Median NLC over `seeds` batchnorm networks with one activation, as in
/// the measured rows of the activation table.
pub fn batchnorm_nlc_median(
    activation: &ActivationConfig,
    depth: usize,
    width: usize,
    data: &Dataset,
    seeds: u64,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let values: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let spec = ArchitectureSpec::mlp(
                data.d_in(),
                width,
                data.n_classes(),
                depth,
                Normalization::BatchNorm,
                activation.clone(),
            );
            let net = instantiate(&spec, &Rng::new(s).fork("table"))?;
            nlc(&net, data, &EstimatorConfig { seed: s, ..cfg.clone() })
        })
        .collect::<Result<_>>()?;
    Ok(median(&values))
}
