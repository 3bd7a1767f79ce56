//! Datasets: ingestion, preprocessing, synthetic generators, splits and
//! cached input statistics.

mod csv_input;
mod preprocess;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use csv_input::{load_csv, LabelColumn, RawData};
pub use preprocess::{preprocess, preprocess_inputs, PreprocessMode, PreprocessReport};
pub use synth::{synth_gaussian_classes, unit_gaussian, waveform_noise, waveform_noise_dataset};

use crate::error::{NlcError, Result};
use crate::net::FlatMatrix;
use crate::tensor::{column_covariance, psd_sqrt, select_columns, Matrix, Rng, Vector};

/// Fractions of the data assigned to training and validation; the rest is test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Mean, population covariance and a symmetric square-root factor of the
/// training inputs.
#[derive(Clone, Debug)]
pub struct InputStats {
    pub mean: Vector,
    pub cov: Matrix,
    pub factor: Matrix,
}

impl InputStats {
    /// Draws `n` columns from `N(0, Cov_x)`.
    pub fn sample_directions(&self, n: usize, rng: &mut Rng) -> Matrix {
        let g = Matrix::from_fn(self.factor.ncols(), n, |_, _| rng.normal());
        &self.factor * g
    }
}

/// Statistics of the training columns of `inputs`.
pub fn input_stats_of(inputs: &Matrix) -> Result<InputStats> {
    let (mean, cov) = column_covariance(inputs)?;
    let factor = psd_sqrt(&cov)?;
    Ok(InputStats { mean, cov, factor })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    inputs: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
    stats: InputStats,
}

impl Dataset {
    /// Builds a dataset with random splits drawn from `rng`.
    pub fn new(
        name: &str,
        inputs: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        fractions: SplitFractions,
        rng: &mut Rng,
    ) -> Result<Self> {
        let n = inputs.ncols();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let n_train = (fractions.train * n as f64).round() as usize;
        let n_val = (fractions.validation * n as f64).round() as usize;
        if n_train < 2 || n_train + n_val > n {
            return Err(NlcError::Configuration(format!(
                "cannot split {n} points with fractions {fractions:?}"
            )));
        }
        let test = order.split_off(n_train + n_val);
        let validation = order.split_off(n_train);
        Self::with_splits(name, inputs, labels, n_classes, order, validation, test)
    }

    pub fn with_splits(
        name: &str,
        inputs: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = inputs.ncols();
        if labels.len() != n {
            return Err(NlcError::Dimension(format!("{} labels for {n} inputs", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(NlcError::Parameter(format!("label {bad} with {n_classes} classes")));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&validation).chain(&test) {
            if i >= n || seen[i] {
                return Err(NlcError::Consistency(format!("split index {i} invalid or repeated")));
            }
            seen[i] = true;
        }
        if train.len() < 2 {
            return Err(NlcError::Statistics("training split needs at least 2 points".into()));
        }
        let stats = input_stats_of(&select_columns(&inputs, &train))?;
        Ok(Dataset {
            name: name.to_string(),
            inputs,
            labels,
            n_classes,
            train,
            validation,
            test,
            stats,
        })
    }

    pub fn d_in(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> &InputStats {
        &self.stats
    }

    /// Inputs and labels at the given indices.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (
            select_columns(&self.inputs, idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn split_data(&self, split: Split) -> (Matrix, Vec<usize>) {
        self.batch(self.indices(split))
    }

    /// `B` training indices drawn uniformly with replacement.
    pub fn sample_train_indices(&self, b: usize, rng: &mut Rng) -> Vec<usize> {
        (0..b).map(|_| self.train[rng.below(self.train.len())]).collect()
    }

    /// Shuffled training indices cut into batches of size `b`; a trailing
    /// remainder smaller than 2 is merged into the previous batch.
    pub fn epoch_batches(&self, b: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        let mut order = self.train.clone();
        rng.shuffle(&mut order);
        chunk_indices(&order, b)
    }

    /// Deterministic in-order batches of a split.
    pub fn split_batches(&self, split: Split, b: usize) -> Vec<Vec<usize>> {
        chunk_indices(self.indices(split), b)
    }

    /// Copy with the inputs replaced by `f(inputs)`; splits are kept and the
    /// statistics recomputed.
    pub fn map_inputs(&self, name: &str, f: impl FnOnce(&Matrix) -> Matrix) -> Result<Self> {
        Self::with_splits(
            name,
            f(&self.inputs),
            self.labels.clone(),
            self.n_classes,
            self.train.clone(),
            self.validation.clone(),
            self.test.clone(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = DatasetFile {
            format_version: DATASET_FORMAT_VERSION,
            name: self.name.clone(),
            inputs: FlatMatrix::from(&self.inputs),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            train: self.train.clone(),
            validation: self.validation.clone(),
            test: self.test.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format_version != DATASET_FORMAT_VERSION {
            return Err(NlcError::Configuration(format!(
                "unsupported dataset cache version {}",
                file.format_version
            )));
        }
        Self::with_splits(
            &file.name,
            file.inputs.to_matrix()?,
            file.labels,
            file.n_classes,
            file.train,
            file.validation,
            file.test,
        )
    }
}

fn chunk_indices(idx: &[usize], b: usize) -> Vec<Vec<usize>> {
    let b = b.max(1);
    let mut out: Vec<Vec<usize>> = idx.chunks(b).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    name: String,
    inputs: FlatMatrix,
    labels: Vec<usize>,
    n_classes: usize,
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}
