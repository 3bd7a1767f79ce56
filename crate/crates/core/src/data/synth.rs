use super::{preprocess, Dataset, PreprocessMode, RawData, SplitFractions};
use crate::error::{NlcError, Result};
use crate::tensor::{gaussian_matrix, haar_orthogonal, Matrix, Rng};

/// Class-conditional Gaussians with identity covariance whose means are
/// pairwise `separation` apart, passed through the full preprocessing.
/// Labels cycle through the classes so counts differ by at most one.
pub fn synth_gaussian_classes(
    d_in: usize,
    n_classes: usize,
    n: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(NlcError::Parameter("need at least 2 classes".into()));
    }
    if n_classes > d_in {
        return Err(NlcError::Parameter(format!(
            "{n_classes} orthogonal class means do not fit in {d_in} dimensions"
        )));
    }
    let dirs = haar_orthogonal(d_in, &mut rng.fork("means"))?;
    let radius = separation / std::f64::consts::SQRT_2;
    let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let mut x = gaussian_matrix(d_in, n, &mut rng.fork("noise"))?;
    for (j, &y) in labels.iter().enumerate() {
        let mut col = x.column_mut(j);
        col.axpy(radius, &dirs.column(y), 1.0);
    }
    let (ds, _) = preprocess(
        &format!("synth-d{d_in}-k{n_classes}-n{n}-sep{separation}"),
        &x,
        labels,
        n_classes,
        PreprocessMode::default(),
        SplitFractions::default(),
        rng,
    )?;
    Ok(ds)
}

/// Raw standard-Gaussian inputs with uniformly random labels and no
/// preprocessing.
pub fn unit_gaussian(d_in: usize, n: usize, n_classes: usize, rng: &mut Rng) -> Result<Dataset> {
    let x = gaussian_matrix(d_in, n, &mut rng.fork("inputs"))?;
    let mut lr = rng.fork("labels");
    let labels = (0..n).map(|_| lr.below(n_classes)).collect();
    Dataset::new(
        &format!("gaussian-d{d_in}-n{n}"),
        x,
        labels,
        n_classes,
        SplitFractions::default(),
        &mut rng.fork("splits"),
    )
}

fn triangle(i: f64, centre: f64) -> f64 {
    (6.0 - (i - centre).abs()).max(0.0)
}

/// Breiman's waveform generator with 19 extra pure-noise attributes:
/// 40 features and 3 classes, each class a random convex mix of two of three
/// shifted triangular waves plus unit Gaussian noise.
pub fn waveform_noise(n: usize, rng: &mut Rng) -> RawData {
    let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
    let centres = [11.0, 15.0, 7.0];
    let mut x = Matrix::zeros(40, n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let class = rng.below(3);
        let u = rng.uniform();
        let (a, b) = pairs[class];
        for i in 0..21 {
            let t = (i + 1) as f64;
            let v = u * triangle(t, centres[a]) + (1.0 - u) * triangle(t, centres[b]);
            x[(i, j)] = v + rng.normal();
        }
        for i in 21..40 {
            x[(i, j)] = rng.normal();
        }
        labels.push(class);
    }
    RawData {
        inputs: x,
        labels,
        class_names: vec!["0".into(), "1".into(), "2".into()],
    }
}

/// [`waveform_noise`] standardized per feature and split 60/20/20.
pub fn waveform_noise_dataset(n: usize, rng: &mut Rng) -> Result<Dataset> {
    let raw = waveform_noise(n, &mut rng.fork("generator"));
    let (ds, _) = preprocess(
        &format!("waveform-noise-n{n}"),
        &raw.inputs,
        raw.labels,
        3,
        PreprocessMode::FeatureStandardize,
        SplitFractions::default(),
        rng,
    )?;
    Ok(ds)
}
