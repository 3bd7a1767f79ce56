//! Random architecture sampling, calibration and instantiation.

use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::activation::create_activation;
pub use crate::net::ArchitectureSpec;
use crate::net::{ActivationConfig, LayerSpec, Network, Normalization, SkipConfig, SkipStart};
use crate::tensor::quadrature::gaussian_expectations;
use crate::tensor::{fan_gain, orthogonal_submatrix_init, Matrix, Rng, Vector};

/// Variance of nonzero initial biases.
pub const BIAS_VARIANCE: f64 = 0.05;

/// Activation names with their sampling weights (in elevenths).
pub const ACTIVATION_WEIGHTS: [(&str, f64); 8] = [
    ("relu", 2.0),
    ("selu", 2.0),
    ("gaussian", 2.0),
    ("tanh", 1.0),
    ("even_tanh", 1.0),
    ("sigmoid", 1.0),
    ("square", 1.0),
    ("odd_square", 1.0),
];

const HALF_QUARTER: [f64; 3] = [0.5, 0.25, 0.25];

/// Inclusive range of odd depths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DepthRange {
    pub min: usize,
    pub max: usize,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange { min: 3, max: 49 }
    }
}

impl DepthRange {
    pub fn odd_depths(&self) -> Vec<usize> {
        (self.min..=self.max).filter(|d| d % 2 == 1).collect()
    }
}

/// Trainable parameters of a depth-`depth` net of hidden width `w`.
pub fn parameter_count(depth: usize, w: usize, d_in: usize, d_out: usize) -> usize {
    assert!(depth >= 2, "hidden width needs depth >= 2");
    d_in * w + w + (depth - 2) * (w * w + w) + w * d_out + d_out
}

/// Width whose parameter count is closest to `budget`; ties go to the smaller width.
pub fn solve_width(depth: usize, budget: usize, d_in: usize, d_out: usize) -> Result<usize> {
    if depth < 2 {
        return Err(NlcError::Configuration(format!("depth {depth} has no hidden width")));
    }
    let p = |w| parameter_count(depth, w, d_in, d_out);
    if budget < p(1) {
        return Err(NlcError::Capacity(format!(
            "budget {budget} is below the {} parameters of a width-1 depth-{depth} net",
            p(1)
        )));
    }
    // Largest width within budget, by doubling then bisection.
    let mut hi = 1;
    while p(hi) <= budget {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if p(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let below = budget - p(lo);
    let above = p(lo + 1) - budget;
    Ok(if above < below { lo + 1 } else { lo })
}

/// `(b, c)` such that `c * (tau(d s + t) + b)` has unit second moment under
/// a standard normal `s`, with `b` removing the mean when `debias` is set.
pub fn calibrate_activation(
    base: &str,
    dilation: f64,
    shift: f64,
    debias: bool,
    period: Option<f64>,
) -> Result<(f64, f64)> {
    if !(dilation > 0.0) {
        return Err(NlcError::Parameter(format!("dilation must be positive, got {dilation}")));
    }
    let tau = create_activation(base, period)?;
    let breaks: Vec<f64> = tau
        .kinks(-12.0 * dilation + shift, 12.0 * dilation + shift)
        .into_iter()
        .map(|u| (u - shift) / dilation)
        .collect();
    let [m1, m2] = gaussian_expectations(
        |s| {
            let v = tau.value(dilation * s + shift);
            [v, v * v]
        },
        &breaks,
    );
    let b = if debias { -m1 } else { 0.0 };
    let second = m2 + 2.0 * b * m1 + b * b;
    let var = m2 - m1 * m1;
    if !(second > 1e-300) || (debias && !(var > 1e-14 * m2.max(1e-300))) {
        return Err(NlcError::DegenerateActivation(format!(
            "{base} with d={dilation}, t={shift} has no variance to normalize"
        )));
    }
    Ok((b, 1.0 / second.sqrt()))
}

/// Calibrated activation config.
pub fn calibrated(base: &str, dilation: f64, shift: f64, debias: bool) -> Result<ActivationConfig> {
    let (b, c) = calibrate_activation(base, dilation, shift, debias, None)?;
    Ok(ActivationConfig {
        base: base.to_string(),
        dilation,
        shift,
        debias: b,
        scale: c,
        period: None,
    })
}

fn pick<T: Copy>(rng: &mut Rng, values: &[T], weights: &[f64]) -> T {
    values[rng.categorical(weights)]
}

/// Draws an architecture following the randomized construction: odd depth,
/// budget-matched width, init scales, normalization, calibrated activation,
/// skip connections, then the post-processing step.
pub fn sample_architecture(
    rng: &mut Rng,
    budget: usize,
    d_in: usize,
    d_out: usize,
    depths: DepthRange,
) -> Result<ArchitectureSpec> {
    let seed = rng.seed();
    let options = depths.odd_depths();
    if options.is_empty() {
        return Err(NlcError::Configuration(format!("no odd depth in {depths:?}")));
    }
    let depth = options[rng.below(options.len())];
    let width = solve_width(depth, budget, d_in, d_out)?;
    if width < 2 {
        return Err(NlcError::Capacity(format!(
            "budget {budget} leaves width {width} at depth {depth}"
        )));
    }

    let nonzero_bias = rng.uniform() < 0.5;
    let global = pick(rng, &[1.0, 0.9, 1.1], &HALF_QUARTER);
    let mut norm = pick(
        rng,
        &[Normalization::None, Normalization::BatchNorm, Normalization::LayerNorm],
        &HALF_QUARTER,
    );
    let names: Vec<&str> = ACTIVATION_WEIGHTS.iter().map(|(n, _)| *n).collect();
    let weights: Vec<f64> = ACTIVATION_WEIGHTS.iter().map(|(_, w)| *w).collect();
    let base = pick(rng, &names, &weights);
    let dilation = pick(rng, &[1.0, 1.2, 0.8], &HALF_QUARTER);
    let shift = pick(rng, &[0.0, 0.2, -0.2], &HALF_QUARTER);
    let debias = rng.uniform() < 0.5;
    let skip_kind = rng.categorical(&HALF_QUARTER);
    let strength = match skip_kind {
        0 => 0.0,
        1 => 1.0,
        _ => rng.uniform(),
    };
    let start = if rng.uniform() < 0.5 {
        SkipStart::AfterLinear
    } else {
        SkipStart::AfterNormalization
    };
    let skip = if skip_kind == 0 {
        SkipConfig::none()
    } else {
        SkipConfig::new(strength, start)
    };

    let unstable = matches!(base, "square" | "odd_square") || skip.enabled;
    if unstable && norm == Normalization::None {
        norm = if rng.uniform() < 0.5 {
            Normalization::BatchNorm
        } else {
            Normalization::LayerNorm
        };
    }

    let act = calibrated(base, dilation, shift, debias)?;
    let (bias_variance, bias_factor) = if nonzero_bias {
        (BIAS_VARIANCE, 0.95f64.sqrt())
    } else {
        (0.0, 1.0)
    };
    let mut spec = ArchitectureSpec::mlp(d_in, width, d_out, depth, norm, act);
    for l in &mut spec.layers {
        l.weight_multiplier = bias_factor * global;
        l.bias_variance = bias_variance;
        l.bias_multiplier = global;
    }
    spec.skip = skip;
    spec.seed = seed;
    spec.budget = budget;
    spec.validate()?;
    Ok(spec)
}

/// Draws parameters for `spec`: scaled orthogonal weights, Gaussian or zero
/// biases and the fixed final skip projection.
pub fn instantiate(spec: &ArchitectureSpec, rng: &Rng) -> Result<Network> {
    spec.validate()?;
    let mut weights = Vec::with_capacity(spec.depth);
    let mut biases = Vec::with_capacity(spec.depth);
    for (i, l) in spec.layers.iter().enumerate() {
        let LayerSpec {
            fan_in, fan_out, ..
        } = *l;
        let gain = fan_gain(fan_out, fan_in) * l.weight_multiplier;
        let mut wr = rng.fork(&format!("weights/{i}"));
        weights.push(orthogonal_submatrix_init(fan_out, fan_in, gain, &mut wr)?);
        let b = if l.bias_variance > 0.0 {
            let mut br = rng.fork(&format!("biases/{i}"));
            let sd = l.bias_variance.sqrt() * l.bias_multiplier;
            Vector::from_fn(fan_out, |_, _| sd * br.normal())
        } else {
            Vector::zeros(fan_out)
        };
        biases.push(b);
    }
    let projection = if spec.skip.enabled && spec.skip_source(spec.depth - 1).is_some() {
        let d_skip_in = spec.layers[spec.depth - 3].fan_out;
        let mut pr = rng.fork("skip_projection");
        Some(orthogonal_submatrix_init(
            spec.d_out,
            d_skip_in,
            fan_gain(spec.d_out, d_skip_in),
            &mut pr,
        )?)
    } else {
        None
    };
    Network::from_parts(spec.clone(), weights, biases, projection)
}

/// `sqrt(E ||f(x)||^2 / d_out)` over the training split, evaluated in
/// batches of `batch_size`.
pub fn measure_loss_scale(net: &Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for idx in data.split_batches(Split::Train, batch_size) {
        let (x, _) = data.batch(&idx);
        let f = net.apply(&x)?;
        total += f.norm_squared();
        count += f.ncols();
    }
    let c = (total / (count as f64 * net.spec().d_out as f64)).sqrt();
    if !(c > 0.0) || !c.is_finite() {
        return Err(NlcError::DegenerateOutput(format!(
            "output scale {c} cannot calibrate the loss"
        )));
    }
    Ok(c)
}

/// Measures the output scale and stores it as the network's `c_loss`.
pub fn calibrate_loss_scale(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    let c = measure_loss_scale(net, data, batch_size)?;
    net.c_loss = c;
    Ok(c)
}

/// Sample, instantiate and calibrate in one step; all randomness derives
/// from `seed`.
pub fn sample_network(
    seed: u64,
    budget: usize,
    data: &Dataset,
    depths: DepthRange,
    batch_size: usize,
) -> Result<Network> {
    let root = Rng::new(seed);
    let spec = sample_architecture(
        &mut root.fork("architecture"),
        budget,
        data.d_in(),
        data.n_classes(),
        depths,
    )?;
    let mut net = instantiate(&spec, &root.fork("parameters"))?;
    calibrate_loss_scale(&mut net, data, batch_size)?;
    Ok(net)
}

/// Affine network `f(x) = A x + b` as a depth-1 spec.
pub fn affine_network(a: Matrix, b: Vector) -> Result<Network> {
    let (d_out, d_in) = a.shape();
    let spec = ArchitectureSpec {
        depth: 1,
        width: d_out,
        d_in,
        d_out,
        layers: vec![LayerSpec {
            fan_in: d_in,
            fan_out: d_out,
            normalization: Normalization::None,
            activation: None,
            weight_multiplier: 1.0,
            bias_variance: 0.0,
            bias_multiplier: 1.0,
        }],
        skip: SkipConfig::none(),
        seed: 0,
        budget: 0,
    };
    Network::from_parts(spec, vec![a], vec![b], None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn width_for_small_budget() {
        // p(79) = 9799, p(80) = 10003.
        assert_eq!(parameter_count(3, 80, 40, 3), 10_003);
        let brute = (1..500)
            .min_by_key(|&w| (parameter_count(3, w, 40, 3) as i64 - 10_000).abs())
            .unwrap();
        assert_eq!(brute, 80);
        assert_eq!(solve_width(3, 10_000, 40, 3).unwrap(), brute);
    }

    #[test]
    fn exact_budget_returns_that_width() {
        for w in [3, 17, 64] {
            let b = parameter_count(7, w, 12, 5);
            assert_eq!(solve_width(7, b, 12, 5).unwrap(), w);
        }
    }

    #[test]
    fn infeasible_budget() {
        assert!(matches!(solve_width(3, 10, 40, 3), Err(NlcError::Capacity(_))));
    }

    #[test]
    fn relu_calibration_closed_form() {
        let (b, c) = calibrate_activation("relu", 1.0, 0.0, true, None).unwrap();
        assert!((b + 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((c - (0.5 - 1.0 / (2.0 * PI)).powf(-0.5)).abs() < 1e-10);
        let (b, c) = calibrate_activation("identity", 1.0, 0.0, true, None).unwrap();
        assert!(b.abs() < 1e-14 && (c - 1.0).abs() < 1e-12);
        let (b, _) = calibrate_activation("tanh", 1.0, 0.0, true, None).unwrap();
        assert!(b.abs() < 1e-14);
    }

    #[test]
    fn relu_calibration_monte_carlo() {
        let (b, c) = calibrate_activation("relu", 1.2, -0.2, true, None).unwrap();
        let mut rng = Rng::new(4);
        let n = 400_000;
        let m: f64 = (0..n)
            .map(|_| {
                let v = c * ((1.2 * rng.normal() - 0.2).max(0.0) + b);
                v * v
            })
            .sum::<f64>()
            / n as f64;
        // Fourth moment of the calibrated relu is below 10; sd of the mean < 0.005.
        assert!((m - 1.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn sampled_specs_respect_post_processing() {
        let rng = Rng::new(10);
        for i in 0..300 {
            let spec = sample_architecture(
                &mut rng.fork_index(i),
                20_000,
                20,
                3,
                DepthRange::default(),
            )
            .unwrap();
            assert!(spec.depth % 2 == 1 && (3..=49).contains(&spec.depth));
            let base = spec.activation_name().unwrap();
            if base == "square" || base == "odd_square" || spec.skip.enabled {
                assert!(spec.uses_normalization());
            }
            let p = spec.parameter_count() as f64;
            assert!((p - 20_000.0).abs() <= 0.05 * 20_000.0, "{p}");
        }
    }

    #[test]
    fn instantiate_is_deterministic_and_orthogonal() {
        let act = calibrated("tanh", 1.0, 0.0, false).unwrap();
        let spec = ArchitectureSpec::mlp(6, 6, 6, 3, Normalization::None, act);
        let a = instantiate(&spec, &Rng::new(3)).unwrap();
        let b = instantiate(&spec, &Rng::new(3)).unwrap();
        assert_eq!(a.weights, b.weights);
        let w = &a.weights[1];
        assert!((w.transpose() * w - Matrix::identity(6, 6)).amax() < 1e-12);
    }
}
