use nlc_core::arch::{affine_network, instantiate};
use nlc_core::data::{synth_gaussian_classes, unit_gaussian, Dataset, Split};
use nlc_core::metrics::*;
use nlc_core::net::*;
use nlc_core::tensor::{one_pass_mean_and_trace, Matrix, Rng, Vector};
use nlc_core::NlcError;

fn line_data(values: Vec<f64>, labels: Vec<usize>, n_classes: usize) -> Dataset {
    let n = values.len();
    let x = Matrix::from_row_slice(1, n, &values);
    Dataset::with_splits("line", x, labels, n_classes, (0..n).collect(), vec![], vec![]).unwrap()
}

fn plus_minus(n: usize) -> Dataset {
    let v = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    line_data(v, vec![0; n], 1)
}

fn random_affine(d_in: usize, d_out: usize, rng: &mut Rng) -> Network {
    let a = Matrix::from_fn(d_out, d_in, |_, _| rng.normal());
    let b = Vector::from_fn(d_out, |_, _| 3.0 * rng.normal());
    affine_network(a, b).unwrap()
}

#[test]
fn affine_nets_have_unit_nlc_and_unit_c() {
    let mut rng = Rng::new(11);
    let datasets = [
        synth_gaussian_classes(12, 3, 600, 2.0, &mut rng.fork("a")).unwrap(),
        unit_gaussian(7, 600, 2, &mut rng.fork("b")).unwrap(),
        synth_gaussian_classes(30, 5, 800, 4.0, &mut rng.fork("c")).unwrap(),
    ];
    let cfg = EstimatorConfig::new(250, 400, 5);
    for data in &datasets {
        for _ in 0..7 {
            let d_out = 1 + rng.below(6);
            let net = random_affine(data.d_in(), d_out, &mut rng);
            let v = nlc(&net, data, &cfg).unwrap();
            assert!((v - 1.0).abs() < 0.02, "affine NLC {v}");
        }
    }
    let net = random_affine(datasets[0].d_in(), 3, &mut rng);
    let probe = NonlinearityProbeConfig {
        n_batches: 2,
        n_u: 3,
        n_v: 3,
        ..Default::default()
    };
    let s = nonlinearity_samples(&net, &datasets[0], &probe, &cfg).unwrap();
    assert!(s.values.iter().all(|&c| c == 1.0));
    assert_eq!(s.median, 1.0);
}

/// `E_x Tr(J(x) Cov_x J(x)^T) / Tr(Cov_f)` from per-point exact Jacobians.
fn exact_nlc(net: &Network, data: &Dataset) -> f64 {
    let (x, _) = data.split_data(Split::Train);
    let n = x.ncols() as f64;
    let mean = x.column_mean();
    let centred = Matrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] - mean[r]);
    let cov = &centred * centred.transpose() / n;
    let mut num = 0.0;
    for c in 0..x.ncols() {
        let xc = x.columns(c, 1).into_owned();
        let j = exact_jacobian(net, &xc).unwrap().block(0, 0);
        num += (&j * &cov * j.transpose()).trace();
    }
    let f = net.apply(&x).unwrap();
    let fm = f.column_mean();
    let mut den = 0.0;
    for col in f.column_iter() {
        den += (col - &fm).norm_squared();
    }
    ((num / n) / (den / n)).sqrt()
}

#[test]
fn stochastic_nlc_matches_exact_jacobian_oracle() {
    let rng = Rng::new(3);
    let data = synth_gaussian_classes(5, 3, 500, 2.0, &mut rng.fork("data")).unwrap();
    let cases = [
        ("tanh", Normalization::None),
        ("relu", Normalization::LayerNorm),
        ("even_tanh", Normalization::None),
        ("gaussian", Normalization::LayerNorm),
    ];
    for (i, (act, norm)) in cases.iter().enumerate() {
        let spec = ArchitectureSpec::mlp(data.d_in(), 8, 3, 3, *norm, ActivationConfig::plain(act));
        let net = instantiate(&spec, &rng.fork_index(i as u64)).unwrap();
        let want = exact_nlc(&net, &data);
        let got = nlc(&net, &data, &EstimatorConfig::new(250, 400, i as u64)).unwrap();
        assert!(((got - want) / want).abs() < 0.02, "{act}: {got} vs exact {want}");
    }
}

#[test]
fn output_bias_closed_forms() {
    let data = plus_minus(200);
    let cfg = EstimatorConfig::new(64, 4, 0);
    let shifted = |b: f64| affine_network(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, b)).unwrap();

    let centred = output_bias(&shifted(0.0), &data, &cfg).unwrap();
    assert_eq!(centred, 1.0);
    let ten = output_bias(&shifted(10.0), &data, &cfg).unwrap();
    assert!((ten - 101f64.sqrt()).abs() < 1e-12);

    let offset: f64 = 1e12;
    let exact = (1.0 + offset * offset).sqrt();
    let two_pass = output_bias(&shifted(offset), &data, &cfg).unwrap();
    assert!(((two_pass - exact) / exact).abs() < 1e-6);
    let outputs = shifted(offset).apply(data.inputs()).unwrap();
    let (mean, trace) = one_pass_mean_and_trace(outputs.column_iter().map(|c| c.iter().copied().collect::<Vec<_>>())).unwrap();
    let one_pass = (1.0 + mean[0] * mean[0] / trace).sqrt();
    assert!(!one_pass.is_finite() || ((one_pass - exact) / exact).abs() > 0.1);
}

#[test]
fn constant_output_is_reported_not_computed() {
    let data = plus_minus(20);
    let net = affine_network(Matrix::zeros(2, 1), Vector::from_element(2, 4.0)).unwrap();
    let cfg = EstimatorConfig::new(10, 2, 0);
    assert!(matches!(output_bias(&net, &data, &cfg), Err(NlcError::InfiniteBias)));
    assert!(matches!(nlc(&net, &data, &cfg), Err(NlcError::DegenerateOutput(_))));
}

struct Sine;

struct SineAt {
    x: Matrix,
    f: Matrix,
}

impl Linearization for SineAt {
    fn output(&self) -> &Matrix {
        &self.f
    }
    fn vjp(&self, v: &Matrix) -> nlc_core::Result<Matrix> {
        Ok(v.zip_map(&self.x, |v, x| v * x.cos()))
    }
}

impl Model for Sine {
    fn d_in(&self) -> usize {
        1
    }
    fn d_out(&self) -> usize {
        1
    }
    fn batch_coupled(&self) -> bool {
        false
    }
    fn apply(&self, x: &Matrix) -> nlc_core::Result<Matrix> {
        Ok(x.map(f64::sin))
    }
    fn linearize<'a>(&'a self, x: &Matrix) -> nlc_core::Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(SineAt {
            x: x.clone(),
            f: x.map(f64::sin),
        }))
    }
}

/// First `c` on a grid 100 times finer than the probe grid at which the
/// linearization of `sin` at `x` along `u` leaves `[1/2, 2]`.
fn dense_first_failure(x: f64, u: f64) -> Option<f64> {
    let g = x.cos() * u;
    (0..=9000)
        .map(|k| 10f64.powf(-9.0 + k as f64 / 1000.0))
        .find(|&c| {
            let r = ((x + c * u).sin() - x.sin()) / (c * g);
            !(0.5..=2.0).contains(&r)
        })
}

#[test]
fn sine_median_matches_dense_grid_definition() {
    let mut rng = Rng::new(17);
    let values: Vec<f64> = (0..4000).map(|_| 3.0 * rng.normal()).collect();
    let n = values.len();
    let data = line_data(values.clone(), vec![0; n], 1);
    let probe = NonlinearityProbeConfig {
        n_batches: 400,
        n_u: 5,
        n_v: 1,
        ..Default::default()
    };
    let got = nonlinearity_samples(&Sine, &data, &probe, &EstimatorConfig::new(1, 1, 4)).unwrap();

    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut oracle = Vec::new();
    let mut orng = Rng::new(99);
    while oracle.len() < 4000 {
        let x = values[orng.below(n)];
        let u = sd * orng.normal();
        if (x.cos() * u).abs() < 1e-12 * u.abs() {
            continue;
        }
        oracle.push(dense_first_failure(x, u).map_or(1.0, |c| (1.0 / c).max(1.0)));
    }
    let want = median(&oracle);
    assert!(want > 1.2, "oracle median {want} should not sit at the cap");
    let gap = (got.median.log10() - want.log10()).abs();
    assert!(gap <= 0.1 + 0.03, "median C {} vs dense-grid {want}", got.median);
}

#[test]
fn perturbation_constant_predictor_returns_cap() {
    let mut rng = Rng::new(2);
    let data = synth_gaussian_classes(4, 2, 400, 2.0, &mut rng).unwrap();
    let net = affine_network(Matrix::zeros(2, data.d_in()), Vector::from_vec(vec![1.0, 0.0])).unwrap();
    let probe = NonlinearityProbeConfig {
        n_batches: 3,
        n_u: 3,
        ..Default::default()
    };
    let r = error_preserving_perturbation(&net, &data, 0.05, &probe, &EstimatorConfig::new(50, 1, 0)).unwrap();
    assert_eq!(r.median, 1.0);
}

/// Brute-force radius for the 1-d classifier `sign(x)` on a fresh sample of
/// batches and directions.
fn brute_radius(values: &[f64], sd: f64, b: usize, draws: usize, grid: &[f64], rng: &mut Rng) -> f64 {
    let mut out = Vec::new();
    for _ in 0..draws {
        let idx = rng.sample_without_replacement(values.len(), b);
        let x: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        let u: Vec<f64> = (0..b).map(|_| sd * rng.normal()).collect();
        let mut wrong = vec![false; b];
        let mut largest = 0.0;
        for &c in grid {
            for k in 0..b {
                wrong[k] |= (x[k] + c * u[k] > 0.0) != (x[k] > 0.0);
            }
            if wrong.iter().filter(|w| **w).count() as f64 / b as f64 <= 0.05 + 1e-12 {
                largest = c;
            } else {
                break;
            }
        }
        out.push(largest);
    }
    median(&out)
}

#[test]
fn perturbation_of_margin_classifier_matches_brute_force() {
    let probe = NonlinearityProbeConfig {
        n_batches: 20,
        n_u: 10,
        c_cap: 100.0,
        ..Default::default()
    };
    let grid = c_grid(&probe);
    let mut radii = Vec::new();
    for margin in [0.5, 4.0] {
        let mut rng = Rng::new(8);
        let values: Vec<f64> = (0..4000)
            .map(|i: usize| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                s * (margin + 0.5 * rng.normal().abs())
            })
            .collect();
        let labels = values.iter().map(|v| usize::from(*v <= 0.0)).collect();
        let n = values.len();
        let x = Matrix::from_row_slice(1, n, &values);
        let data =
            Dataset::with_splits("margin", x, labels, 2, (0..n / 2).collect(), vec![], (n / 2..n).collect()).unwrap();
        let net = affine_network(Matrix::from_column_slice(2, 1, &[1.0, -1.0]), Vector::zeros(2)).unwrap();
        let got = error_preserving_perturbation(&net, &data, 0.05, &probe, &EstimatorConfig::new(100, 1, 1)).unwrap();
        let sd = data.stats().factor[(0, 0)];
        let want = brute_radius(&values[n / 2..], sd, 100, 2000, &grid, &mut Rng::new(5));
        let gap = (got.median / want).log10().abs();
        assert!(gap <= 0.1 + 1e-9, "margin {margin}: {} vs brute {want}", got.median);
        radii.push(got.median);
    }
    assert!(radii.iter().all(|r| *r > 0.0 && *r < 100.0), "{radii:?}");
}

#[test]
fn gvl_is_gvcs_times_root_d() {
    let mut rng = Rng::new(6);
    let data = synth_gaussian_classes(9, 3, 300, 2.0, &mut rng).unwrap();
    let spec = ArchitectureSpec::mlp(data.d_in(), 16, 3, 3, Normalization::BatchNorm, ActivationConfig::plain("tanh"));
    let net = instantiate(&spec, &rng).unwrap();
    let cfg = EstimatorConfig::new(50, 2, 0);
    let (a, b) = (gvcs(&net, &data, &cfg).unwrap(), gvl(&net, &data, &cfg).unwrap());
    assert!((b - a * (data.d_in() as f64).sqrt()).abs() <= 1e-12 * b);
}

#[test]
fn correlations_of_shifted_inputs() {
    let mut rng = Rng::new(12);
    let data = unit_gaussian(20, 400, 2, &mut rng).unwrap();
    let shifted = data.map_inputs("shifted", |x| x.add_scalar(50.0)).unwrap();
    let net = random_affine(20, 4, &mut rng);
    let cfg = EstimatorConfig::new(100, 1, 0);
    let (c_in, _) = io_correlation(&net, &data, &cfg, CorrelationMode::Centered).unwrap();
    let (c_shift, _) = io_correlation(&net, &shifted, &cfg, CorrelationMode::Centered).unwrap();
    assert!((c_in - c_shift).abs() < 1e-9);
    let (u_in, _) = io_correlation(&net, &data, &cfg, CorrelationMode::Uncentered).unwrap();
    let (u_shift, _) = io_correlation(&net, &shifted, &cfg, CorrelationMode::Uncentered).unwrap();
    assert!(u_in < 0.4 && u_shift > 0.99, "{u_in} {u_shift}");
}

#[test]
fn tau_examples() {
    let at = |a: &str| nlc_tau(&ActivationConfig::plain(a)).unwrap();
    assert!((at("relu") - 1.211).abs() < 5e-4);
    assert!((at("tanh") - 1.085).abs() < 5e-4);
    assert!((at("even_tanh") - 2.335).abs() < 5e-4);
    assert!((at("square") - 1.414).abs() < 5e-4);
    assert!((at("identity") - 1.0).abs() < 1e-12);
    let saw: Vec<f64> = [4.0, 2.0, 1.0, 0.5, 0.25]
        .iter()
        .map(|p| nlc_tau(&ActivationConfig::sawtooth(*p)).unwrap())
        .collect();
    assert!(saw.windows(2).all(|w| w[1] > w[0]), "{saw:?}");
    let lin = |a: &str| linear_approx_error(&ActivationConfig::plain(a)).unwrap();
    for a in ["relu", "selu", "tanh", "sigmoid"] {
        assert!((lin(a) - (at(a) - 1.0)).abs() < 0.05, "{a}");
    }
}

#[test]
fn region_map_of_affine_net_is_closed_form() {
    let mut rng = Rng::new(21);
    let a = Matrix::from_fn(4, 6, |_, _| rng.normal());
    let b = Vector::from_fn(4, |_, _| rng.normal());
    let net = affine_network(a.clone(), b.clone()).unwrap();
    let map = output_region_map(&net, &mut Rng::new(1), 24).unwrap();
    for i in 0..map.n_theta {
        for j in 0..map.n_phi {
            let p = map.point(i, j);
            let x = &map.anchors * nalgebra::Vector3::new(p[0], p[1], p[2]);
            let f = &a * x + &b;
            assert_eq!(map.class_at(i, j), f.argmax().0);
        }
    }
    let again = output_region_map(&net, &mut Rng::new(1), 24).unwrap();
    assert_eq!(map.classes, again.classes);
}

#[test]
fn deeper_batchnorm_nets_fragment_the_sphere() {
    let count = |depth: usize| {
        let spec = ArchitectureSpec::mlp(50, 100, 10, depth, Normalization::BatchNorm, ActivationConfig::plain("relu"));
        let mut counts: Vec<f64> = (0..3u64)
            .map(|s| {
                let net = instantiate(&spec, &Rng::new(s)).unwrap();
                output_region_map(&net, &mut Rng::new(100 + s), 40).unwrap().region_count() as f64
            })
            .collect();
        counts.sort_by(f64::total_cmp);
        counts[1]
    };
    let (shallow, deep) = (count(2), count(25));
    assert!(deep >= 10.0 * shallow, "regions {shallow} vs {deep}");
}

#[test]
fn precision_rows_show_one_pass_breakdown() {
    let rows = precision_check(&[1e12], 100);
    let get = |bits, method| rows.iter().find(|r| r.bits == bits && r.method == method).unwrap().relative_error;
    assert!(get(64, "two_pass") < 1e-6);
    assert!(get(64, "one_pass") > 0.1);
}
