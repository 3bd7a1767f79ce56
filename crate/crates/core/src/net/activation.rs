//! Activation functions.
//!
//! Each base nonlinearity implements [`Activation`] and is registered by
//! name in an [`ActivationRegistry`]. Networks refer to activations by name
//! through [`ActivationConfig`], which adds the dilation / shift / debias /
//! scale wrapper `c * (tau(d * s + t) + b)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{NlcError, Result};

/// SELU constants as used for the activation table.
pub const SELU_LAMBDA: f64 = 1.0507;
pub const SELU_ALPHA_LAMBDA: f64 = 1.75814;

/// A scalar nonlinearity `tau`.
///
/// `derivative` returns the right derivative wherever `tau` has a kink.
pub trait Activation: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;

    /// Points in `[lo, hi]` where `tau` or its derivative is not smooth.
    fn kinks(&self, _lo: f64, _hi: f64) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug)]
struct Relu;
impl Activation for Relu {
    fn name(&self) -> &str {
        "relu"
    }
    fn value(&self, s: f64) -> f64 {
        s.max(0.0)
    }
    fn derivative(&self, s: f64) -> f64 {
        if s >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
    fn kinks(&self, _: f64, _: f64) -> Vec<f64> {
        vec![0.0]
    }
}

#[derive(Debug)]
struct Selu;
impl Activation for Selu {
    fn name(&self) -> &str {
        "selu"
    }
    fn value(&self, s: f64) -> f64 {
        if s > 0.0 {
            SELU_LAMBDA * s
        } else {
            SELU_ALPHA_LAMBDA * s.exp_m1()
        }
    }
    fn derivative(&self, s: f64) -> f64 {
        if s >= 0.0 {
            SELU_LAMBDA
        } else {
            SELU_ALPHA_LAMBDA * s.exp()
        }
    }
    fn kinks(&self, _: f64, _: f64) -> Vec<f64> {
        vec![0.0]
    }
}

#[derive(Debug)]
struct Tanh;
impl Activation for Tanh {
    fn name(&self) -> &str {
        "tanh"
    }
    fn value(&self, s: f64) -> f64 {
        s.tanh()
    }
    fn derivative(&self, s: f64) -> f64 {
        let t = s.tanh();
        1.0 - t * t
    }
}

#[derive(Debug)]
struct Sigmoid;
impl Activation for Sigmoid {
    fn name(&self) -> &str {
        "sigmoid"
    }
    fn value(&self, s: f64) -> f64 {
        1.0 / (1.0 + (-s).exp())
    }
    fn derivative(&self, s: f64) -> f64 {
        let v = self.value(s);
        v * (1.0 - v)
    }
}

/// `tanh(|s|)`.
#[derive(Debug)]
struct EvenTanh;
impl Activation for EvenTanh {
    fn name(&self) -> &str {
        "even_tanh"
    }
    fn value(&self, s: f64) -> f64 {
        s.abs().tanh()
    }
    fn derivative(&self, s: f64) -> f64 {
        let t = s.abs().tanh();
        let sign = if s >= 0.0 { 1.0 } else { -1.0 };
        sign * (1.0 - t * t)
    }
    fn kinks(&self, _: f64, _: f64) -> Vec<f64> {
        vec![0.0]
    }
}

/// The standard normal density.
#[derive(Debug)]
struct Gaussian;
impl Activation for Gaussian {
    fn name(&self) -> &str {
        "gaussian"
    }
    fn value(&self, s: f64) -> f64 {
        (-0.5 * s * s).exp() / (2.0 * PI).sqrt()
    }
    fn derivative(&self, s: f64) -> f64 {
        -s * self.value(s)
    }
}

#[derive(Debug)]
struct Square;
impl Activation for Square {
    fn name(&self) -> &str {
        "square"
    }
    fn value(&self, s: f64) -> f64 {
        s * s
    }
    fn derivative(&self, s: f64) -> f64 {
        2.0 * s
    }
}

/// `s * |s|`.
#[derive(Debug)]
struct OddSquare;
impl Activation for OddSquare {
    fn name(&self) -> &str {
        "odd_square"
    }
    fn value(&self, s: f64) -> f64 {
        s * s.abs()
    }
    fn derivative(&self, s: f64) -> f64 {
        2.0 * s.abs()
    }
    fn kinks(&self, _: f64, _: f64) -> Vec<f64> {
        vec![0.0]
    }
}

#[derive(Debug)]
struct Identity;
impl Activation for Identity {
    fn name(&self) -> &str {
        "identity"
    }
    fn value(&self, s: f64) -> f64 {
        s
    }
    fn derivative(&self, _: f64) -> f64 {
        1.0
    }
}

/// Triangle wave of period `p` with unit slope magnitude.
#[derive(Debug)]
pub struct Sawtooth {
    period: f64,
}

impl Sawtooth {
    pub fn new(period: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(NlcError::Parameter(format!(
                "sawtooth period must be positive, got {period}"
            )));
        }
        Ok(Sawtooth { period })
    }

    fn phase(&self, s: f64) -> f64 {
        let q = s / self.period;
        q - q.floor()
    }
}

impl Activation for Sawtooth {
    fn name(&self) -> &str {
        "sawtooth"
    }
    fn value(&self, s: f64) -> f64 {
        let f = self.phase(s);
        let p = self.period;
        if f < 0.25 {
            p * f
        } else if f > 0.75 {
            p * (f - 1.0)
        } else {
            p * (0.5 - f)
        }
    }
    fn derivative(&self, s: f64) -> f64 {
        let f = self.phase(s);
        if !(0.25..0.75).contains(&f) {
            1.0
        } else {
            -1.0
        }
    }
    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let p = self.period;
        let first = (lo / p).floor() as i64 - 1;
        let last = (hi / p).ceil() as i64 + 1;
        let mut out = Vec::with_capacity(2 * (last - first + 1) as usize);
        for k in first..=last {
            for off in [0.25, 0.75] {
                let x = (k as f64 + off) * p;
                if x >= lo && x <= hi {
                    out.push(x);
                }
            }
        }
        out
    }
}

/// Constructs a base activation; `period` is only meaningful for periodic bases.
pub type ActivationFactory = fn(period: Option<f64>) -> Result<Arc<dyn Activation>>;

/// Name -> factory table.
#[derive(Clone)]
pub struct ActivationRegistry {
    factories: BTreeMap<String, ActivationFactory>,
}

impl ActivationRegistry {
    pub fn empty() -> Self {
        ActivationRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("relu", |_| Ok(Arc::new(Relu)));
        r.register("selu", |_| Ok(Arc::new(Selu)));
        r.register("tanh", |_| Ok(Arc::new(Tanh)));
        r.register("sigmoid", |_| Ok(Arc::new(Sigmoid)));
        r.register("even_tanh", |_| Ok(Arc::new(EvenTanh)));
        r.register("gaussian", |_| Ok(Arc::new(Gaussian)));
        r.register("square", |_| Ok(Arc::new(Square)));
        r.register("odd_square", |_| Ok(Arc::new(OddSquare)));
        r.register("identity", |_| Ok(Arc::new(Identity)));
        r.register("sawtooth", |p| {
            let p = p.ok_or_else(|| NlcError::Parameter("sawtooth needs a period".into()))?;
            Ok(Arc::new(Sawtooth::new(p)?))
        });
        r
    }

    pub fn register(&mut self, name: &str, factory: ActivationFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn create(&self, name: &str, period: Option<f64>) -> Result<Arc<dyn Activation>> {
        let f = self.factories.get(name).ok_or_else(|| NlcError::Unknown {
            kind: "activation",
            name: name.to_string(),
        })?;
        f(period)
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

fn global() -> &'static RwLock<ActivationRegistry> {
    static REGISTRY: OnceLock<RwLock<ActivationRegistry>> = OnceLock::new();
    REGISTRY.get_or_init(|| RwLock::new(ActivationRegistry::with_builtins()))
}

/// Adds an activation to the process-wide registry used when networks are built.
pub fn register_activation(name: &str, factory: ActivationFactory) {
    global().write().unwrap().register(name, factory);
}

pub fn create_activation(name: &str, period: Option<f64>) -> Result<Arc<dyn Activation>> {
    global().read().unwrap().create(name, period)
}

pub fn activation_names() -> Vec<String> {
    global().read().unwrap().names()
}

/// The eight activations of the sampling study, in table order.
pub const STUDY_ACTIVATIONS: [&str; 8] = [
    "relu",
    "selu",
    "tanh",
    "sigmoid",
    "even_tanh",
    "gaussian",
    "square",
    "odd_square",
];

/// `c * (tau(d * s + t) + b)` with `tau` looked up by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    pub base: String,
    pub dilation: f64,
    pub shift: f64,
    pub debias: f64,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl ActivationConfig {
    /// The raw base function: `d = 1, t = 0, b = 0, c = 1`.
    pub fn plain(base: &str) -> Self {
        ActivationConfig {
            base: base.to_string(),
            dilation: 1.0,
            shift: 0.0,
            debias: 0.0,
            scale: 1.0,
            period: None,
        }
    }

    pub fn sawtooth(period: f64) -> Self {
        ActivationConfig {
            period: Some(period),
            ..Self::plain("sawtooth")
        }
    }

    pub fn resolve(&self) -> Result<ResolvedActivation> {
        if !(self.dilation > 0.0 && self.scale > 0.0) {
            return Err(NlcError::Parameter(format!(
                "activation dilation and scale must be positive (d={}, c={})",
                self.dilation, self.scale
            )));
        }
        Ok(ResolvedActivation {
            base: create_activation(&self.base, self.period)?,
            config: self.clone(),
        })
    }
}

/// An [`ActivationConfig`] bound to its base implementation.
#[derive(Clone, Debug)]
pub struct ResolvedActivation {
    base: Arc<dyn Activation>,
    config: ActivationConfig,
}

impl ResolvedActivation {
    pub fn config(&self) -> &ActivationConfig {
        &self.config
    }

    pub fn base(&self) -> &dyn Activation {
        self.base.as_ref()
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let c = &self.config;
        c.scale * (self.base.value(c.dilation * s + c.shift) + c.debias)
    }

    #[inline]
    pub fn grad(&self, s: f64) -> f64 {
        let c = &self.config;
        c.scale * c.dilation * self.base.derivative(c.dilation * s + c.shift)
    }

    /// Kinks of the wrapped function in `s`-space within `[lo, hi]`.
    pub fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let c = &self.config;
        let (ulo, uhi) = (c.dilation * lo + c.shift, c.dilation * hi + c.shift);
        self.base
            .kinks(ulo, uhi)
            .into_iter()
            .map(|u| (u - c.shift) / c.dilation)
            .collect()
    }
}

/// Evaluates `c * (tau(d * s + t) + b)`.
pub fn activation_eval(cfg: &ActivationConfig, s: f64) -> Result<f64> {
    Ok(cfg.resolve()?.eval(s))
}

/// Derivative of [`activation_eval`] in `s` (right derivative at kinks).
pub fn activation_grad(cfg: &ActivationConfig, s: f64) -> Result<f64> {
    Ok(cfg.resolve()?.grad(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(a: &ResolvedActivation, s: f64) -> f64 {
        let h = 1e-6;
        (a.eval(s + h) - a.eval(s - h)) / (2.0 * h)
    }

    #[test]
    fn gaussian_at_zero() {
        let v = activation_eval(&ActivationConfig::plain("gaussian"), 0.0).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((v - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn selu_constants() {
        let cfg = ActivationConfig::plain("selu");
        assert!((activation_eval(&cfg, 1.0).unwrap() - 1.0507).abs() < 1e-15);
        assert!((activation_eval(&cfg, -60.0).unwrap() + 1.75814).abs() < 1e-12);
    }

    #[test]
    fn sawtooth_has_unit_slope() {
        for p in [4.0, 2.0, 1.0, 0.5, 0.25] {
            let a = ActivationConfig::sawtooth(p).resolve().unwrap();
            let mut s = -5.0;
            while s < 5.0 {
                assert_eq!(a.grad(s).abs(), 1.0);
                s += 0.0137;
            }
            // Peak p/4 at a quarter period.
            assert!((a.eval(0.25 * p) - 0.25 * p).abs() < 1e-12);
            assert!((a.eval(0.75 * p) + 0.25 * p).abs() < 1e-12);
        }
    }

    #[test]
    fn right_derivative_at_kinks() {
        assert_eq!(activation_grad(&ActivationConfig::plain("relu"), 0.0).unwrap(), 1.0);
        assert_eq!(activation_grad(&ActivationConfig::plain("even_tanh"), 0.0).unwrap(), 1.0);
        let saw = ActivationConfig::sawtooth(1.0);
        assert_eq!(activation_grad(&saw, 0.25).unwrap(), -1.0);
        assert_eq!(activation_grad(&saw, 0.75).unwrap(), 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let points = [-2.3, -0.7, 0.31, 1.4, 2.9];
        for name in STUDY_ACTIVATIONS.iter().chain(["identity"].iter()) {
            let cfg = ActivationConfig {
                dilation: 1.2,
                shift: -0.2,
                debias: 0.1,
                scale: 1.7,
                ..ActivationConfig::plain(name)
            };
            let a = cfg.resolve().unwrap();
            for s in points {
                let fd = central_diff(&a, s);
                assert!((fd - a.grad(s)).abs() < 1e-6 * (1.0 + fd.abs()), "{name} at {s}");
            }
        }
    }

    #[test]
    fn kinks_map_through_dilation_and_shift() {
        let cfg = ActivationConfig {
            dilation: 2.0,
            shift: 0.5,
            ..ActivationConfig::plain("relu")
        };
        let a = cfg.resolve().unwrap();
        assert_eq!(a.kinks(-10.0, 10.0), vec![-0.25]);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            ActivationConfig::plain("swish").resolve(),
            Err(NlcError::Unknown { .. })
        ));
        assert!(ActivationConfig::plain("sawtooth").resolve().is_err());
    }

    #[test]
    fn registry_lists_builtins() {
        let names = activation_names();
        for n in STUDY_ACTIVATIONS {
            assert!(names.iter().any(|m| m == n));
        }
    }
}
