use std::collections::BTreeMap;
use std::sync::{OnceLock, RwLock};

use crate::error::{NlcError, Result};
use crate::net::Gradients;

/// A stateful first-order update rule.
///
/// `direction` consumes one batch gradient and returns the step taken at
/// learning rate 1; the caller subtracts `lr * direction`.
pub trait Optimizer: Send + Sync {
    fn name(&self) -> &str;
    fn direction(&mut self, grads: &Gradients) -> Gradients;
    fn boxed_clone(&self) -> Box<dyn Optimizer>;
}

impl Clone for Box<dyn Optimizer> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Plain SGD without momentum.
#[derive(Clone, Debug, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &str {
        "sgd"
    }

    fn direction(&mut self, grads: &Gradients) -> Gradients {
        grads.clone()
    }

    fn boxed_clone(&self) -> Box<dyn Optimizer> {
        Box::new(self.clone())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u32,
    m: Option<Gradients>,
    v: Option<Gradients>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: None,
            v: None,
        }
    }
}

fn zeros_like(g: &Gradients) -> Gradients {
    Gradients {
        weights: g.weights.iter().map(|w| w.map(|_| 0.0)).collect(),
        biases: g.biases.iter().map(|b| b.map(|_| 0.0)).collect(),
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &str {
        "adam"
    }

    fn direction(&mut self, grads: &Gradients) -> Gradients {
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m = self.m.get_or_insert_with(|| zeros_like(grads));
        let v = self.v.get_or_insert_with(|| zeros_like(grads));
        self.steps += 1;
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let mut out = zeros_like(grads);
        let update = |m: &mut [f64], v: &mut [f64], g: &[f64], o: &mut [f64]| {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                o[i] = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for l in 0..grads.weights.len() {
            update(
                m.weights[l].as_mut_slice(),
                v.weights[l].as_mut_slice(),
                grads.weights[l].as_slice(),
                out.weights[l].as_mut_slice(),
            );
            update(
                m.biases[l].as_mut_slice(),
                v.biases[l].as_mut_slice(),
                grads.biases[l].as_slice(),
                out.biases[l].as_mut_slice(),
            );
        }
        out
    }

    fn boxed_clone(&self) -> Box<dyn Optimizer> {
        Box::new(self.clone())
    }
}

pub type OptimizerFactory = fn() -> Box<dyn Optimizer>;

fn registry() -> &'static RwLock<BTreeMap<String, OptimizerFactory>> {
    static REG: OnceLock<RwLock<BTreeMap<String, OptimizerFactory>>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut m: BTreeMap<String, OptimizerFactory> = BTreeMap::new();
        m.insert("sgd".into(), || Box::new(Sgd));
        m.insert("adam".into(), || Box::new(Adam::default()));
        RwLock::new(m)
    })
}

/// Makes `name` available to [`create_optimizer`].
pub fn register_optimizer(name: &str, factory: OptimizerFactory) {
    registry().write().expect("optimizer registry").insert(name.to_string(), factory);
}

pub fn create_optimizer(name: &str) -> Result<Box<dyn Optimizer>> {
    registry()
        .read()
        .expect("optimizer registry")
        .get(name)
        .map(|f| f())
        .ok_or_else(|| NlcError::Unknown {
            kind: "optimizer",
            name: name.to_string(),
        })
}

pub fn optimizer_names() -> Vec<String> {
    registry().read().expect("optimizer registry").keys().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Matrix, Vector};

    fn scalar(g: f64) -> Gradients {
        Gradients {
            weights: vec![Matrix::from_element(1, 1, g)],
            biases: vec![Vector::zeros(1)],
        }
    }

    #[test]
    fn adam_reference_trace() {
        // Hand recursion for gradients 1, -2, 3, ...
        let mut opt = Adam::default();
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = if t % 2 == 1 { t as f64 } else { -(t as f64) };
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let want = (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            let got = opt.direction(&scalar(g)).weights[0][(0, 0)];
            assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0));
        }
    }

    #[test]
    fn adam_zero_gradient_is_zero_step() {
        let mut opt = Adam::default();
        for _ in 0..3 {
            assert_eq!(opt.direction(&scalar(0.0)).weights[0][(0, 0)], 0.0);
        }
    }

    #[test]
    fn adam_constant_gradient_approaches_unit_step() {
        let mut opt = Adam::default();
        let mut last = 0.0;
        for _ in 0..5000 {
            last = opt.direction(&scalar(0.37)).weights[0][(0, 0)];
        }
        assert!((last - 1.0).abs() < 1e-6);
    }

    #[test]
    fn registry_knows_builtins() {
        assert_eq!(optimizer_names(), vec!["adam".to_string(), "sgd".to_string()]);
        assert!(matches!(create_optimizer("rmsprop"), Err(NlcError::Unknown { .. })));
    }
}
