//! Expectations under the standard normal density.
//!
//! Composite Gauss-Legendre on `[-HALF_WIDTH, HALF_WIDTH]`, with panel
//! boundaries forced onto every breakpoint the integrand declares (kinks,
//! jumps in the derivative). Each piece is then analytic and a 20-point rule
//! on panels no wider than `MAX_PANEL` is accurate to rounding.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Truncation of the real line; the normal tail beyond 12 is below 1e-32.
pub const HALF_WIDTH: f64 = 12.0;
const MAX_PANEL: f64 = 0.25;
const ORDER: usize = 20;

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(ORDER))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Standard normal density.
pub fn normal_pdf(s: f64) -> f64 {
    (-0.5 * s * s).exp() / (2.0 * PI).sqrt()
}

/// `E[f(s)]` for `s ~ N(0, 1)`, for several functions at once.
///
/// `breakpoints` lists the points where `f` is not smooth; outside of
/// `[-HALF_WIDTH, HALF_WIDTH]` they are ignored.
pub fn gaussian_expectations<const K: usize>(
    f: impl Fn(f64) -> [f64; K],
    breakpoints: &[f64],
) -> [f64; K] {
    let (nodes, weights) = gauss_legendre();
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| b.is_finite() && b.abs() < HALF_WIDTH)
        .collect();
    cuts.push(-HALF_WIDTH);
    cuts.push(HALF_WIDTH);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let mut acc = [0.0; K];
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let panels = ((hi - lo) / MAX_PANEL).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * h;
            let mid = a + 0.5 * h;
            for (x, w) in nodes.iter().zip(weights) {
                let s = mid + 0.5 * h * x;
                let weight = 0.5 * h * w * normal_pdf(s);
                let v = f(s);
                for k in 0..K {
                    acc[k] += weight * v[k];
                }
            }
        }
    }
    acc
}

/// `E[f(s)]` for `s ~ N(0, 1)`.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, breakpoints: &[f64]) -> f64 {
    gaussian_expectations(|s| [f(s)], breakpoints)[0]
}
