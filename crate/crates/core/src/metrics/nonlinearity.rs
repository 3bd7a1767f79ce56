use rayon::prelude::*;

use super::{median, EstimatorConfig, NonlinearityProbeConfig};
use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::{argmax_columns, Model};
use crate::tensor::{Matrix, Rng};

/// Step sizes `c_start * spacing^k` up to `c_cap`. A step within 1e-9
/// relative of the cap is snapped onto it, so the default grid ends at 1.
pub fn c_grid(probe: &NonlinearityProbeConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0i32;
    loop {
        let mut c = probe.c_start * probe.spacing.powi(k);
        if (c - probe.c_cap).abs() <= 1e-9 * probe.c_cap {
            c = probe.c_cap;
        }
        if c > probe.c_cap {
            break;
        }
        out.push(c);
        k += 1;
    }
    out
}

#[derive(Clone, Debug)]
pub struct NonlinearitySamples {
    /// One `C` per retained (batch, U, V) triple.
    pub values: Vec<f64>,
    pub median: f64,
    /// Triples with a vanishing directional derivative.
    pub discarded: usize,
    /// Triples whose very first step already failed; their `C` is
    /// reported as `1 / c_start`.
    pub below_floor: usize,
}

fn batch_indices(data: &Dataset, split: Split, b: usize, rng: &mut Rng) -> Vec<usize> {
    let pool = data.indices(split);
    rng.sample_without_replacement(pool.len(), b)
        .into_iter()
        .map(|j| pool[j])
        .collect()
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

struct BatchOutcome {
    values: Vec<f64>,
    discarded: usize,
    below_floor: usize,
}

/// Samples of the smallest `C` for which the batch linearization holds
/// within tolerance along `c U` for every step `c <= 1 / C`.
///
/// The condition is tested on the ratio `<V, f(X + cU) - f(X)> / (c g)`,
/// `g = <V, J U>`, which must lie in `[1/T, T]`.
pub fn nonlinearity_samples<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    probe: &NonlinearityProbeConfig,
    cfg: &EstimatorConfig,
) -> Result<NonlinearitySamples> {
    probe.validate()?;
    let b = cfg.effective_batch(model, data, Split::Train)?;
    let grid = c_grid(probe);
    let root = Rng::new(cfg.seed).fork("nonlinearity");
    let t = probe.tolerance;

    let outcomes: Vec<BatchOutcome> = (0..probe.n_batches)
        .into_par_iter()
        .map(|bi| -> Result<BatchOutcome> {
            let mut rng = root.fork_index(bi as u64);
            let idx = batch_indices(data, Split::Train, b, &mut rng);
            let x = data.batch(&idx).0;
            let lin = model.linearize(&x)?;
            let f0 = lin.output().clone();
            let vs: Vec<Matrix> = (0..probe.n_v)
                .map(|_| Matrix::from_fn(model.d_out(), b, |_, _| rng.normal()))
                .collect();
            let pulled: Vec<Matrix> = vs.iter().map(|v| lin.vjp(v)).collect::<Result<_>>()?;
            let mut out = BatchOutcome {
                values: Vec::new(),
                discarded: 0,
                below_floor: 0,
            };
            for _ in 0..probe.n_u {
                let u = data.stats().sample_directions(b, &mut rng);
                let u_norm = u.norm();
                // (g, last passing c, still sweeping) per V.
                let mut state: Vec<(usize, f64, Option<f64>, bool)> = Vec::new();
                for (vi, (v, p)) in vs.iter().zip(&pulled).enumerate() {
                    let g = inner(p, &u);
                    if g.abs() < probe.g_floor * v.norm() * u_norm || !g.is_finite() {
                        out.discarded += 1;
                    } else {
                        state.push((vi, g, None, true));
                    }
                }
                for &c in &grid {
                    if state.iter().all(|s| !s.3) {
                        break;
                    }
                    let moved = model.apply(&(&x + &u * c));
                    let delta = match moved {
                        Ok(f) => f - &f0,
                        Err(NlcError::Overflow { .. }) => {
                            state.iter_mut().for_each(|s| s.3 = false);
                            break;
                        }
                        Err(e) => return Err(e),
                    };
                    for s in state.iter_mut().filter(|s| s.3) {
                        let ratio = inner(&vs[s.0], &delta) / (c * s.1);
                        if ratio >= 1.0 / t && ratio <= t {
                            s.2 = Some(c);
                        } else {
                            s.3 = false;
                        }
                    }
                }
                for s in state {
                    match s.2 {
                        Some(c) => out.values.push((1.0 / c).max(1.0)),
                        None => {
                            out.below_floor += 1;
                            out.values.push(1.0 / probe.c_start);
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::new();
    let (mut discarded, mut below_floor) = (0, 0);
    for o in outcomes {
        values.extend(o.values);
        discarded += o.discarded;
        below_floor += o.below_floor;
    }
    if values.is_empty() {
        return Err(NlcError::Degenerate(format!(
            "all {discarded} nonlinearity samples had a vanishing directional derivative"
        )));
    }
    Ok(NonlinearitySamples {
        median: median(&values),
        values,
        discarded,
        below_floor,
    })
}

#[derive(Clone, Debug)]
pub struct PerturbationSamples {
    /// Largest passing step per (batch, U); 0 when the first step fails.
    pub values: Vec<f64>,
    pub median: f64,
}

/// Largest step `c` along random input directions such that the fraction
/// of test points misclassified anywhere on the segment from `X` to
/// `X + cU` exceeds the error at `X` by at most `threshold`.
pub fn error_preserving_perturbation<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    threshold: f64,
    probe: &NonlinearityProbeConfig,
    cfg: &EstimatorConfig,
) -> Result<PerturbationSamples> {
    probe.validate()?;
    let b = cfg.effective_batch(model, data, Split::Test)?;
    let grid = c_grid(probe);
    let root = Rng::new(cfg.seed).fork("perturbation");

    let per_batch: Vec<Vec<f64>> = (0..probe.n_batches)
        .into_par_iter()
        .map(|bi| -> Result<Vec<f64>> {
            let mut rng = root.fork_index(bi as u64);
            let idx = batch_indices(data, Split::Test, b, &mut rng);
            let (x, labels) = data.batch(&idx);
            let base: Vec<bool> = argmax_columns(&model.apply(&x)?)
                .iter()
                .zip(&labels)
                .map(|(p, l)| p != l)
                .collect();
            let base_err = base.iter().filter(|w| **w).count() as f64 / b as f64;
            let mut out = Vec::with_capacity(probe.n_u);
            for _ in 0..probe.n_u {
                let u = data.stats().sample_directions(b, &mut rng);
                let mut wrong = base.clone();
                let mut largest = 0.0;
                for &c in &grid {
                    let pred = match model.apply(&(&x + &u * c)) {
                        Ok(f) => argmax_columns(&f),
                        Err(NlcError::Overflow { .. }) => break,
                        Err(e) => return Err(e),
                    };
                    for ((w, p), l) in wrong.iter_mut().zip(&pred).zip(&labels) {
                        *w |= p != l;
                    }
                    let path_err = wrong.iter().filter(|w| **w).count() as f64 / b as f64;
                    if path_err <= base_err + threshold + 1e-12 {
                        largest = c;
                    } else {
                        break;
                    }
                }
                out.push(largest);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_batch.into_iter().flatten().collect();
    Ok(PerturbationSamples {
        median: median(&values),
        values,
    })
}
