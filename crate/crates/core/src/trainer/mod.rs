//! SGD and Adam training with a geometric learning-rate search and the
//! decay-and-rewind schedule.

mod optimizer;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optimizer::{
    create_optimizer, optimizer_names, register_optimizer, Adam, Optimizer, OptimizerFactory, Sgd,
};

use crate::data::{Dataset, Split};
use crate::error::{NlcError, Result};
use crate::net::{Gradients, Network};
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingCriterion {
    ValidationError,
    TrainingError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: String,
    pub n_runs: usize,
    pub lr_spacing: f64,
    pub decay_factor: f64,
    pub decay_count: usize,
    pub patience_initial: usize,
    pub patience_decay: usize,
    pub criterion: StoppingCriterion,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Epoch cap per learning-rate stage.
    pub max_epochs: usize,
    /// Per-layer learning-rate factors; all 1 when absent.
    pub layer_lr: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: "sgd".into(),
            n_runs: 40,
            lr_spacing: 3.0,
            decay_factor: 3.0,
            decay_count: 10,
            patience_initial: 10,
            patience_decay: 5,
            criterion: StoppingCriterion::ValidationError,
            epsilon: 1e-8,
            batch_size: 250,
            max_epochs: 500,
            layer_lr: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        let bad = |m: String| Err(NlcError::Configuration(m));
        if !(self.lr_spacing > 1.0) || !(self.decay_factor > 1.0) {
            return bad("learning-rate spacing and decay factor must exceed 1".into());
        }
        if self.patience_initial == 0 || self.patience_decay == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.n_runs == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("runs, batch size and epoch cap must be positive".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if let Some(m) = &self.layer_lr {
            if m.len() != depth || m.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return bad(format!("need {depth} non-negative per-layer learning-rate factors"));
            }
        }
        create_optimizer(&self.optimizer)?;
        Ok(())
    }

    fn layer_factor(&self, l: usize) -> f64 {
        self.layer_lr.as_ref().map_or(1.0, |m| m[l])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_error: f64,
    pub validation_error: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub lr0: f64,
    pub epochs: Vec<EpochRecord>,
    /// Criterion value of the restored snapshot.
    pub best_criterion: f64,
    pub best_epoch: usize,
    pub test_error: f64,
    pub diverged: bool,
    /// `(epoch, best criterion)` at every rewind.
    pub rewinds: Vec<(usize, f64)>,
    pub snapshot: Network,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub smallest_lr: f64,
    pub runs: Vec<RunRecord>,
    pub selected: usize,
}

impl TrainResult {
    pub fn selected_run(&self) -> &RunRecord {
        &self.runs[self.selected]
    }

    pub fn selected_lr(&self) -> f64 {
        self.runs[self.selected].lr0
    }

    /// Per-epoch curves of every run.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("run,lr0,epoch,lr,train_loss,train_error,validation_error\n");
        for (i, r) in self.runs.iter().enumerate() {
            for e in &r.epochs {
                let _ = writeln!(
                    s,
                    "{i},{:e},{},{:e},{:e},{},{}",
                    r.lr0, e.epoch, e.lr, e.train_loss, e.train_error, e.validation_error
                );
            }
        }
        s
    }

    /// One line per run.
    pub fn runs_csv(&self) -> String {
        let mut s =
            String::from("run,lr0,best_epoch,best_criterion,test_error,diverged,selected\n");
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{:e},{},{},{},{},{}",
                r.lr0,
                r.best_epoch,
                r.best_criterion,
                r.test_error,
                r.diverged,
                i == self.selected
            );
        }
        s
    }
}

/// Classification error of `net` on a split, evaluated in consecutive
/// batches of `batch_size`.
pub fn classification_error(
    net: &Network,
    data: &Dataset,
    split: Split,
    batch_size: usize,
) -> Result<f64> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(NlcError::Statistics("cannot evaluate an empty split".into()));
    }
    let mut wrong = 0usize;
    for batch in data.split_batches(split, batch_size) {
        let (x, labels) = data.batch(&batch);
        let pred = net.predict(&x)?;
        wrong += pred.iter().zip(&labels).filter(|(p, l)| p != l).count();
    }
    Ok(wrong as f64 / idx.len() as f64)
}

fn criterion_value(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let split = match cfg.criterion {
        StoppingCriterion::ValidationError => Split::Validation,
        StoppingCriterion::TrainingError => Split::Train,
    };
    classification_error(net, data, split, cfg.batch_size)
}

fn apply_direction(net: &mut Network, dir: &Gradients, lr: f64, cfg: &TrainConfig) {
    for l in 0..net.weights.len() {
        let step = lr * cfg.layer_factor(l);
        if step == 0.0 {
            continue;
        }
        net.weights[l].zip_apply(&dir.weights[l], |w, d| *w -= step * d);
        net.biases[l].zip_apply(&dir.biases[l], |b, d| *b -= step * d);
    }
}

fn params_finite(net: &Network) -> bool {
    net.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
        && net.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
}

fn shuffle_rng(cfg: &TrainConfig, epoch: usize) -> Rng {
    Rng::new(cfg.seed).fork("shuffle").fork_index(epoch as u64)
}

/// `epsilon * sum_l sqrt(E_b ||dW_lb||_F^2) / ||W_l||_F`, where `dW_lb` is
/// the optimizer step at learning rate 1 on batch `b` of one epoch, taken
/// without updating the network. Adam first sees four such epochs to warm
/// up its moment estimates.
pub fn smallest_lr(net: &Network, data: &Dataset, epsilon: f64, cfg: &TrainConfig) -> Result<f64> {
    let mut opt = create_optimizer(&cfg.optimizer)?;
    let warm = if opt.name() == "adam" { 4 } else { 0 };
    let mut sq = vec![0.0; net.depth()];
    let mut batches = 0usize;
    for epoch in 0..=warm {
        for idx in data.epoch_batches(cfg.batch_size, &mut shuffle_rng(cfg, epoch)) {
            let (x, labels) = data.batch(&idx);
            let (_, g) = net.loss_and_param_grads(&x, &labels)?;
            let dir = opt.direction(&g);
            if epoch == warm {
                for (acc, w) in sq.iter_mut().zip(&dir.weights) {
                    *acc += w.norm_squared();
                }
                batches += 1;
            }
        }
    }
    let total: f64 = sq
        .iter()
        .zip(&net.weights)
        .map(|(s, w)| (s / batches as f64).sqrt() / w.norm())
        .sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(NlcError::Degenerate(format!(
            "weight updates are zero or undefined (relative size {total})"
        )));
    }
    Ok(epsilon * total)
}

/// One pass over shuffled training batches. Returns the mean batch loss,
/// or `None` once a loss, gradient or parameter stops being finite.
fn run_epoch(
    net: &mut Network,
    opt: &mut dyn Optimizer,
    data: &Dataset,
    lr: f64,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let mut loss_sum = 0.0;
    let mut n_batches = 0usize;
    for idx in data.epoch_batches(cfg.batch_size, &mut shuffle_rng(cfg, epoch)) {
        let (x, labels) = data.batch(&idx);
        let (loss, g) = match net.loss_and_param_grads(&x, &labels) {
            Ok(v) => v,
            Err(NlcError::Overflow { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Ok(None);
        }
        loss_sum += loss;
        n_batches += 1;
        let dir = opt.direction(&g);
        apply_direction(net, &dir, lr, cfg);
        if !params_finite(net) {
            return Ok(None);
        }
    }
    Ok(Some(loss_sum / n_batches.max(1) as f64))
}

/// Trains for a fixed number of epochs at a constant rate, with the same
/// shuffling stream as [`train_run`]. Fails if training diverges.
pub fn train_fixed_epochs(
    net: &Network,
    data: &Dataset,
    lr: f64,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<Network> {
    cfg.validate(net.depth())?;
    let mut current = net.clone();
    let mut opt = create_optimizer(&cfg.optimizer)?;
    for epoch in 1..=epochs {
        if run_epoch(&mut current, opt.as_mut(), data, lr, epoch, cfg)?.is_none() {
            return Err(NlcError::overflow(0, format!("training diverged in epoch {epoch}")));
        }
    }
    Ok(current)
}

struct Snapshot {
    net: Network,
    opt: Box<dyn Optimizer>,
    value: f64,
    epoch: usize,
}

/// One training run with the decay-and-rewind schedule.
///
/// Training proceeds at `lr0` until the criterion has not improved for
/// `patience_initial` epochs (or the stage hits `max_epochs`). The network
/// and optimizer state are then restored to the best epoch, the rate is
/// divided by `decay_factor` and training continues with `patience_decay`.
/// After `decay_count` decays the final stage ends with one last rewind.
/// A non-finite loss or parameter stops the run, which keeps its best
/// snapshot and is flagged as diverged.
pub fn train_run(net: &Network, data: &Dataset, lr0: f64, cfg: &TrainConfig) -> Result<RunRecord> {
    if !(lr0 > 0.0) || !lr0.is_finite() {
        return Err(NlcError::Parameter(format!("starting learning rate {lr0} must be positive")));
    }
    cfg.validate(net.depth())?;
    let mut current = net.clone();
    let mut opt = create_optimizer(&cfg.optimizer)?;
    let initial = criterion_value(&current, data, cfg)?;
    let mut best = Snapshot {
        net: current.clone(),
        opt: opt.clone(),
        value: initial,
        epoch: 0,
    };
    let mut epochs = Vec::new();
    let mut lr = lr0;
    let mut stage = 0usize;
    let mut patience = cfg.patience_initial;
    let (mut since_best, mut stage_epochs) = (0usize, 0usize);
    let mut diverged = false;
    let mut epoch = 0usize;
    let mut rewinds = Vec::new();

    loop {
        epoch += 1;
        let loss = match run_epoch(&mut current, opt.as_mut(), data, lr, epoch, cfg)? {
            Some(l) => l,
            None => {
                diverged = true;
                break;
            }
        };
        let (train_error, validation_error) = match (
            classification_error(&current, data, Split::Train, cfg.batch_size),
            classification_error(&current, data, Split::Validation, cfg.batch_size),
        ) {
            (Ok(t), Ok(v)) => (t, v),
            (Err(NlcError::Overflow { .. }), _) | (_, Err(NlcError::Overflow { .. })) => {
                diverged = true;
                break;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss,
            train_error,
            validation_error,
        });
        let value = match cfg.criterion {
            StoppingCriterion::ValidationError => validation_error,
            StoppingCriterion::TrainingError => train_error,
        };
        if value < best.value {
            best = Snapshot {
                net: current.clone(),
                opt: opt.clone(),
                value,
                epoch,
            };
            since_best = 0;
        } else {
            since_best += 1;
        }
        stage_epochs += 1;
        if since_best >= patience || stage_epochs >= cfg.max_epochs {
            rewinds.push((epoch, best.value));
            current = best.net.clone();
            opt = best.opt.clone();
            if stage == cfg.decay_count {
                break;
            }
            stage += 1;
            lr /= cfg.decay_factor;
            patience = cfg.patience_decay;
            since_best = 0;
            stage_epochs = 0;
        }
    }

    let test_error = classification_error(&best.net, data, Split::Test, cfg.batch_size)?;
    Ok(RunRecord {
        lr0,
        epochs,
        best_criterion: best.value,
        best_epoch: best.epoch,
        test_error,
        diverged,
        rewinds,
        snapshot: best.net,
    })
}

/// Runs `n_runs` trainings from identical copies of `net` with starting
/// rates `smallest_lr * spacing^k` and selects the run with the lowest
/// criterion (earliest on ties).
pub fn lr_search(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate(net.depth())?;
    let base = smallest_lr(net, data, cfg.epsilon, cfg)?;
    let runs: Vec<RunRecord> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|k| train_run(net, data, base * cfg.lr_spacing.powi(k as i32), cfg))
        .collect::<Result<_>>()?;
    if runs.iter().all(|r| r.diverged) {
        return Err(NlcError::SearchFailure(format!(
            "all {} runs diverged; starting rates {:e} to {:e}",
            runs.len(),
            base,
            base * cfg.lr_spacing.powi(cfg.n_runs as i32 - 1)
        )));
    }
    let mut selected = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.best_criterion < runs[selected].best_criterion {
            selected = i;
        }
    }
    Ok(TrainResult {
        smallest_lr: base,
        runs,
        selected,
    })
}

/// Error rate of uniform guessing with `n_classes` classes.
pub fn random_error(n_classes: usize) -> f64 {
    1.0 - 1.0 / n_classes as f64
}

/// Error below which a run counts as better than random: 50% for three
/// classes and 80% for ten; `1 - 1.5 / k` for other class counts.
pub fn better_than_random_threshold(n_classes: usize) -> f64 {
    match n_classes {
        10 => 0.8,
        k => 1.0 - 1.5 / k as f64,
    }
}
