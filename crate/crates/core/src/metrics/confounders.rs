//! Scenarios that change a metric without changing what the network
//! computes (or vice versa), run over a grid of strengths `c`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock, RwLock};

use super::{measure_report, CorrelationMode, EstimatorConfig, MetricReport, ReportOptions};
use crate::arch::instantiate;
use crate::data::Dataset;
use crate::error::{NlcError, Result};
use crate::net::{ActivationConfig, ArchitectureSpec, Network, Normalization};
use crate::tensor::{Matrix, Rng};
use crate::trainer::{train_run, TrainConfig};

/// Everything a scenario needs to build its network and data for one `c`.
#[derive(Clone, Debug)]
pub struct ConfounderBase {
    /// Template for scenarios A to D; E and F borrow its widths.
    pub template: ArchitectureSpec,
    pub data: Dataset,
    pub seed: u64,
}

impl ConfounderBase {
    /// Batchnorm-ReLU network of the given depth and width with every
    /// weight matrix scaled by `sqrt(2)` and zero biases.
    pub fn he_batchnorm_relu(data: Dataset, depth: usize, width: usize, seed: u64) -> Self {
        let template = he_template(data.d_in(), width, data.n_classes(), depth, Normalization::BatchNorm);
        ConfounderBase {
            template,
            data,
            seed,
        }
    }

    fn network(&self, spec: &ArchitectureSpec) -> Result<Network> {
        instantiate(spec, &Rng::new(self.seed).fork("confounder"))
    }
}

fn he_template(
    d_in: usize,
    width: usize,
    d_out: usize,
    depth: usize,
    norm: Normalization,
) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::mlp(d_in, width, d_out, depth, norm, ActivationConfig::plain("relu"));
    for l in spec.layers.iter_mut() {
        l.weight_multiplier = 2f64.sqrt();
    }
    spec
}

/// Network and data for one grid value, with the learning-rate
/// compensation the scenario prescribes.
#[derive(Clone, Debug)]
pub struct ScenarioInstance {
    pub net: Network,
    pub data: Dataset,
    /// Global factor on the starting learning rate.
    pub lr_scale: f64,
    pub layer_lr: Vec<f64>,
    pub correlation: CorrelationMode,
}

impl ScenarioInstance {
    fn plain(net: Network, data: Dataset) -> Self {
        let depth = net.depth();
        ScenarioInstance {
            net,
            data,
            lr_scale: 1.0,
            layer_lr: vec![1.0; depth],
            correlation: CorrelationMode::Centered,
        }
    }
}

pub trait ConfounderScenario: Send + Sync {
    /// Single-letter key.
    fn key(&self) -> &str;
    fn description(&self) -> &str;
    fn default_grid(&self) -> Vec<f64>;
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance>;
}

fn require_batchnorm_first(base: &ConfounderBase, key: &str) -> Result<()> {
    if base.template.layers[0].normalization != Normalization::BatchNorm {
        return Err(NlcError::Configuration(format!(
            "scenario {key} needs batchnorm after the first linear layer"
        )));
    }
    Ok(())
}

fn require_positive(c: f64, key: &str) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(NlcError::Configuration(format!("scenario {key} needs c > 0, got {c}")));
    }
    Ok(())
}

fn require_count(c: f64, key: &str) -> Result<usize> {
    if c >= 1.0 && c.fract() == 0.0 && c <= 1e6 {
        Ok(c as usize)
    } else {
        Err(NlcError::Configuration(format!(
            "scenario {key} needs a positive integer, got {c}"
        )))
    }
}

const FACTOR_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

struct InputScale;

impl ConfounderScenario for InputScale {
    fn key(&self) -> &str {
        "A"
    }
    fn description(&self) -> &str {
        "inputs multiplied by c"
    }
    fn default_grid(&self) -> Vec<f64> {
        FACTOR_GRID.to_vec()
    }
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance> {
        require_batchnorm_first(base, "A")?;
        require_positive(c, "A")?;
        let mut net = base.network(&base.template)?;
        net.bn_epsilon = 0.0;
        let data = base.data.map_inputs(&format!("{}*{c}", base.data.name), |x| x * c)?;
        Ok(ScenarioInstance::plain(net, data))
    }
}

struct LossScale;

impl ConfounderScenario for LossScale {
    fn key(&self) -> &str {
        "B"
    }
    fn description(&self) -> &str {
        "loss multiplied by c, learning rate divided by c"
    }
    fn default_grid(&self) -> Vec<f64> {
        FACTOR_GRID.to_vec()
    }
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance> {
        require_positive(c, "B")?;
        let mut net = base.network(&base.template)?;
        net.bn_epsilon = 0.0;
        net.loss_scale = c;
        let mut inst = ScenarioInstance::plain(net, base.data.clone());
        inst.lr_scale = 1.0 / c;
        Ok(inst)
    }
}

struct Duplication;

/// `c` weights with sum 1 and sum of squares 1, so the duplicated layer
/// computes the same function while each weight shrinks by about `sqrt(c)`.
pub fn duplication_weights(c: usize, rng: &mut Rng) -> Vec<f64> {
    if c == 1 {
        return vec![1.0];
    }
    let n = c as f64;
    let mut z: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
    let mean = z.iter().sum::<f64>() / n;
    z.iter_mut().for_each(|v| *v -= mean);
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let beta = (1.0 - 1.0 / n).sqrt() / norm;
    z.iter().map(|v| 1.0 / n + beta * v).collect()
}

impl ConfounderScenario for Duplication {
    fn key(&self) -> &str {
        "C"
    }
    fn description(&self) -> &str {
        "each input dimension repeated c times, first-layer weights split across copies"
    }
    fn default_grid(&self) -> Vec<f64> {
        vec![1.0, 2.0, 4.0, 8.0, 16.0]
    }
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance> {
        let copies = require_count(c, "C")?;
        let d_in = base.data.d_in();
        let mut net = base.network(&base.template)?;
        net.bn_epsilon = 0.0;
        let mut spec = base.template.clone();
        spec.d_in = d_in * copies;
        spec.layers[0].fan_in = d_in * copies;
        let w = &net.weights[0];
        let mut rng = Rng::new(base.seed).fork("duplication");
        let mut dup = Matrix::zeros(w.nrows(), d_in * copies);
        for i in 0..d_in {
            let alpha = duplication_weights(copies, &mut rng);
            for (r, a) in alpha.iter().enumerate() {
                dup.column_mut(i * copies + r).copy_from(&(w.column(i) * *a));
            }
        }
        let mut weights = net.weights.clone();
        weights[0] = dup;
        let mut wide = Network::from_parts(spec, weights, net.biases.clone(), net.skip_projection.take())?;
        wide.bn_epsilon = 0.0;
        wide.c_loss = net.c_loss;
        let data = base.data.map_inputs(&format!("{}x{copies}", base.data.name), |x| {
            Matrix::from_fn(d_in * copies, x.ncols(), |r, col| x[(r / copies, col)])
        })?;
        let mut inst = ScenarioInstance::plain(wide, data);
        inst.layer_lr[0] = 1.0 / c;
        Ok(inst)
    }
}

struct InputBias;

impl ConfounderScenario for InputBias {
    fn key(&self) -> &str {
        "D"
    }
    fn description(&self) -> &str {
        "constant c added to every input component, first layer frozen"
    }
    fn default_grid(&self) -> Vec<f64> {
        vec![0.0, 1.0, 10.0, 100.0, 1000.0]
    }
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance> {
        require_batchnorm_first(base, "D")?;
        if !c.is_finite() {
            return Err(NlcError::Configuration(format!("scenario D needs finite c, got {c}")));
        }
        let mut net = base.network(&base.template)?;
        net.bn_epsilon = 0.0;
        let data = base.data.map_inputs(&format!("{}+{c}", base.data.name), |x| x.add_scalar(c))?;
        let mut inst = ScenarioInstance::plain(net, data);
        inst.layer_lr[0] = 0.0;
        inst.correlation = CorrelationMode::Uncentered;
        Ok(inst)
    }
}

struct ReluDepth;

impl ConfounderScenario for ReluDepth {
    fn key(&self) -> &str {
        "E"
    }
    fn description(&self) -> &str {
        "plain He-scaled ReLU network of depth c"
    }
    fn default_grid(&self) -> Vec<f64> {
        vec![2.0, 3.0, 5.0, 9.0, 17.0, 33.0]
    }
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance> {
        let depth = require_count(c, "E")?;
        let t = &base.template;
        let spec = he_template(t.d_in, t.width, t.d_out, depth, Normalization::None);
        Ok(ScenarioInstance::plain(base.network(&spec)?, base.data.clone()))
    }
}

struct SawtoothPeriod;

impl ConfounderScenario for SawtoothPeriod {
    fn key(&self) -> &str {
        "F"
    }
    fn description(&self) -> &str {
        "2-layer plain network with a sawtooth of period c"
    }
    fn default_grid(&self) -> Vec<f64> {
        vec![4.0, 2.0, 1.0, 0.5, 0.25, 0.125]
    }
    fn prepare(&self, base: &ConfounderBase, c: f64) -> Result<ScenarioInstance> {
        require_positive(c, "F")?;
        let t = &base.template;
        let spec = ArchitectureSpec::mlp(
            t.d_in,
            t.width,
            t.d_out,
            2,
            Normalization::None,
            ActivationConfig::sawtooth(c),
        );
        Ok(ScenarioInstance::plain(base.network(&spec)?, base.data.clone()))
    }
}

type Registry = RwLock<BTreeMap<String, Arc<dyn ConfounderScenario>>>;

fn registry() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(|| {
        let builtins: [Arc<dyn ConfounderScenario>; 6] = [
            Arc::new(InputScale),
            Arc::new(LossScale),
            Arc::new(Duplication),
            Arc::new(InputBias),
            Arc::new(ReluDepth),
            Arc::new(SawtoothPeriod),
        ];
        RwLock::new(builtins.into_iter().map(|s| (s.key().to_string(), s)).collect())
    })
}

pub fn register_scenario(scenario: Arc<dyn ConfounderScenario>) {
    registry()
        .write()
        .expect("scenario registry")
        .insert(scenario.key().to_string(), scenario);
}

/// Looks a scenario up by key, case-insensitively.
pub fn scenario(key: &str) -> Result<Arc<dyn ConfounderScenario>> {
    registry()
        .read()
        .expect("scenario registry")
        .get(&key.to_ascii_uppercase())
        .cloned()
        .ok_or_else(|| NlcError::Unknown {
            kind: "scenario",
            name: key.to_string(),
        })
}

pub fn scenario_keys() -> Vec<String> {
    registry().read().expect("scenario registry").keys().cloned().collect()
}

/// Optional training at a fixed starting rate, after which the test error
/// joins the metrics.
#[derive(Clone, Debug)]
pub struct ConfounderTraining {
    pub lr0: f64,
    pub config: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct ConfounderRow {
    pub c: f64,
    pub report: MetricReport,
    pub test_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ConfounderTable {
    pub scenario: String,
    pub rows: Vec<ConfounderRow>,
}

impl ConfounderTable {
    /// Long format: `scenario,c,metric,value`.
    pub fn csv(&self) -> String {
        let mut s = String::from("scenario,c,metric,value\n");
        for row in &self.rows {
            let mut entries = row.report.entries();
            if let Some(t) = row.test_error {
                entries.push(("test_error", t));
            }
            for (name, v) in entries {
                let _ = writeln!(s, "{},{:e},{name},{v:e}", self.scenario, row.c);
            }
        }
        s
    }

    /// Column of `metric` across the grid.
    pub fn metric(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| {
                if metric == "test_error" {
                    r.test_error
                } else {
                    r.report.entries().into_iter().find(|(n, _)| *n == metric).map(|(_, v)| v)
                }
            })
            .collect()
    }
}

/// Measures every grid value of `scenario`, optionally training each
/// instance with the scenario's learning-rate compensation.
pub fn confounder_suite(
    scenario: &dyn ConfounderScenario,
    base: &ConfounderBase,
    grid: &[f64],
    cfg: &EstimatorConfig,
    training: Option<&ConfounderTraining>,
) -> Result<ConfounderTable> {
    let mut rows = Vec::with_capacity(grid.len());
    for &c in grid {
        let inst = scenario.prepare(base, c)?;
        let opts = ReportOptions {
            correlation: inst.correlation,
            ..ReportOptions::default()
        };
        let report = measure_report(&inst.net, &inst.data, cfg, &opts)?;
        let test_error = match training {
            Some(t) => {
                let mut tc = t.config.clone();
                tc.layer_lr = Some(inst.layer_lr.clone());
                Some(train_run(&inst.net, &inst.data, t.lr0 * inst.lr_scale, &tc)?.test_error)
            }
            None => None,
        };
        rows.push(ConfounderRow {
            c,
            report,
            test_error,
        });
    }
    Ok(ConfounderTable {
        scenario: scenario.key().to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplication_weights_moments() {
        let mut rng = Rng::new(4);
        for c in [1usize, 2, 3, 7, 16] {
            let a = duplication_weights(c, &mut rng);
            let s: f64 = a.iter().sum();
            let q: f64 = a.iter().map(|v| v * v).sum();
            assert!((s - 1.0).abs() < 1e-12 && (q - 1.0).abs() < 1e-12, "c={c}");
        }
    }

    #[test]
    fn unknown_scenario() {
        assert!(matches!(scenario("Z"), Err(NlcError::Unknown { .. })));
        assert_eq!(scenario("a").unwrap().key(), "A");
    }
}
