use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nlc_core::arch::instantiate;
use nlc_core::data::unit_gaussian;
use nlc_core::metrics::confounders::{confounder_suite, scenario, scenario_keys, ConfounderBase, ConfounderTraining};
use nlc_core::metrics::{
    linear_approx_error, nlc_tau, output_region_map, precision_check, EstimatorConfig, NonlinearityProbeConfig,
    PRECISION_HEADER,
};
use nlc_core::net::{ActivationConfig, ArchitectureSpec, Normalization};
use nlc_core::study::{
    batchnorm_nlc_median, sample_and_measure, study_architecture, StudyConfig, MEASURE_HEADER, STUDY_HEADER,
};
use nlc_core::tensor::Rng;
use nlc_core::trainer::{StoppingCriterion, TrainConfig};
use nlc_core::NlcError;

use crate::{dataset, write_atomic, Command, ExperimentConfig, Global, Outcome};

/// Why a command stopped.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments; exit code 2.
    Usage(String),
    /// Anything else; exit code 1.
    Failed(String),
}

impl From<NlcError> for CliError {
    fn from(e: NlcError) -> Self {
        match e {
            NlcError::Configuration(_) | NlcError::Unknown { .. } | NlcError::Parameter(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("cannot write {}: {e}", path.display()))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<String, CliError> {
    let path = out.join(name);
    write_atomic(&path, contents).map_err(io(&path))?;
    Ok(name.to_string())
}

fn estimator(g: &Global) -> EstimatorConfig {
    EstimatorConfig::new(g.batch_size, g.batches, g.seed)
}

pub const TABLE_ACTIVATIONS: [&str; 9] = [
    "relu",
    "selu",
    "tanh",
    "sigmoid",
    "even_tanh",
    "gaussian",
    "square",
    "odd_square",
    "identity",
];

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = &cfg.global;
    match &cfg.command {
        Command::TauTable {
            with_networks,
            depths,
            seeds,
            width,
            d_in,
            d_out,
            points,
        } => {
            let mut header = String::from("activation,nlc_tau,nlc_tau_48,linear_approx_error");
            let data = if *with_networks {
                for d in depths {
                    let _ = write!(header, ",depth{d}_nlc_median");
                }
                Some(unit_gaussian(*d_in, *points, *d_out, &mut Rng::new(g.seed).fork("table-data"))?)
            } else {
                None
            };
            let mut csv = header + "\n";
            for name in TABLE_ACTIVATIONS {
                let act = ActivationConfig::plain(name);
                let tau = nlc_tau(&act)?;
                let lin = linear_approx_error(&act)?;
                let _ = write!(csv, "{name},{tau:e},{:e},{lin:e}", tau.powi(48));
                if let Some(data) = &data {
                    for &depth in depths {
                        let m = batchnorm_nlc_median(&act, depth, *width, data, *seeds, &estimator(g))?;
                        let _ = write!(csv, ",{m:e}");
                    }
                }
                csv.push('\n');
            }
            Ok(Outcome {
                artifacts: vec![write(&g.out, "tau_table.csv", &csv)?],
                failures: vec![],
            })
        }
        Command::SampleMeasure {
            n,
            depth_min,
            depth_max,
            nonlinearity,
        } => {
            let data = dataset::load(&g.dataset, g.seed)?;
            let study = StudyConfig {
                seed: g.seed,
                n: *n,
                budget: g.budget,
                depths: (*depth_min, *depth_max),
                estimator: estimator(g),
                probe: nonlinearity.then(NonlinearityProbeConfig::default),
            };
            let rows = sample_and_measure(&data, &study)?;
            let mut csv = format!("{MEASURE_HEADER}\n");
            let mut failures = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                csv.push_str(&r.csv());
                csv.push('\n');
                if let Some(e) = &r.error {
                    failures.push(format!("architecture {i} ({}): {e}", r.arch.arch_id));
                }
            }
            Ok(Outcome {
                artifacts: vec![write(&g.out, "sample_measure.csv", &csv)?],
                failures,
            })
        }
        Command::MiniStudy {
            n,
            depth_min,
            depth_max,
            runs,
            epsilon,
            optimizer,
            training_error,
            max_epochs,
        } => {
            let data = dataset::load(&g.dataset, g.seed)?;
            let study = StudyConfig {
                seed: g.seed,
                n: *n,
                budget: g.budget,
                depths: (*depth_min, *depth_max),
                estimator: estimator(g),
                probe: None,
            };
            let train = TrainConfig {
                optimizer: optimizer.clone(),
                n_runs: *runs,
                epsilon: *epsilon,
                criterion: if *training_error {
                    StoppingCriterion::TrainingError
                } else {
                    StoppingCriterion::ValidationError
                },
                batch_size: g.batch_size,
                max_epochs: *max_epochs,
                seed: g.seed,
                ..TrainConfig::default()
            };
            let dir = g.out.join("architectures");
            fs::create_dir_all(&dir).map_err(io(&dir))?;
            let mut csv = format!("{STUDY_HEADER}\n");
            let mut outcome = Outcome::default();
            for i in 0..*n {
                let row = study_architecture(i, &data, &study, &train)?;
                let json = serde_json::to_string_pretty(&row).map_err(|e| CliError::Failed(e.to_string()))?;
                outcome.artifacts.push(write(&g.out, &format!("architectures/{i:04}.json"), &json)?);
                if let Some(e) = row.error.as_ref().or(row.initial.error.as_ref()) {
                    outcome.failures.push(format!("architecture {i} ({}): {e}", row.initial.arch.arch_id));
                }
                csv.push_str(&row.csv());
                csv.push('\n');
            }
            outcome.artifacts.push(write(&g.out, "mini_study.csv", &csv)?);
            Ok(outcome)
        }
        Command::Confounders {
            scenario: key,
            grid,
            depth,
            width,
            train_lr,
        } => {
            let s = scenario(key).map_err(|_| {
                CliError::Usage(format!("unknown scenario '{key}' (known: {})", scenario_keys().join(", ")))
            })?;
            let data = dataset::load(&g.dataset, g.seed)?;
            let base = ConfounderBase::he_batchnorm_relu(data, *depth, *width, g.seed);
            let grid = grid.clone().unwrap_or_else(|| s.default_grid());
            let training = train_lr.map(|lr0| ConfounderTraining {
                lr0,
                config: TrainConfig {
                    batch_size: g.batch_size,
                    seed: g.seed,
                    ..TrainConfig::default()
                },
            });
            let table = confounder_suite(s.as_ref(), &base, &grid, &estimator(g), training.as_ref())?;
            let name = format!("confounders_{}.csv", s.key());
            Ok(Outcome {
                artifacts: vec![write(&g.out, &name, &table.csv())?],
                failures: vec![],
            })
        }
        Command::RegionMap {
            depth,
            resolution,
            width,
            d_in,
            d_out,
            activation,
            normalization,
        } => {
            let norm = match normalization.as_str() {
                "none" => Normalization::None,
                "batchnorm" => Normalization::BatchNorm,
                "layernorm" => Normalization::LayerNorm,
                other => return Err(CliError::Usage(format!("unknown normalization '{other}'"))),
            };
            let spec = ArchitectureSpec::mlp(*d_in, *width, *d_out, *depth, norm, ActivationConfig::plain(activation));
            let net = instantiate(&spec, &Rng::new(g.seed).fork("region-network"))?;
            let map = output_region_map(&net, &mut Rng::new(g.seed).fork("region-anchors"), *resolution)?;
            let summary = format!(
                "depth,resolution,n_theta,n_phi,regions\n{depth},{resolution},{},{},{}\n",
                map.n_theta,
                map.n_phi,
                map.region_count()
            );
            Ok(Outcome {
                artifacts: vec![
                    write(&g.out, "region_map.txt", &map.to_grid_text())?,
                    write(&g.out, "region_summary.csv", &summary)?,
                ],
                failures: vec![],
            })
        }
    }
}

pub fn precision(out: &Path) -> Result<String, CliError> {
    let mut csv = format!("{PRECISION_HEADER}\n");
    for row in precision_check(&[1.0, 1e4, 1e8, 1e12], 1000) {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    write(out, "precision.csv", &csv)
}
