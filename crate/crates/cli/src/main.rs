mod commands;
mod dataset;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use commands::CliError;
use serde::{Deserialize, Serialize};

/// Nonlinearity coefficient experiments.
#[derive(Parser, Debug)]
#[command(name = "nlc", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,

    /// Replay a manifest (or a config file in JSON or TOML). Flags given
    /// explicitly alongside it override `--out`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Global {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Parameter budget for sampled architectures.
    #[arg(long, global = true, default_value_t = 20_000)]
    pub budget: usize,
    /// Dataset: synth:..., gaussian:..., waveform:n=... or csv:PATH[#opts].
    #[arg(long, global = true, default_value = "synth:d=20,k=3,n=2000,sep=2")]
    pub dataset: String,
    /// Batch size of every estimator.
    #[arg(long, global = true, default_value_t = 250)]
    pub batch_size: usize,
    /// Number of estimator batches.
    #[arg(long, global = true, default_value_t = 20)]
    pub batches: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "nlc-out")]
    pub out: PathBuf,
    /// Also write precision.csv comparing one-pass and two-pass moments in
    /// 32- and 64-bit arithmetic.
    #[arg(long, global = true)]
    pub precision_check: bool,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// Per-activation NLC_tau, its 48th power and the linear approximation
    /// error, optionally with measured batchnorm-network medians.
    TauTable {
        /// Measure batchnorm networks on unit Gaussian data as well.
        #[arg(long)]
        with_networks: bool,
        /// Network depths measured with --with-networks.
        #[arg(long, value_delimiter = ',', default_value = "2,49")]
        depths: Vec<usize>,
        /// Seeds per median.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 100)]
        width: usize,
        /// Input dimension of the unit Gaussian data.
        #[arg(long, default_value_t = 100)]
        d_in: usize,
        /// Output dimension (number of classes).
        #[arg(long, default_value_t = 10)]
        d_out: usize,
        /// Number of unit Gaussian points.
        #[arg(long, default_value_t = 5000)]
        points: usize,
    },
    /// Sample architectures and measure them at initialization.
    SampleMeasure {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        depth_min: usize,
        #[arg(long, default_value_t = 49)]
        depth_max: usize,
        /// Also sample the nonlinearity distribution (slow).
        #[arg(long)]
        nonlinearity: bool,
    },
    /// Sample, measure, search learning rates, train and re-measure.
    MiniStudy {
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        depth_min: usize,
        #[arg(long, default_value_t = 49)]
        depth_max: usize,
        /// Starting learning rates per architecture.
        #[arg(long, default_value_t = 40)]
        runs: usize,
        /// Smallest-learning-rate factor.
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
        #[arg(long, default_value = "sgd")]
        optimizer: String,
        /// Stop on training error instead of validation error.
        #[arg(long)]
        training_error: bool,
        /// Epoch cap per learning-rate stage.
        #[arg(long, default_value_t = 500)]
        max_epochs: usize,
    },
    /// Metric table for one confounder scenario (A to F).
    Confounders {
        #[arg(long)]
        scenario: String,
        /// Grid values; defaults to the scenario's own grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 100)]
        width: usize,
        /// Train each instance at this starting rate (with the scenario's
        /// compensation) and add a test_error column.
        #[arg(long)]
        train_lr: Option<f64>,
    },
    /// Argmax class over a sphere in input space.
    RegionMap {
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 100)]
        width: usize,
        #[arg(long, default_value_t = 50)]
        d_in: usize,
        #[arg(long, default_value_t = 10)]
        d_out: usize,
        #[arg(long, default_value = "relu")]
        activation: String,
        /// none, batchnorm or layernorm.
        #[arg(long, default_value = "batchnorm")]
        normalization: String,
    },
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub global: Global,
    pub command: Command,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    config: ExperimentConfig,
    artifacts: Vec<String>,
    failures: Vec<String>,
}

/// Result of a command: files written and items that failed without
/// stopping the command.
#[derive(Default)]
pub struct Outcome {
    pub artifacts: Vec<String>,
    pub failures: Vec<String>,
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Flags reproducing one config table: `snake_case` keys become
/// `--kebab-case` flags, `true` becomes a bare flag, arrays are joined by
/// commas and `false` or null entries are left out.
fn table_args(table: &serde_json::Map<String, serde_json::Value>, args: &mut Vec<String>) -> Result<(), String> {
    use serde_json::Value;
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => args.push(flag),
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(scalar).collect::<Result<_, _>>()?;
                args.push(flag);
                args.push(parts.join(","));
            }
            other => {
                args.push(flag);
                args.push(scalar(other)?);
            }
        }
    }
    Ok(())
}

fn scalar(v: &serde_json::Value) -> Result<String, String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("unsupported config value {other}")),
    }
}

/// Reads a manifest or a JSON/TOML config and parses it exactly like the
/// equivalent command line, so omitted fields take their flag defaults.
fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let ctx = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
        let t: toml::Value = toml::from_str(&text).map_err(|e| ctx(&e))?;
        serde_json::to_value(t).map_err(|e| ctx(&e))?
    } else {
        serde_json::from_str(&text).map_err(|e| ctx(&e))?
    };
    let config = value.get("config").unwrap_or(&value);
    let command = config
        .get("command")
        .and_then(|c| c.as_object())
        .ok_or_else(|| ctx(&"missing [command] table"))?;
    let name = command
        .get("name")
        .and_then(|n| n.as_str())
        .ok_or_else(|| ctx(&"command has no name"))?;
    let mut args = vec!["nlc".to_string(), name.to_string()];
    if let Some(global) = config.get("global").and_then(|g| g.as_object()) {
        table_args(global, &mut args)?;
    }
    let mut fields = command.clone();
    fields.remove("name");
    table_args(&fields, &mut args)?;
    let cli = Cli::try_parse_from(&args).map_err(|e| ctx(&e))?;
    Ok(ExperimentConfig {
        global: cli.global,
        command: cli.command.ok_or_else(|| ctx(&"no command"))?,
    })
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn resolve(cli: Cli, matches: &ArgMatches) -> Result<ExperimentConfig, String> {
    match (cli.config, cli.command) {
        (Some(_), Some(_)) => Err("--config replays a complete command; do not pass a subcommand".into()),
        (Some(path), None) => {
            let mut cfg = load_config(&path)?;
            if explicit(matches, "out") {
                cfg.global.out = cli.global.out;
            }
            if explicit(matches, "precision_check") {
                cfg.global.precision_check = true;
            }
            Ok(cfg)
        }
        (None, Some(command)) => Ok(ExperimentConfig {
            global: cli.global,
            command,
        }),
        (None, None) => Err("a subcommand or --config is required".into()),
    }
}

fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let out = &cfg.global.out;
    fs::create_dir_all(out).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", out.display())))?;
    let mut outcome = commands::run(cfg)?;
    if cfg.global.precision_check {
        outcome.artifacts.push(commands::precision(&cfg.global.out)?);
    }
    let manifest = Manifest {
        tool: "nlc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        artifacts: outcome.artifacts.clone(),
        failures: outcome.failures.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Failed(e.to_string()))?;
    write_atomic(&out.join("manifest.json"), &text).map_err(|e| CliError::Failed(format!("manifest: {e}")))?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let cfg = match resolve(cli, &matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            for a in &outcome.artifacts {
                println!("{}", cfg.global.out.join(a).display());
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
