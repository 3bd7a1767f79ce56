//! `--dataset` specifications.
//!
//! * `synth:d=20,k=3,n=2000,sep=2` Gaussian classes around orthogonal means
//! * `gaussian:d=100,n=5000,k=10` unit Gaussian inputs with random labels
//! * `waveform:n=2000` waveform generator with noise attributes
//! * `csv:PATH` or `csv:PATH#label=0,header=false,mode=standardize`

use std::collections::BTreeMap;
use std::path::Path;

use nlc_core::data::{
    load_csv, preprocess, synth_gaussian_classes, unit_gaussian, waveform_noise_dataset, Dataset, LabelColumn,
    PreprocessMode, SplitFractions,
};
use nlc_core::tensor::Rng;
use nlc_core::{NlcError, Result};

fn options(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| NlcError::Configuration(format!("dataset option '{part}' is not key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(opts: &mut BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match opts.remove(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| NlcError::Configuration(format!("dataset option {key}={v} is not valid"))),
    }
}

fn finish(opts: BTreeMap<String, String>) -> Result<()> {
    match opts.keys().next() {
        None => Ok(()),
        Some(k) => Err(NlcError::Configuration(format!("unknown dataset option '{k}'"))),
    }
}

/// Builds the dataset named by `spec`. All randomness derives from `seed`.
pub fn load(spec: &str, seed: u64) -> Result<Dataset> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut rng = Rng::new(seed).fork("dataset");
    match kind {
        "synth" => {
            let mut o = options(rest)?;
            let d = take(&mut o, "d", 20usize)?;
            let k = take(&mut o, "k", 3usize)?;
            let n = take(&mut o, "n", 2000usize)?;
            let sep = take(&mut o, "sep", 2.0f64)?;
            finish(o)?;
            synth_gaussian_classes(d, k, n, sep, &mut rng)
        }
        "gaussian" => {
            let mut o = options(rest)?;
            let d = take(&mut o, "d", 100usize)?;
            let n = take(&mut o, "n", 5000usize)?;
            let k = take(&mut o, "k", 10usize)?;
            finish(o)?;
            unit_gaussian(d, n, k, &mut rng)
        }
        "waveform" => {
            let mut o = options(rest)?;
            let n = take(&mut o, "n", 2000usize)?;
            finish(o)?;
            waveform_noise_dataset(n, &mut rng)
        }
        "csv" => {
            let (path, opts) = rest.split_once('#').unwrap_or((rest, ""));
            let mut o = options(opts)?;
            let label = match o.remove("label") {
                None => LabelColumn::Last,
                Some(v) if v == "last" => LabelColumn::Last,
                Some(v) => v.parse().map_or(LabelColumn::Name(v), LabelColumn::Index),
            };
            let header = take(&mut o, "header", true)?;
            let mode = match o.remove("mode").as_deref() {
                None | Some("full") => PreprocessMode::default(),
                Some("standardize") => PreprocessMode::FeatureStandardize,
                Some(m) => return Err(NlcError::Configuration(format!("unknown preprocessing mode '{m}'"))),
            };
            finish(o)?;
            let raw = load_csv(Path::new(path), &label, header, None)?;
            let name = Path::new(path)
                .file_stem()
                .map_or("csv".into(), |s| s.to_string_lossy().into_owned());
            let k = raw.n_classes();
            let (ds, _) = preprocess(&name, &raw.inputs, raw.labels, k, mode, SplitFractions::default(), &mut rng)?;
            Ok(ds)
        }
        other => Err(NlcError::Configuration(format!(
            "unknown dataset kind '{other}' (expected synth, gaussian, waveform or csv)"
        ))),
    }
}
