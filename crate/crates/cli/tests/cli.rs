use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlc")).args(args).output().expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

#[test]
fn tau_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nlc(&["tau-table", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("tau_table.csv"));
    let find = |name: &str| -> Vec<f64> {
        rows.iter().find(|r| r[0] == name).unwrap()[1..].iter().map(|v| v.parse().unwrap()).collect()
    };
    let relu = find("relu");
    assert!((relu[0] - 1.211).abs() < 5e-4 && (relu[2] - 0.222).abs() < 5e-4);
    assert!((relu[1] / relu[0].powi(48) - 1.0).abs() < 1e-12);
    let sigmoid = find("sigmoid");
    assert!((sigmoid[0] - 1.017).abs() < 5e-4 && (sigmoid[2] - 0.0024).abs() < 1e-4);
    let identity = find("identity");
    assert!((identity[0] - 1.0).abs() < 1e-12 && (identity[1] - 1.0).abs() < 1e-10 && identity[2].abs() < 1e-12);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn tau_table_with_networks_adds_median_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "tau-table", "--with-networks", "--depths", "2", "--seeds", "2", "--width", "16", "--d-in", "8", "--d-out",
        "3", "--points", "300", "--batches", "2", "--batch-size", "100", "--out", out,
    ];
    assert!(nlc(&args).status.success());
    let rows = csv_rows(&dir.path().join("tau_table.csv"));
    let med = column(&rows, "depth2_nlc_median");
    assert_eq!(med.len(), 9);
    assert!(med.iter().all(|v| v.parse::<f64>().unwrap() > 0.9));
}

#[test]
fn sample_measure_emits_one_row_per_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "sample-measure", "--n", "20", "--budget", "3000", "--depth-max", "9", "--dataset", "synth:d=10,k=3,n=600",
        "--batch-size", "100", "--batches", "3", "--out", out,
    ];
    let o = nlc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("sample_measure.csv"));
    assert_eq!(rows.len(), 21);
    let nlcs: Vec<f64> = column(&rows, "nlc").iter().filter_map(|v| v.parse().ok()).collect();
    assert!(nlcs.len() >= 18);
    let (lo, hi) = nlcs.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi / lo > 10.0, "NLC range {lo}..{hi}");
}

#[test]
fn manifest_replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = [
        "confounders", "--scenario", "c", "--grid", "1,2", "--depth", "3", "--width", "24", "--dataset",
        "waveform:n=400", "--batch-size", "80", "--batches", "3", "--seed", "5", "--precision-check", "--out",
        a.to_str().unwrap(),
    ];
    assert!(nlc(&args).status.success());
    let manifest = a.join("manifest.json");
    let o = nlc(&["--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["confounders_C.csv", "precision.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = csv_rows(&a.join("confounders_C.csv"));
    assert_eq!(rows[0], ["scenario", "c", "metric", "value"]);
}

#[test]
fn toml_config_fills_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    let text = format!(
        "[global]\nseed = 3\nout = {:?}\n\n[command]\nname = \"region-map\"\ndepth = 2\nresolution = 8\nwidth = 16\nd_in = 5\nd_out = 3\n",
        out.to_str().unwrap()
    );
    fs::write(&cfg, text).unwrap();
    let o = nlc(&["--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(out.join("region_map.txt")).unwrap();
    assert_eq!(grid.lines().count(), 8);
    assert!(grid.lines().all(|l| l.split(',').count() == 16));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["command"]["activation"], "relu");
    assert_eq!(manifest["config"]["global"]["batch_size"], 250);
}

#[test]
fn scenario_a_csv_has_constant_nlc_and_scaled_gvcs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "confounders", "--scenario", "A", "--depth", "3", "--width", "32", "--dataset", "waveform:n=600",
        "--batch-size", "120", "--batches", "4", "--out", out,
    ];
    assert!(nlc(&args).status.success());
    let rows = csv_rows(&dir.path().join("confounders_A.csv"));
    let pick = |metric: &str| -> Vec<(f64, f64)> {
        rows[1..]
            .iter()
            .filter(|r| r[2] == metric)
            .map(|r| (r[1].parse().unwrap(), r[3].parse().unwrap()))
            .collect()
    };
    let nlc_col = pick("nlc");
    assert_eq!(nlc_col.len(), 5);
    assert!(nlc_col.iter().all(|(_, v)| (v - nlc_col[0].1).abs() < 1e-9));
    let g = pick("gvcs");
    let reference = g.iter().find(|(c, _)| *c == 1.0).unwrap().1;
    assert!(g.iter().all(|(c, v)| ((v * c - reference) / reference).abs() < 0.02));
}

#[test]
fn scenario_e_nlc_rises_with_depth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "confounders", "--scenario", "E", "--grid", "2,9,33", "--width", "100", "--dataset", "waveform:n=1000",
        "--seed", "2", "--out", out,
    ];
    assert!(nlc(&args).status.success());
    let rows = csv_rows(&dir.path().join("confounders_E.csv"));
    let values: Vec<f64> = rows[1..].iter().filter(|r| r[2] == "nlc").map(|r| r[3].parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
}

#[test]
fn mini_study_writes_per_architecture_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "mini-study", "--n", "2", "--runs", "3", "--budget", "1500", "--depth-max", "5", "--max-epochs", "3",
        "--dataset", "synth:d=8,k=3,n=300", "--batch-size", "60", "--batches", "2", "--out", out,
    ];
    let o = nlc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("architectures/0000.json").exists());
    assert!(dir.path().join("architectures/0001.json").exists());
    let rows = csv_rows(&dir.path().join("mini_study.csv"));
    assert_eq!(rows.len(), 3);
    assert!(column(&rows, "selected_index").iter().all(|v| v.parse::<usize>().unwrap() < 3));
}

#[test]
fn csv_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("points.csv");
    let mut text = String::from("a,b,c,label\n");
    for i in 0..120 {
        let t = i as f64 * 0.1;
        text.push_str(&format!("{},{},{},{}\n", t.sin(), t.cos(), (2.0 * t).sin(), ["x", "y"][i % 2]));
    }
    fs::write(&path, text).unwrap();
    let out = dir.path().join("out");
    let ds = format!("csv:{}#mode=standardize", path.display());
    let args = [
        "sample-measure", "--n", "2", "--budget", "500", "--depth-max", "5", "--dataset", &ds, "--batch-size", "40",
        "--batches", "2", "--out", out.to_str().unwrap(),
    ];
    let o = nlc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(nlc(&["confounders", "--scenario", "Q", "--out", out]).status.code(), Some(2));
    assert_eq!(nlc(&["--out", out]).status.code(), Some(2));
    assert_eq!(nlc(&["sample-measure", "--dataset", "nope:x", "--out", out]).status.code(), Some(2));
    let missing = nlc(&["sample-measure", "--dataset", "csv:/definitely/missing.csv", "--out", out]);
    assert_ne!(missing.status.code(), Some(0));
}
