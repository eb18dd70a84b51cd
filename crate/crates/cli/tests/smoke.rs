use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cbclab_cli::ExperimentConfig;

const SMALL: &str = r#"
[sweep]
frequencies_hz = [2.4, 2.8, 3.0]
amplitude_count = 12
"#;

fn cbclab(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbclab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn sweep_writes_one_csv_per_frequency_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(cbclab(&["sweep", "--jobs", "1"], &config, &a).status.success());
    assert!(cbclab(&["sweep", "--jobs", "2"], &config, &b).status.success());
    for name in ["sweep_000.csv", "sweep_001.csv", "sweep_002.csv", "sweep_combined.csv"] {
        let x = fs::read(a.join("sweep").join(name)).unwrap();
        assert!(x == fs::read(b.join("sweep").join(name)).unwrap(), "{name} differs");
    }
    let combined = fs::read_to_string(a.join("sweep/sweep_combined.csv")).unwrap();
    assert_eq!(combined.lines().count(), 1 + 3 * 12);

    // the snapshot reproduces the run
    let snapshot = a.join("sweep/config.toml");
    let c = tmp.path().join("c");
    assert!(cbclab(&["sweep"], &snapshot, &c).status.success());
    assert!(fs::read(a.join("sweep/sweep_002.csv")).unwrap() == fs::read(c.join("sweep/sweep_002.csv")).unwrap());
}

#[test]
fn analysis_without_sweep_outputs_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let out = cbclab(&["floquet"], &config, &tmp.path().join("empty"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run the sweep command first"));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    for text in ["[rig]\ndamping_ratio = -1.0\n", "[sweep]\nno_such_key = 1\n", "[perturbation]\namplitudes = []\n"] {
        fs::write(&config, text).unwrap();
        let out = cbclab(&["sweep"], &config, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
}

#[test]
fn reference_config_parses_to_the_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_cbclab")).arg("reference-config").output().unwrap();
    assert!(out.status.success());
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}
