use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use oqw_cli::config::{ClassFile, LoadedConfig};
use oqw_core::class::validate_class;
use oqw_core::presets::{self, DEFAULT_ALPHA};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn oqw(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqw"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run oqw")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bundled_configs_match_presets() {
    let classes = |name: &str| LoadedConfig::load(&config(name)).unwrap().config.classes().unwrap();
    let ab = vec![presets::class_a(DEFAULT_ALPHA), presets::class_b(DEFAULT_ALPHA)];
    assert_eq!(classes("reducible.cfg"), ab);
    assert_eq!(classes("irreducible.cfg"), ab);
    assert_eq!(classes("class-a.cfg"), vec![presets::class_a(DEFAULT_ALPHA)]);
    assert_eq!(classes("coin.cfg"), vec![presets::coin_flip()]);
    assert_eq!(classes("drift.cfg"), vec![presets::damp_drift()]);
}

#[test]
fn broken_kraus_set_fails_validation() {
    let out = tempfile::tempdir().unwrap();
    let o = oqw(&["validate", "--config", config("broken-kraus.cfg").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));
    let err = json(out.path().join("error.json"));
    assert_eq!(err["error"]["kind"], "invalid_class");
    assert!(err["error"]["message"].as_str().unwrap().contains("completeness deviation"));
    let summary = json(out.path().join("summary.json"));
    assert_eq!(summary["result"]["passed"], false);
    let stderr: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(stderr, err);
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = tempfile::tempdir().unwrap();
    let o = oqw(&["simulate", "--config", "/nonexistent.cfg"], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(out.path().join("error.json"))["error"]["kind"], "read");
}

#[test]
fn bad_usage_exits_two() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(oqw(&["frobnicate"], out.path()).status.code(), Some(2));
    let cfg = config("coin.cfg");
    let o = oqw(&["simulate", "--config", cfg.to_str().unwrap(), "--threads", "0"], out.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn window_overflow_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("reducible.cfg"))
        .unwrap()
        .replace("\"window_radius\": 200", "\"window_radius\": 5");
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, text).unwrap();
    let o = oqw(&["evolve", "--config", cfg.to_str().unwrap(), "--steps", "20"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(json(dir.path().join("out/error.json"))["error"]["kind"], "window_too_small");
}

#[test]
fn reduce_exports_a_reloadable_class() {
    let out = tempfile::tempdir().unwrap();
    let o = oqw(&["reduce", "--config", config("reducible.cfg").to_str().unwrap()], out.path());
    assert!(o.status.success());
    let s = json(out.path().join("summary.json"));
    let r = &s["result"];
    assert_eq!(r["operator_count"], 64);
    assert_eq!(r["distinct_displacements"].as_array().unwrap().len(), 9);
    assert_eq!(r["export"]["reload_lossless"], true);
    assert_eq!(r["equivalence"]["passed"], true);
    let class = ClassFile::load(&out.path().join("reduced_class.json")).unwrap().build().unwrap();
    assert!(validate_class(&class, 1e-12).unwrap().passed);
    assert!(class.is_generalized());
    // m_P / 2 of the composed chain.
    let m = &r["drift"]["per_original_step"]["components"];
    assert!((m[0].as_f64().unwrap() + 0.006423487544483).abs() < 1e-12);
    assert!((m[1].as_f64().unwrap() - 0.116743772241993).abs() < 1e-12);
}

#[test]
fn invariant_and_poisson_reports() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("reducible.cfg");
    assert!(oqw(&["invariant", "--config", cfg.to_str().unwrap()], out.path()).status.success());
    let s = json(out.path().join("summary.json"));
    let classes = s["result"]["classes"].as_array().unwrap();
    let a = &classes[0]["drift"]["components"];
    assert!((a[1].as_f64().unwrap() - 1.0 / (5.0 - 4.0 * DEFAULT_ALPHA)).abs() < 1e-12);
    let b = &classes[1]["drift"]["components"];
    assert!((b[0].as_f64().unwrap() - (2.0 * DEFAULT_ALPHA - 1.0) / 2.0).abs() < 1e-12);
    assert!(s["config_sha256"].as_str().unwrap().len() == 64);

    assert!(oqw(&["poisson", "--config", cfg.to_str().unwrap()], out.path()).status.success());
    let s = json(out.path().join("summary.json"));
    for op in s["result"]["operators"].as_array().unwrap() {
        assert!(op["poisson"]["residual"].as_f64().unwrap() <= 1e-9);
        assert!(op["identity_max_deviation"].as_f64().unwrap() <= 1e-9);
    }
}

#[test]
fn evolve_and_simulate_write_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("reducible.cfg");
    let o = oqw(&["evolve", "--config", cfg.to_str().unwrap(), "--steps", "3,1"], out.path());
    assert!(o.status.success());
    let marginal = std::fs::read_to_string(out.path().join("marginal_n3.csv")).unwrap();
    assert!(marginal.starts_with("x1,x2,p\n"));
    let total: f64 = marginal
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(out.path().join("xsection_n1.csv").exists());

    let o = oqw(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "5"], out.path());
    assert!(o.status.success());
    let s = json(out.path().join("summary.json"));
    assert_eq!(s["seed"], 5);
    assert_eq!(s["result"]["statistics"]["trajectories"], 10_000);
    let endpoints = std::fs::read_to_string(out.path().join("endpoints.csv")).unwrap();
    assert_eq!(endpoints.lines().count(), 10_001);
}
