use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kshare_core::SimConfig;
use serde_json::Value;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn kshare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kshare")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A config small enough for quick end-to-end runs.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = SimConfig::default();
    cfg.learning.horizon = 30.0;
    cfg.scenarios.ledger_convergence.rounds = 60;
    cfg.scenarios.ledger_convergence.window = 20;
    cfg.scenarios.ledger_convergence.genesis = vec![10];
    let path = dir.join("small.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let path = repo_file("config/default.json");
    assert_eq!(SimConfig::load(&path).unwrap(), SimConfig::default());
    let out = kshare(&["validate-config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("ok "));
    for extra in ["config/heavy.json", "config/regions.json"] {
        assert!(kshare(&["validate-config", repo_file(extra).to_str().unwrap()]).status.success(), "{extra}");
    }
}

#[test]
fn schema_covers_exactly_the_config_fields() {
    fn walk(schema: &Value, value: &Value, path: &str) {
        let Some(obj) = value.as_object() else { return };
        let props = schema["properties"].as_object().unwrap_or_else(|| panic!("{path}: no properties in schema"));
        let mut want: Vec<&String> = obj.keys().collect();
        let mut got: Vec<&String> = props.keys().collect();
        want.sort();
        got.sort();
        assert_eq!(got, want, "{path}");
        for (k, v) in obj {
            if v.is_object() && props[k].get("properties").is_some() {
                walk(&props[k], v, &format!("{path}.{k}"));
            }
        }
    }
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(repo_file("config/sim-config.schema.json")).unwrap()).unwrap();
    let default: Value = serde_json::from_str(&SimConfig::default().to_json()).unwrap();
    walk(&schema, &default, "$");
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"mobility": {"crossing_rate": 2.0}}"#).unwrap();
    let out = kshare(&["validate-config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("mobility.crossing_rate"), "{}", stderr(&out));

    std::fs::write(&path, r#"{"ledger": {"tip_gamma": 1.0}}"#).unwrap();
    let out = kshare(&["validate-config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("tip_gamma"), "{}", stderr(&out));
}

#[test]
fn bound_analysis_reports_both_weights() {
    let out = kshare(&["analyze", "bound", "--params", repo_file("config/bound-example.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    // Independent check: the positive root of 2AC x^3 + AB x^2 - 1 by bisection.
    let (a, b, c) = (doc["A"].as_f64().unwrap(), doc["B"].as_f64().unwrap(), doc["C"].as_f64().unwrap());
    let f = |x: f64| 2.0 * a * c * x.powi(3) + a * b * x * x - 1.0;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid
        } else {
            lo = mid
        }
    }
    assert!((doc["alpha_star"].as_f64().unwrap() - lo).abs() < 1e-9);
    assert!((doc["closed_form_alpha"].as_f64().unwrap() - 0.0125f64.cbrt()).abs() < 1e-12);
    assert_eq!(doc["roots"].as_array().unwrap().len(), 3);
    assert_eq!(doc["on_condition"], Value::Bool(true));
    for key in ["D", "cubic", "required_gamma"] {
        assert!(doc.get(key).is_some(), "{key}");
    }
}

#[test]
fn sim_is_reproducible_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = kshare(&[
            "sim",
            "ledger-convergence",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(dir_contents(&a), dir_contents(&b));
    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["files"][0]["name"], "ledger.csv");
    // 3 arrival models, one genesis size, 60 rounds each
    assert_eq!(manifest["files"][0]["rows"], 180);
}

#[test]
fn unknown_scenario_lists_the_available_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = kshare(&["sim", "warp-drive", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("warp-drive") && err.contains("ledger-convergence") && err.contains("attack"), "{err}");
}

#[test]
fn exported_ledger_reimports_and_tampering_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let file = dir.path().join("region0.ledger");
    let (cfg_s, file_s) = (cfg.to_str().unwrap(), file.to_str().unwrap());
    let out = kshare(&["ledger", "export", file_s, "--config", cfg_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = kshare(&["ledger", "import", file_s, "--config", cfg_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("sites"));

    // Identities derive from the seed, so another seed cannot verify signatures.
    let out = kshare(&["ledger", "import", file_s, "--config", cfg_s, "--seed", "99"]);
    assert!(!out.status.success());

    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let line = &mut lines[1];
    let mid = line.len() / 2;
    let c = if &line[mid..mid + 1] == "0" { "1" } else { "0" };
    line.replace_range(mid..mid + 1, c);
    std::fs::write(&file, lines.join("\n")).unwrap();
    let out = kshare(&["ledger", "import", file_s, "--config", cfg_s]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}
