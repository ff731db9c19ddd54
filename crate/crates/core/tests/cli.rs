//! End-to-end runs of the `causal-gmm` binary.

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causal-gmm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Two environments with a noise shift in the exposure and a hidden confounder.
fn write_toy(dir: &Path, n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = String::from("y,x1,x2,env\n");
    for i in 0..n {
        let intv = i % 3 == 0;
        let h: f64 = rng.sample(StandardNormal);
        let scale = if intv { 3.0 } else { 1.0 };
        let x1 = h + scale * rng.sample::<f64, _>(StandardNormal);
        let x2 = 0.5 * x1 + if intv { 2.0 } else { 0.7 } * rng.sample::<f64, _>(StandardNormal);
        let y = 1.5 * x1 - x2 + h + rng.sample::<f64, _>(StandardNormal);
        s.push_str(&format!("{y},{x1},{x2},{}\n", if intv { "intv" } else { "obs" }));
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, s).unwrap();
    path.to_str().unwrap().to_string()
}

struct Row {
    method: String,
    coefficient: String,
    values: Vec<f64>,
}

fn parse_tsv(text: &str) -> Vec<Row> {
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split('\t').next(), Some("method"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            Row {
                method: f[0].into(),
                coefficient: f[1].into(),
                values: f[2..7].iter().map(|v| v.parse().unwrap()).collect(),
            }
        })
        .collect()
}

#[test]
fn all_methods_on_two_environments() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(dir.path(), 600);
    let out = run(&[
        "estimate", "--input", &input, "--response", "y", "--exposures", "x1,x2", "--env", "env", "--method", "all",
        "--format", "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = rows.as_array().unwrap();
    let pick = |m: &str, c: &str| {
        rows.iter()
            .find(|r| r["method"] == m && r["coefficient"] == c)
            .unwrap_or_else(|| panic!("{m} {c}"))["estimate"]
            .as_f64()
            .unwrap()
    };
    for c in ["x1", "x2"] {
        assert!((pick("gcd", c) - pick("cd", c)).abs() < 1e-10);
    }
    // q = 1 < p = 2: iv and tsls are skipped with a note
    assert!(!rows.iter().any(|r| r["method"] == "iv"));
    assert!(stderr(&out).contains("skipping iv"));
    assert!(stderr(&out).contains("under-identified"));
}

#[test]
fn iv_with_too_few_instruments_exits_3() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(dir.path(), 100);
    let out = run(&[
        "estimate", "--input", &input, "--response", "y", "--exposures", "x1,x2", "--env", "env", "--method", "iv",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("under-identified"), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
}

#[test]
fn noiseless_data_recovers_the_slope() {
    let dir = TempDir::new().unwrap();
    let mut s = String::from("y,x1,env\n");
    for i in 0..40 {
        let env = if i % 2 == 0 { "a" } else { "b" };
        let x = (i as f64 * 0.37).sin() * if env == "a" { 1.0 } else { 3.0 } + 0.1 * i as f64;
        s.push_str(&format!("{},{x},{env}\n", 2.0 * x));
    }
    let path = dir.path().join("exact.csv");
    std::fs::write(&path, s).unwrap();
    let out = run(&[
        "estimate",
        "--input",
        path.to_str().unwrap(),
        "--response",
        "y",
        "--exposures",
        "x1",
        "--env",
        "env",
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = rows.as_array().unwrap();
    assert!(rows.len() >= 4);
    for r in rows {
        assert!((r["estimate"].as_f64().unwrap() - 2.0).abs() < 1e-9, "{r}");
        assert!(r["se"].as_f64().unwrap() < 1e-6, "{r}");
    }
}

#[test]
fn json_and_tsv_agree() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(dir.path(), 300);
    let base = ["estimate", "--input", &input, "--response", "y", "--exposures", "x1,x2", "--env", "env"];
    let tsv = run(&[&base[..], &["--format", "tsv"]].concat());
    let json = run(&[&base[..], &["--format", "json"]].concat());
    assert!(tsv.status.success() && json.status.success());
    let rows = parse_tsv(&stdout(&tsv));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    let parsed = parsed.as_array().unwrap();
    assert_eq!(rows.len(), parsed.len());
    for (t, j) in rows.iter().zip(parsed) {
        assert_eq!(t.method, j["method"]);
        assert_eq!(t.coefficient, j["coefficient"]);
        for (v, key) in t.values.iter().zip(["estimate", "se", "ci_low", "ci_high", "p_value"]) {
            let full = j[key].as_f64().unwrap();
            assert!((v - full).abs() <= 1e-5 * full.abs().max(1e-300), "{key}: {v} vs {full}");
        }
    }
}

#[test]
fn out_file_and_center_flag() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(dir.path(), 200);
    let target = dir.path().join("report.tsv");
    let out = run(&[
        "estimate",
        "--input",
        &input,
        "--response",
        "y",
        "--exposures",
        "x1,x2",
        "--env",
        "env",
        "--method",
        "gcd",
        "--center-xy",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let rows = parse_tsv(&std::fs::read_to_string(&target).unwrap());
    assert_eq!(rows.len(), 2);
}

#[test]
fn bad_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,x1,env\n1,2,a\n3,NaN,b\n").unwrap();
    let out = run(&[
        "estimate",
        "--input",
        path.to_str().unwrap(),
        "--response",
        "y",
        "--exposures",
        "x1",
        "--env",
        "env",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    let missing = run(&["estimate", "--input", path.to_str().unwrap(), "--response", "y", "--exposures", "z", "--env", "env"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let args = ["simulate", "table1", "--seed", "7", "--N", "500"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let prefix = dir.path().join("t1");
    let c = run(&[&args[..], &["--out", prefix.to_str().unwrap()]].concat());
    assert!(c.status.success());
    assert_eq!(a.stdout, c.stdout);
    for ext in [".tsv", ".json", ".estimates.tsv"] {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        assert!(Path::new(&p).exists(), "{ext}");
    }
}

#[test]
fn simulate_fig2_lists_three_estimators() {
    let out = run(&["simulate", "fig2", "--N", "50", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let names: Vec<&str> = report["estimators"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["gcd", "cd_median", "ols"]);
}

#[test]
fn simulate_do_shows_gcd_bias() {
    let out = run(&["simulate", "do", "--N", "200", "--seed", "3", "--format", "json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let bias = |name: &str| {
        report["estimators"].as_array().unwrap().iter().find(|e| e["name"] == name).unwrap()["coefficients"][0]
            ["mean_bias"]
            .as_f64()
            .unwrap()
    };
    assert!(bias("iv").abs() < 0.05);
    assert!(bias("gcd") < -0.1);
}

#[test]
fn simulate_from_config_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("scenario.toml");
    std::fs::write(
        &path,
        "model = \"mean_var_shift\"\nn = 150\nr_shift = 2.0\nalpha_v = 2.0\nseed = 42\nN = 20\nestimators = [\"iv\", \"gcd\", \"hybrid\"]\n",
    )
    .unwrap();
    let out = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("hybrid"), "{text}");
}

#[test]
fn unknown_scenario_exits_2() {
    let out = run(&["simulate", "table9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fig2, table1, model1, model2, do"));
}

#[test]
fn scenarios_lists_all_names() {
    let out = run(&["scenarios"]);
    assert!(out.status.success());
    for name in ["fig2", "table1", "model1", "model2", "do"] {
        assert!(stdout(&out).contains(&format!("# {name}:")));
    }
}
