use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_graphmfg"));
    cmd.env_remove("GRAPHMFG_OUT");
    cmd
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn baseline_config() -> PathBuf {
    configs().join("c4_quadratic.json")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_NASH: &str = r#"{
  "graph": { "n": 4, "edges": [[1, 2, 1], [2, 3, 1], [3, 4, 1], [4, 1, 1]] },
  "model": { "family": "quadratic", "cF": 1, "cT": 1 },
  "points": [{ "t": 0, "mu": [0.4, 0.3, 0.2, 0.1] }],
  "suites": ["mfg", "nash"],
  "options": { "seed": 5, "nash": { "paths": 2000, "random_directions": 1, "dump_paths": 1 } }
}"#;

#[test]
fn list_generators_shows_the_torus_sweep() {
    let out = bin().arg("list-generators").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["path", "cycle", "complete", "torus"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{text}");
    }
    assert!(text.contains("omega = 256"), "{text}");
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let out = bin().arg("validate").arg(&path).output().unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
            assert!(String::from_utf8_lossy(&out.stdout).starts_with("OK"));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn malformed_edge_weight_names_the_edge() {
    let dir = tempfile::tempdir().unwrap();
    for weight in ["-1.0", "\"heavy\"", "0"] {
        let text = format!(
            "{{\n  \"graph\": {{\n    \"n\": 3,\n    \"edges\": [[1, 2, 1.0], [2, 3, {weight}]]\n  }},\n  \"model\": {{ \"family\": \"quadratic\" }},\n  \"points\": [{{ \"mu\": [0.3, 0.3, 0.4] }}]\n}}\n"
        );
        let cfg = write_config(dir.path(), "bad.json", &text);
        let out = bin().arg("validate").arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(2));
        let err = stderr(&out);
        assert!(err.contains("edge #2 (2, 3)"), "{err}");
        assert!(err.contains("bad.json:5:"), "{err}");
    }
}

#[test]
fn config_errors_are_line_anchored() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("{\n  \"graph\": { \"generator\": \"cycle\", \"params\": { \"n\": 4 } },\n  \"model\": { \"family\": \"quadratic\", \"cf\": 1 },\n  \"points\": []\n}", ":3:", "cf"),
        (
            "{\n  \"graph\": { \"generator\": \"cycle\", \"params\": { \"n\": 3 } },\n  \"model\": { \"family\": \"quadratic\" },\n  \"points\": [\n    { \"mu\": [0.5, 0.6, 0.1] }\n  ]\n}",
            ":5:",
            "point 1",
        ),
        ("{\n  \"graph\": { \"generator\": \"moebius\", \"params\": { \"n\": 4 } },\n  \"model\": { \"family\": \"quadratic\" },\n  \"points\": []\n}", ":2:", "moebius"),
        ("{\n  \"graph\": { \"generator\": \"cycle\", \"params\": { \"n\": 4 } },\n  \"model\": { \"family\": \"power\" },\n  \"points\": []\n}", ":3:", "p0"),
        ("{ \"graph\": 1,", ":1:", "graph"),
    ];
    for (text, anchor, word) in cases {
        let cfg = write_config(dir.path(), "c.json", text);
        let out = bin().arg("validate").arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{text}");
        let err = stderr(&out);
        assert!(err.contains(anchor) && err.contains(word), "{err}");
    }
}

#[test]
fn nash_without_a_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_NASH.replace("\"seed\": 5, ", "");
    let cfg = write_config(dir.path(), "c.json", &text);
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"));
    // Not needed when nash is filtered out.
    let out = bin().args(["validate"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("run").arg(&cfg).args(["--suite", "interiority", "--out"]).arg(dir.path().join("o")).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn hamiltonian_suites_reject_the_extended_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("c4_extended.json");
    let out = bin().arg("run").arg(&cfg).args(["--suite", "hjb", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("beta"));
}

#[test]
fn suite_filter_and_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("run")
        .arg(baseline_config())
        .args(["--suite", "interiority", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let mut files: Vec<String> =
        fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, [
        "interiority.json",
        "interiority_trajectory_1.csv",
        "interiority_trajectory_2.csv",
        "metadata.json",
        "summary.json"
    ]);
    let report = read_json(&out_dir.join("interiority.json"));
    let p = &report["report"]["points"][0];
    assert!(p["min_profile"].is_array() && p["fitted_c"].is_number() && p["fitted_r"].is_number());
    let csv = fs::read_to_string(out_dir.join("interiority_trajectory_1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,rho_1,rho_2,rho_3,rho_4"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 5);
    assert_eq!(first[1], "4.0000000000000002e-1");
    assert_eq!(first[1].parse::<f64>().unwrap(), 0.4);
    assert_eq!(csv.lines().count(), 2002);
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["suites"].as_array().unwrap().len(), 1);
    let meta = read_json(&out_dir.join("metadata.json"));
    assert!(meta["started_unix_ms"].as_u64().unwrap() <= meta["finished_unix_ms"].as_u64().unwrap());
}

#[test]
fn baseline_mfg_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("run").arg(baseline_config()).args(["--suite", "mfg", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = read_json(&dir.path().join("summary.json"));
    let checks = summary["suites"][0]["checks"].as_array().unwrap();
    let residual = checks.iter().find(|c| c["name"] == "point 1: residual").unwrap();
    assert!(residual["value"].as_f64().unwrap() < 1e-6);
    assert_eq!(residual["tolerance"], 1e-6);
    let csv = fs::read_to_string(dir.path().join("mfg_solution_1.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("s,phi_1,phi_2,phi_3,phi_4,rho_1,rho_2,rho_3,rho_4"));
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "nash.json", SMALL_NASH);
    let run = |jobs: &str, out: &Path| {
        let o = bin().arg("run").arg(&cfg).args(["--jobs", jobs, "--out"]).arg(out).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run("1", &a);
    run("3", &b);
    let mut compared = 0;
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "metadata.json" {
            continue;
        }
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        compared += 1;
    }
    assert!(compared >= 5);
    let nash = read_json(&a.join("nash.json"));
    let p = &nash["report"]["points"][0];
    for key in ["admissible", "violations", "equality_gap", "deviation_gaps", "mc"] {
        assert!(p.get(key).is_some(), "{key}");
    }
    let path = fs::read_to_string(a.join("nash_path_1_1.csv")).unwrap();
    assert!(path.starts_with("t_jump,vertex\n0.0000000000000000e0,1\n"), "{path}");
}

#[test]
fn output_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let out = bin()
        .env("GRAPHMFG_OUT", &env_out)
        .arg("run")
        .arg(baseline_config())
        .args(["--suite", "interiority"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(env_out.join("summary.json").exists());
    // The flag wins over the environment.
    let flag_out = dir.path().join("from_flag");
    let out = bin()
        .env("GRAPHMFG_OUT", &env_out)
        .arg("run")
        .arg(baseline_config())
        .args(["--suite", "interiority", "--out"])
        .arg(&flag_out)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_out.join("summary.json").exists());
}

#[test]
fn failed_assertions_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
  "graph": { "generator": "cycle", "params": { "n": 4 } },
  "model": { "family": "quadratic" },
  "points": [{ "mu": [0.4, 0.3, 0.2, 0.1] }],
  "suites": ["mfg"],
  "options": { "mfg": { "residual_tol": 1e-30 } }
}"#;
    let cfg = write_config(dir.path(), "strict.json", text);
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let summary = read_json(&dir.path().join("o/summary.json"));
    assert_eq!(summary["passed"], false);
    assert_eq!(summary["suites"][0]["status"], "fail");
}
