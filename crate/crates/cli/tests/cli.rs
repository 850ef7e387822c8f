use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causal_sde::{builtin, simulate, Grid, PathEnsemble};
use causal_sde_cli::config;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causal-sde"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).arg("--out").arg(dir).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn chem_signature_has_four_edges() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"system":{"kind":"builtin","name":"chem"}}"#);
    let out = run(&["signature", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let edges: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(edges, ["X -> X", "X -> Y", "Y -> X", "Y -> Y"]);
    let dot = fs::read_to_string(dir.path().join("signature.dot")).unwrap();
    assert!(dot.contains("digraph"));
}

#[test]
fn two_signatures_demo_is_consistent() {
    let dir = TempDir::new().unwrap();
    let out = run(&["demo", "two-signatures", "--seed", "5"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["verdict"], "consistent");
    assert_eq!(report["hypothesis"], "satisfied");
    for key in ["test", "statistic", "p_value", "corrected_alpha", "verdict"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(dir.path().join("demo-two-signatures.json").exists());
}

#[test]
fn other_demos_run() {
    let dir = TempDir::new().unwrap();
    for name in ["chem", "ou", "ito-counterexample"] {
        let out = run(&["demo", name, "--paths", "200"], dir.path());
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
        match name {
            "chem" => assert_eq!(v["commutation"]["commutes"], true),
            "ou" => assert_eq!(v["commutation"]["commutes"], true),
            _ => {
                assert!(v["max_dist_closed_form"].as_f64().unwrap() <= 1e-12);
                assert_eq!(v["dist_constant_at_t0"], 1.0);
            }
        }
    }
}

#[test]
fn zero_coefficient_paths_are_constant() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "z.json",
        r#"{"system":{"kind":"expression","coefficients":[["0","0"],["0","0"]]},
            "driver":{"kind":"time_and_brownian","dim":1},
            "initial":[1.5,-2.0],
            "grid":{"horizon":1.0,"delta":0.25},"n_paths":3,"seed":1}"#,
    );
    let out = run(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path,t,x1,x2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 5);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(&cols[2..], ["1.5", "-2"]);
    }
}

#[test]
fn simulate_csv_matches_library_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.json",
        r#"{"system":{"kind":"builtin","name":"jump-diffusion"},"grid":{"horizon":0.5,"delta":0.05},"n_paths":20,"seed":42}"#,
    );
    let out = run(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0);
    let file = fs::File::open(dir.path().join("paths.csv")).unwrap();
    let read = PathEnsemble::<f64>::read_csv(file, 42).unwrap();
    let direct = simulate(&builtin::jump_diffusion::<f64>(), &Grid::new(0.5, 0.05).unwrap(), 20, 42).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(read.values()), bits(direct.values()));
}

#[test]
fn thread_count_does_not_change_output() {
    let cfg = configs_dir().join("chem.json");
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dir = TempDir::new().unwrap();
        let out = bin()
            .args(["simulate", "--config", cfg, "--paths", "40"])
            .arg("--out")
            .arg(dir.path())
            .env("CAUSAL_SDE_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        outputs.push(fs::read(dir.path().join("paths.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let dir = TempDir::new().unwrap();
    let out = bin()
        .args(["simulate", "--config", cfg])
        .arg("--out")
        .arg(dir.path())
        .env("CAUSAL_SDE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn identify_report_is_deterministic() {
    let cfg = configs_dir().join("ou-identify.json");
    let cfg = cfg.to_str().unwrap();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = TempDir::new().unwrap();
        let out = run(&["check-identify", "--config", cfg], dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(fs::read(dir.path().join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let v: Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(v["verdict"], "consistent");
}

#[test]
fn differing_postintervention_laws_exit_with_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "d.json",
        r#"{"system":{"kind":"builtin","name":"two-signatures"},
            "system_b":{"system":{"kind":"builtin","name":"gbm"}},
            "intervention":{"target":"x2","value":1.0}}"#,
    );
    let out = run(&["check-identify", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 2, "dimension mismatch is a runtime error");

    let cfg = write_config(
        dir.path(),
        "s.json",
        r#"{"system":{"kind":"ou","reversion":[[-1.0,0.5],[0.3,-2.0]],"sigma":[[1.0,0.0],[0.5,1.0]]},
            "system_b":{"system":{"kind":"ou","reversion":[[-1.0,0.5],[0.3,-2.0]],"sigma":[[1.0,0.0],[0.5,2.0]]}},
            "initial":[1.0,1.0],"grid":{"horizon":1.0,"delta":0.01},"n_paths":2000,
            "intervention":{"target":"x1","value":2.0},"test":{"n_permutations":100}}"#,
    );
    let out = run(&["check-identify", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["verdict"], "inconsistent");
}

#[test]
fn commutation_check_reports_and_fails_on_negative_tolerance() {
    let dir = TempDir::new().unwrap();
    let chem = configs_dir().join("chem.json");
    let out = run(&["check-commute", "--config", chem.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["max_abs_diff"].as_f64().unwrap() <= 1e-12);

    let cfg = write_config(
        dir.path(),
        "t.json",
        r#"{"system":{"kind":"builtin","name":"ou"},"test":{"tol":-1.0},"n_paths":5}"#,
    );
    let out = run(&["check-commute", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cases = [
        "not json",
        r#"{"system":{"kind":"builtin","name":"nope"}}"#,
        r#"{"system":{"kind":"builtin","name":"ou"},"surprise":1}"#,
        r#"{"system":{"kind":"builtin","name":"ou"},"intervention":{"target":"x9","value":1}}"#,
        r#"{"system":{"kind":"builtin","name":"ou"},"intervention":{"target":"Z1","value":1}}"#,
        r#"{"system":{"kind":"builtin","name":"ou"},"intervention":{"target":"x1","value":"x1 +"}}"#,
        r#"{"system":{"kind":"builtin","name":"ou"},"grid":{"horizon":1.0,"delta":0.3}}"#,
        r#"{"system":{"kind":"expression","coefficients":[["x1"]]}}"#,
    ];
    for (k, body) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{k}.json"), body);
        let out = run(&["check-commute", "--config", &cfg], dir.path());
        assert_eq!(code(&out), 1, "case {k}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(code(&run(&["simulate"], dir.path())), 1);
    assert_eq!(code(&run(&["demo", "unknown"], dir.path())), 1);
    assert_eq!(code(&run(&["no-such-command"], dir.path())), 1);
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "r.json",
        r#"{"system":{"kind":"expression","coefficients":[["log(x1 - 5)"]]},
            "driver":{"kind":"brownian","dim":1},"initial":[1.0]}"#,
    );
    let out = run(&["generator", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn intervene_with_expression_value_lifts_paths() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "i.json",
        r#"{"system":{"kind":"builtin","name":"ou"},"grid":{"horizon":0.2,"delta":0.1},"n_paths":2,
            "intervention":{"target":"x2","value":"2 * x1"}}"#,
    );
    let out = run(&["intervene", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["after"]["p"], 1);
    assert_eq!(v["driver_unchanged"], true);
    let csv = fs::read_to_string(dir.path().join("intervened_paths.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let c: Vec<f64> = row.split(',').skip(2).map(|s| s.parse().unwrap()).collect();
        assert_eq!(c[1], 2.0 * c[0]);
    }
}

#[test]
fn generator_forms_agree_in_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "j.json",
        r#"{"system":{"kind":"builtin","name":"jump-diffusion"},"generator":{"points":[[0.1,0.2],[1.0,-1.0]]}}"#,
    );
    let out = run(&["generator", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    for p in points {
        for f in p["values"].as_array().unwrap() {
            let d = f["d_based"].as_f64().unwrap();
            let e = f["e_based"].as_f64().unwrap();
            assert!((d - e).abs() <= 1e-9);
        }
    }
}

#[test]
fn convergence_writes_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.json",
        r#"{"system":{"kind":"builtin","name":"gbm"},"grid":{"horizon":1.0,"delta":0.0078125},"n_paths":300}"#,
    );
    let out = run(&["convergence", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,rms_sup_error,used_paths,exploded_paths"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn shipped_configs_resolve() {
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = config::load(&path).unwrap();
        config::resolve(&cfg, &config::Overrides::default()).unwrap();
    }
}

#[test]
fn reaction_network_config_simulates() {
    let dir = TempDir::new().unwrap();
    let cfg = configs_dir().join("reaction-network.json");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert!(csv.starts_with("path,t,X,Y\n"));
}

#[test]
fn schema_lists_every_config_field() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/config.schema.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let mut keys: Vec<&str> = schema["properties"].as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut expected = vec![
        "convergence", "driver", "generator", "grid", "initial", "intervention", "n_paths", "seed", "system",
        "system_b", "test",
    ];
    expected.sort_unstable();
    assert_eq!(keys, expected);
    let builtins: Vec<&str> = schema["$defs"]["system"]["oneOf"][0]["properties"]["name"]["enum"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(builtins, causal_sde::BUILTIN_NAMES);
}
