use std::path::PathBuf;
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn quasilie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quasilie")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[test]
fn scenario_list_names_every_scenario() {
    let out = quasilie(&["scenario", "list"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in quasilie_pipelines::scenarios::SCENARIOS {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn solve_abel_passes_and_writes_csv() {
    let cfg = config("gcc_family.json");
    let out = quasilie(&["--config", cfg.to_str().unwrap(), "solve-abel"]);
    assert_eq!(code(&out), 0);
    let report = json(&out.stdout);
    assert_eq!(report["pass"], true);
    assert!((report["values"]["k1"].as_f64().unwrap() - 0.5).abs() < 1e-10);

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("traj.csv");
    let out = quasilie(&[
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        csv_path.to_str().unwrap(),
        "solve-abel",
    ]);
    assert_eq!(code(&out), 0);
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["t", "pipeline", "direct"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert!(rows.len() > 100);
    for row in rows {
        let pipeline: f64 = row[1].parse().unwrap();
        let direct: f64 = row[2].parse().unwrap();
        assert!((pipeline - direct).abs() < 1e-5);
    }
    assert_eq!(json(&out.stderr)["pass"], true);
}

#[test]
fn non_chiellini_family_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("perturbed.json");
    let text = std::fs::read_to_string(config("gcc_family.json"))
        .unwrap()
        .replace("\"c\": \"0\"", "\"c\": \"0.2*sin(3*t)\"");
    std::fs::write(&path, text).unwrap();
    let out = quasilie(&["--config", path.to_str().unwrap(), "solve-abel"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not Chiellini-integrable"));
}

#[test]
fn malformed_config_reports_its_location() {
    let cfg = config("bad.json");
    let out = quasilie(&["--config", cfg.to_str().unwrap(), "zcc"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&quasilie(&["zcc"])), 2);
    assert_eq!(code(&quasilie(&["scenario", "run", "no-such-scenario"])), 2);
    assert_eq!(code(&quasilie(&["--config", "/nonexistent/config.json", "zcc"])), 2);
}

#[test]
fn verbs_on_sample_configs() {
    let cases = [
        ("sine_gordon_kink.json", "zcc"),
        ("sine_gordon_kink.json", "membership"),
        ("riccati_superpose.json", "superpose"),
        ("abel_scheme.json", "scheme-verify"),
        ("abel_transform.json", "transform"),
    ];
    for (file, verb) in cases {
        let cfg = config(file);
        let out = quasilie(&["--config", cfg.to_str().unwrap(), verb]);
        assert_eq!(code(&out), 0, "{verb} on {file}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(json(&out.stdout)["pass"], true, "{verb} on {file}");
    }
}

#[test]
fn scenario_output_is_deterministic() {
    let run = || quasilie(&["--seed", "11", "scenario", "run", "riccati-superposition"]);
    let (a, b) = (run(), run());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}
