use std::path::Path;
use std::process::{Command, Output};

fn shelldiss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shelldiss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
experiment = "hm1-scaling"
paths = 2
horizon = 0.01
steps_per_stage = 4
shells = [1, 2]
"#;

#[test]
fn run_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = shelldiss(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "manifest.json",
        "summary.json",
        "config.toml",
        "ledger_shell1_path0.csv",
        "ledger_shell2_path1.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let ledger = std::fs::read_to_string(out.join("ledger_shell1_path0.csv")).unwrap();
    assert!(ledger.starts_with("t,l2sq,h1sq,hm1sq,low_hm1sq,diss_int,stage\n"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["path_seeds"].as_array().unwrap().len(), 2);

    let r = shelldiss(&["report", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["ledgers"].as_array().unwrap().len(), 4);
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert!(
            shelldiss(&["run", "--config", &cfg, "--out", d.to_str().unwrap()])
                .status
                .success()
        );
    }
    for f in ["manifest.json", "summary.json", "ledger_shell2_path0.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn tampered_output_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(
        shelldiss(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    std::fs::write(
        out.join("ledger_shell1_path0.csv"),
        "t,l2sq,h1sq,hm1sq,low_hm1sq,diss_int,stage\n",
    )
    .unwrap();
    let r = shelldiss(&["report", "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("hash mismatch"));
}

#[test]
fn validate_reports_desk_and_asymptotic_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let desk = shelldiss(&["validate", "--stages", "4"]);
    let v: serde_json::Value = serde_json::from_slice(&desk.stdout).unwrap();
    assert_eq!(v["validation"]["q_max"], 3);
    assert_eq!(
        desk.status.success(),
        v["validation"]["all_pass"].as_bool().unwrap()
    );

    let cfg = write_config(dir.path(), "experiment = \"schedule-check\"\n[schedule]\nmode = \"asymptotic\"\ndim = 3\nstages = 6\nnu = [1e-3]\n");
    let asymptotic = shelldiss(&["validate", "--config", &cfg]);
    let v: serde_json::Value = serde_json::from_slice(&asymptotic.stdout).unwrap();
    let checks = v["validation"]["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 5 * 6);
    assert!(checks
        .iter()
        .filter(|c| c["condition"].as_str().unwrap().starts_with("eps-size"))
        .all(|c| c["pass"] == true));
}

#[test]
fn sweep_writes_runs_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = shelldiss(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "nu",
        "--values",
        "1e-2,1e-3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert!(s["terminal_slope"].is_number());
    assert!(out.join("run1/manifest.json").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"hm1-scaling\"\nunknown_key = 3\n",
    );
    let o = shelldiss(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = shelldiss(&[
        "sweep",
        "--out",
        "x",
        "--axis",
        "temperature",
        "--values",
        "1",
    ]);
    assert!(!o.status.success());
}
