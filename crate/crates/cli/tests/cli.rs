use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hardstar_cli::artifact::read_provenance;
use hardstar_cli::config::RunConfig;

fn hardstar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hardstar"))
        .current_dir(dir)
        .env_remove("HARDSTAR_OUTPUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_passes_at_default_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hardstar(tmp.path(), &["verify", "--R", "0.05", "--output-dir", "v"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", stderr(&o));
    assert!(!stdout.contains("FAIL"));
    assert!(tmp.path().join("v/verify.json").exists());
}

#[test]
fn malformed_config_exits_2_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), "{\n  \"command\": \"build\",\n  \"star\": {\"radius\": 0.05,}\n}").unwrap();
    let o = hardstar(tmp.path(), &["--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"command":"build","star":{"radius":0.05,"grid":9}}"#).unwrap();
    let o = hardstar(tmp.path(), &["--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid"));
}

#[test]
fn subcommand_conflicting_with_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"command":"build","star":{"radius":0.05}}"#).unwrap();
    let o = hardstar(tmp.path(), &["modes", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_of_range_radius_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hardstar(tmp.path(), &["build", "--R", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hardstar(tmp.path(), &["build"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"command":"build","star":{"radius":0.1,"grid_n":257,"picard_max_iter":2},"build":{"solver":"picard"}}"#;
    fs::write(tmp.path().join("c.json"), text).unwrap();
    let o = hardstar(tmp.path(), &["--config", "c.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn identical_runs_are_byte_identical() {
    // same config, so the same output_dir, run from two working directories
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for tmp in &runs {
        let o = hardstar(
            tmp.path(),
            &["modes", "--R", "0.05", "--grid-n", "801", "--count", "3", "--emit-initial-data", "1", "--output-dir", "m"],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (a, b) = (runs[0].path().join("m"), runs[1].path().join("m"));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 7);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn every_artifact_carries_its_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hardstar(tmp.path(), &["build", "--R", "0.05", "--grid-n", "513", "--output-dir", "b"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let config = RunConfig::load(&tmp.path().join("b/config.json")).unwrap();
    for entry in fs::read_dir(tmp.path().join("b")).unwrap() {
        let path = entry.unwrap().path();
        let p = read_provenance(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(p.config_sha256, config.hash());
        assert_eq!(p.command, "build");
        assert_eq!(p.version, env!("CARGO_PKG_VERSION"));
    }
    // the emitted config reproduces the run
    let o = hardstar(tmp.path(), &["--config", "b/config.json"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn profile_csv_feeds_the_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hardstar(tmp.path(), &["build", "--R", "0.1", "--grid-n", "1025", "--output-dir", "b"]);
    assert_eq!(o.status.code(), Some(0));
    let o = hardstar(
        tmp.path(),
        &["variation-audit", "--profile", "b/profile.csv", "--count", "6", "--output-dir", "a"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a/audit.json")).unwrap()).unwrap();
    assert_eq!(doc["data"]["rows"].as_array().unwrap().len(), 6);
    assert!(doc["data"]["min_M_ddot"].as_f64().unwrap() > 0.0);
    let mdot = fs::read_to_string(tmp.path().join("a/mdot.csv")).unwrap();
    assert!(mdot.lines().nth(1).unwrap().starts_with("chi,r,mdot_000"));
}

#[test]
fn emitted_mode_evolves_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hardstar(
        tmp.path(),
        &["modes", "--R", "0.05", "--grid-n", "401", "--count", "1", "--emit-initial-data", "1", "--output-dir", "m"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = hardstar(
        tmp.path(),
        &[
            "evolve", "--R", "0.05", "--grid-n", "401", "--T", "2", "--snapshots", "2",
            "--initial-data", "file:m/initial_data_mode_1.csv", "--output-dir", "e",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["energy.csv", "energy.svg", "summary.json", "snapshot_000.csv", "snapshot_002.csv"] {
        assert!(tmp.path().join("e").join(f).exists(), "{f}");
    }
    let energy = fs::read_to_string(tmp.path().join("e/energy.csv")).unwrap();
    assert!(energy.lines().nth(1).unwrap().starts_with("phi,E,E1,E2,constraint_residual"));

    // a different grid is rejected as a configuration error
    let o = hardstar(
        tmp.path(),
        &["evolve", "--R", "0.05", "--grid-n", "801", "--T", "1", "--initial-data", "file:m/initial_data_mode_1.csv"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = hardstar(tmp.path(), &["evolve", "--R", "0.05", "--grid-n", "401", "--initial-data", "pulse"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_root_variable_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hardstar"))
        .current_dir(tmp.path())
        .env("HARDSTAR_OUTPUT_ROOT", tmp.path().join("root"))
        .args(["family", "--radii", "0.01,0.02", "--grid-n", "129", "--output-dir", "f"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("root/f/family.csv").exists());
}
