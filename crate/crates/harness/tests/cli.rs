use std::path::Path;
use std::process::Command;

use tblab_harness::{ExperimentConfig, SuiteReport};

fn tblab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tblab"))
        .args(args)
        .env_remove("TBLAB_REDUCED_TRIALS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "[battery]\nfixtures = 4\natoms = 32\n";

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = tblab(&[
            "run",
            "--config",
            &cfg,
            "--suite",
            "identities,paraproduct",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "checks.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn empty_suite_list_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "suites = []\n");
    let out = dir.path().join("out");
    let o = tblab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let report =
        SuiteReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.checks().count(), 0);
    assert!(report.pass);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(v["config_hash"].as_str().is_some_and(|h| h.len() == 64));
}

#[test]
fn ledger_csv_has_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = tblab(&["run", "--suite", "ledger", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let cfg = ExperimentConfig::default();
    let two = tblab::fixtures::two_grid_on(&cfg.base_spec().unwrap(), &cfg.base_measure().unwrap())
        .unwrap();
    let pairs = two.index1().ids().filter(|q| q.level > 0).count()
        * two.index2().ids().filter(|r| r.level > 0).count();
    let mut rdr = csv::Reader::from_path(out.join("ledger_pairs.csv")).unwrap();
    assert_eq!(rdr.records().count(), pairs);
}

#[test]
fn report_reemission_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = tblab(&[
        "run",
        "--config",
        &cfg,
        "--suite",
        "layers",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let before = (
        std::fs::read(out.join("report.json")).unwrap(),
        std::fs::read(out.join("checks.csv")).unwrap(),
    );
    for _ in 0..2 {
        let o = tblab(&["report", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        assert_eq!(std::fs::read(out.join("report.json")).unwrap(), before.0);
        assert_eq!(std::fs::read(out.join("checks.csv")).unwrap(), before.1);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(
        tblab(&["run", "--suite", "paraproduct", "--out", out])
            .status
            .code(),
        Some(0)
    );
    let failing = write_config(dir.path(), "[matrix]\nslope_tolerance = 0.0\n");
    assert_eq!(
        tblab(&["run", "--config", &failing, "--suite", "matrix", "--out", out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        tblab(&["run", "--suite", "nope", "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        tblab(&["run", "--config", "/nonexistent/config.toml", "--out", out])
            .status
            .code(),
        Some(2)
    );
    let bad = write_config(dir.path(), "p = 0.5\n");
    assert_eq!(
        tblab(&["run", "--config", &bad, "--out", out])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gen_writes_fixture_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fixture");
    let o = tblab(&["gen", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "measure.json", "grid.json", "accretive.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let cfg = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(cfg.seed, 7);
    let mu = tblab::measure::AtomicMeasure::load(&out.join("measure.json")).unwrap();
    assert_eq!(mu, cfg.base_measure().unwrap());
}
