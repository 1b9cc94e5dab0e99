use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use quadsid_core::model::MotorSpeeds;
use quadsid_core::sysid::{FlightLog, LogRecord, StateSpaceModel};

fn quadsid(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadsid")).arg("--out").arg(out).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_config(dir: &Path) -> String {
    let p = dir.join("short.conf");
    std::fs::write(&p, "duration = 5\n").unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadsid(dir.path(), &["coeff", "thrust", "--T", "105.0588", "--omega", "2094.4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "2.3950e-05\n");

    let o = quadsid(dir.path(), &["coeff", "thrust", "--T", "1", "--omega", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: coeff:"), "{}", stderr(&o));

    let o = quadsid(dir.path(), &["coeff", "thrust", "--T", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sim_writes_log_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = quadsid(dir.path(), &["--config", &cfg, "sim", "--controller", "pid"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = FlightLog::parse_csv(&std::fs::read_to_string(dir.path().join("flight_log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 5001);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("run,channel,metric,value"));
    assert_eq!(metrics.lines().count(), 1 + 18);
}

#[test]
fn seeds_change_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        assert!(quadsid(&out, &["--config", &cfg, "--seed", seed, "sim"]).status.success());
        std::fs::read(out.join("flight_log.csv")).unwrap()
    };
    let a = run("7", "a");
    assert_eq!(a, run("7", "b"));
    assert_ne!(a, run("8", "c"));
}

#[test]
fn lqr_sim_without_gains_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadsid(dir.path(), &["sim", "--controller", "lqr"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing gains"), "{}", stderr(&o));
}

#[test]
fn constant_log_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let records = (0..3000)
        .map(|k| LogRecord { t: k as f64 * 1e-3, w: MotorSpeeds::uniform(640.0), y: [0.0; 6] })
        .collect();
    let path = dir.path().join("flat.csv");
    std::fs::write(&path, FlightLog::new(records).unwrap().to_csv()).unwrap();
    let log = path.to_string_lossy();

    let o = quadsid(dir.path(), &["coeff", "estimate", "--log", &log]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("excitation"), "{}", stderr(&o));

    let o = quadsid(dir.path(), &["ident", "--log", &log]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: ident:"), "{}", stderr(&o));
}

fn write_model(dir: &Path, name: &str, m: &StateSpaceModel) -> String {
    let p = dir.join(name);
    std::fs::write(&p, m.to_text()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn lqr_weights_and_stabilizability() {
    let dir = tempfile::tempdir().unwrap();
    let stable = StateSpaceModel::new(
        DMatrix::from_diagonal_element(2, 2, 0.5),
        DMatrix::identity(2, 1),
        DMatrix::identity(1, 2),
        DMatrix::zeros(1, 1),
        1e-3,
    )
    .unwrap();
    let path = write_model(dir.path(), "stable.txt", &stable);
    let o = quadsid(dir.path(), &["lqr", "--model", &path, "--Q", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("warning: Kf is zero"));

    // second state is unstable and the input cannot reach it
    let bad = StateSpaceModel::new(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DMatrix::zeros(1, 1),
        1e-3,
    )
    .unwrap();
    let path = write_model(dir.path(), "bad.txt", &bad);
    let o = quadsid(dir.path(), &["lqr", "--model", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: lqr:"), "{}", stderr(&o));
}

#[test]
fn compare_rejects_model_with_other_dt() {
    let dir = tempfile::tempdir().unwrap();
    let m = StateSpaceModel::new(
        DMatrix::from_diagonal_element(4, 4, 0.5),
        DMatrix::identity(4, 4),
        DMatrix::from_fn(6, 4, |i, j| if i % 4 == j { 1.0 } else { 0.0 }),
        DMatrix::zeros(6, 4),
        2e-3,
    )
    .unwrap();
    let path = write_model(dir.path(), "model.txt", &m);
    assert!(quadsid(dir.path(), &["lqr", "--model", &path]).status.success());
    let o = quadsid(dir.path(), &["compare"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error: blackbox run:") && stderr(&o).contains("dt"), "{}", stderr(&o));
}

#[test]
fn pid_gains_file_is_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadsid(dir.path(), &["pid"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("pid_gains.conf")).unwrap();
    assert_eq!(text.lines().count(), 16);
    let cfg = quadsid_core::config::Config::parse(&text).unwrap();
    assert_eq!(cfg, quadsid_core::config::Config::default());
}
