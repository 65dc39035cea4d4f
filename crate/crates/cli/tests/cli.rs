use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polnav_core::io::write_pgm16;
use polnav_core::polarimetry::{MosaicFrame, MosaicPattern};
use polnav_core::sky::SkyTruth;

fn polnav(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polnav"))
        .args(args)
        .current_dir(dir)
        .env_remove("POLNAV_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn parse_vector(out: &str) -> [f64; 3] {
    let line = out
        .lines()
        .find(|l| l.starts_with("solar_vector_body:"))
        .expect("vector line");
    let v: Vec<f64> = line
        .split_whitespace()
        .skip(1)
        .map(|t| t.parse().unwrap())
        .collect();
    [v[0], v[1], v[2]]
}

#[test]
fn extract_recovers_synthetic_sun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[psns]\nintensity_noise = 0.0\n[scenario]\nyaw_deg = 40.0\npitch_deg = 5.0\n",
    );
    let o = polnav(
        &[
            "synth",
            "--config",
            &cfg,
            "--out-dir",
            "o",
            "--azimuth-deg",
            "120",
            "--elevation-deg",
            "35",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth: SkyTruth =
        toml::from_str(&fs::read_to_string(tmp.path().join("o/sky.toml")).unwrap()).unwrap();

    let o = polnav(
        &["extract", "o/sky.pgm", "--superpixels", "o/sp.csv"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = parse_vector(&stdout(&o));
    let s = truth.sun_body;
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let cos = ((v[0] * s[0] + v[1] * s[1] + v[2] * s[2]) / norm)
        .abs()
        .min(1.0);
    assert!(
        cos.acos().to_degrees() < 0.01,
        "error {}°",
        cos.acos().to_degrees()
    );
    let header = fs::read_to_string(tmp.path().join("o/sp.csv")).unwrap();
    assert!(header.starts_with("x,y,S0,S1,S2,DOP,AOP_deg\n"));
}

#[test]
fn extract_uniform_image_is_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    write_pgm16(
        &tmp.path().join("flat.pgm"),
        &MosaicFrame::uniform(64, 64, 20000.0, MosaicPattern::default()),
    )
    .unwrap();
    let o = polnav(&["extract", "flat.pgm"], tmp.path());
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn extract_odd_image_is_bad_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    write_pgm16(
        &tmp.path().join("odd.pgm"),
        &MosaicFrame::uniform(63, 64, 20000.0, MosaicPattern::default()),
    )
    .unwrap();
    let o = polnav(&["extract", "odd.pgm"], tmp.path());
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn run_writes_csv_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[scenario]\nduration_s = 30.0\n");
    let a = polnav(
        &["run", "--config", &cfg, "--seed", "7", "--out-dir", "a"],
        tmp.path(),
    );
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = polnav(
        &["run", "--config", &cfg, "--seed", "7", "--out-dir", "b"],
        tmp.path(),
    );
    assert!(b.status.success());
    let csv_a = fs::read(tmp.path().join("a/run.csv")).unwrap();
    assert_eq!(csv_a, fs::read(tmp.path().join("b/run.csv")).unwrap());
    assert_eq!(
        fs::read(tmp.path().join("a/summary.txt")).unwrap(),
        fs::read(tmp.path().join("b/summary.txt")).unwrap()
    );
    let text = String::from_utf8(csv_a).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, polnav_core::sim::csv_header().join(","));
    assert!(header.starts_with("time,truth_lat_deg,"));
    assert!(header.ends_with(",psns_sign"));
    assert_eq!(text.lines().count(), 1 + 301);

    let c = polnav(
        &["run", "--config", &cfg, "--seed", "8", "--out-dir", "c"],
        tmp.path(),
    );
    assert!(c.status.success());
    assert_ne!(
        fs::read(tmp.path().join("a/run.csv")).unwrap(),
        fs::read(tmp.path().join("c/run.csv")).unwrap()
    );
}

#[test]
fn default_run_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polnav(&["run"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(tmp.path().join("out/run.csv")).unwrap();
    assert!(text.starts_with("time,truth_lat_deg,truth_lon_deg,truth_h_m,"));
    assert_eq!(text.lines().count(), 1 + 3001);
}

#[test]
fn batch_writes_thirty_rows_and_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[scenario]\nduration_s = 20.0\n");
    let a = polnav(
        &["batch", "--config", &cfg, "--runs", "30", "--out-dir", "a"],
        tmp.path(),
    );
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = polnav(
        &["batch", "--config", &cfg, "--runs", "30", "--out-dir", "b"],
        tmp.path(),
    );
    assert!(b.status.success());
    let text = fs::read_to_string(tmp.path().join("a/batch_stats.txt")).unwrap();
    assert_eq!(
        text,
        fs::read_to_string(tmp.path().join("b/batch_stats.txt")).unwrap()
    );
    let (rows, aggregate) = text.split_once("\n\n").unwrap();
    let rows: Vec<&str> = rows.lines().collect();
    assert!(rows[0].starts_with("seed,"));
    assert_eq!(rows.len(), 31);
    assert!(aggregate.starts_with("statistic,"));
    assert!(aggregate.lines().any(|l| l.starts_with("median_abs,")));
}

#[test]
fn validate_only_reports_key_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), "seed = 4\n");
    let o = polnav(&["run", "--config", &good, "--validate-only"], tmp.path());
    assert!(o.status.success());
    assert!(!tmp.path().join("out").exists());

    let bad = write_config(
        tmp.path(),
        "[gnss]\nrate_hz = 1.0\nhorizontal_position_m = -1.0\n",
    );
    let o = polnav(&["run", "--config", &bad, "--validate-only"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("gnss.horizontal_position_m") && err.contains("line 3"),
        "{err}"
    );

    let unknown = write_config(tmp.path(), "[imu]\nspeed = 3\n");
    let o = polnav(
        &["batch", "--config", &unknown, "--validate-only"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_polnav"))
        .args(["synth", "--name", "env"])
        .current_dir(tmp.path())
        .env("POLNAV_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("from_env/env.pgm").exists());
    assert!(tmp.path().join("from_env/env.toml").exists());
}
