mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maxres::mip::parse_mps;
use tempfile::TempDir;

use common::*;

fn maxres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxres"))
        .args(args)
        .env_remove("MAXRES_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_net(dir: &Path) -> PathBuf {
    let path = dir.join("net.json");
    std::fs::write(&path, linear_two_class().to_json_string()).unwrap();
    path
}

fn write_input(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("input.txt");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn eval_prints_class() {
    let dir = TempDir::new().unwrap();
    let net = write_net(dir.path());
    let input = write_input(dir.path(), "[1.0, 0.0]");
    let out = maxres(&["eval", "--net", net.to_str().unwrap(), "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("class 1"), "{}", stdout(&out));
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let net = write_net(dir.path());
    let input = write_input(dir.path(), "1 0");
    let base = ["verify", "--net", net.to_str().unwrap(), "--input", input.to_str().unwrap(), "--class", "1", "--k", "1"];

    let mut args = base.to_vec();
    args.extend(["--delta", "0.5"]);
    let out = maxres(&args);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("ROBUST"));

    let json = dir.path().join("verify.json");
    let mut args = base.to_vec();
    args.extend(["--delta", "1", "--json", json.to_str().unwrap()]);
    let out = maxres(&args);
    assert_eq!(out.status.code(), Some(10));
    assert!(stdout(&out).contains("VIOLATED"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["verdict"], "violated");
}

#[test]
fn phi_reports_value_and_infeasibility() {
    let dir = TempDir::new().unwrap();
    let net = write_net(dir.path());
    let net = net.to_str().unwrap();
    let out = maxres(&["phi", "--net", net, "--class", "1", "--alpha", "2.718281828", "--k", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("phi 1"), "{}", stdout(&out));

    let out = maxres(&["phi", "--net", net, "--class", "1", "--alpha", "3", "--k", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("infeasible at alpha 3"));
}

#[test]
fn export_round_trips_through_mps_reader() {
    let dir = TempDir::new().unwrap();
    let net = write_net(dir.path());
    let mps = dir.path().join("phi.mps");
    let out = maxres(&[
        "export",
        "--net",
        net.to_str().unwrap(),
        "--query",
        "phi:m=1,alpha=1.5,k=1",
        "--out",
        mps.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let model = parse_mps(&std::fs::read_to_string(mps).unwrap()).unwrap();
    assert!(model.num_vars() > 0);
}

#[test]
fn bounds_written_to_file() {
    let dir = TempDir::new().unwrap();
    let net = write_net(dir.path());
    let path = dir.path().join("bounds.txt");
    let out = maxres(&["bounds", "--net", net.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    // Two inputs, two scores and two probabilities.
    assert_eq!(rows.len(), 6, "{text}");
    assert!(rows[2].starts_with("1 1 0 1 "), "{text}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let net = write_net(dir.path());
    let net = net.to_str().unwrap();
    // Two classes admit only k = 1.
    let out = maxres(&["phi", "--net", net, "--class", "1", "--k", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = maxres(&["export", "--net", net, "--query", "nonsense", "--out", "x.mps"]);
    assert_eq!(out.status.code(), Some(2));
    let out = maxres(&["phi", "--class", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_network_is_an_error() {
    let out = maxres(&["xi", "--net", "/nonexistent/net.json"]);
    assert_eq!(out.status.code(), Some(1));
}
