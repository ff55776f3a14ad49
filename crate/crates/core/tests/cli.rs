//! Runs the `hho` binary.

use std::process::{Command, Output};

use hho::harness::read_sweep_csv;
use hho::mesh::Mesh;
use hho::system::Solution;

fn hho(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hho"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn zero_subdivisions_is_a_usage_error() {
    let out = hho(&["solve", "--k", "1", "--n", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hho(&["solve", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hho(&["solve", "--k", "6"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_reports_machine_precision_residuals() {
    let out = hho(&["verify", "--k", "2", "--n", "8"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let summary = text(&out.stderr);
    let line = summary.lines().find(|l| l.starts_with("max normalized")).unwrap();
    let values: Vec<f64> = line
        .split(' ')
        .filter_map(|w| w.split_once('=').map(|(_, v)| v.parse().unwrap()))
        .collect();
    assert_eq!(values.len(), 2);
    assert!(values.iter().all(|&v| v <= 1e-10), "{line}");
}

#[test]
fn converge_writes_sweep_with_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = hho(&[
        "converge",
        "--k",
        "1",
        "--meshes",
        "4,8,16,32",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let sweep = read_sweep_csv::<f64, _>(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(sweep.records.len(), 4);
    let s = sweep.slopes[0].en_uh;
    assert!((s - 2.0).abs() < 0.3, "{s}");
}

#[test]
fn solve_output_is_deterministic_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let base = ["solve", "--k", "2", "--n", "6", "--lambda", "10"];
    let run = |p: &std::path::Path, threads: &str| {
        let mut args = base.to_vec();
        args.extend(["--threads", threads, "--out", p.to_str().unwrap()]);
        let out = hho(&args);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        text(&out.stdout)
    };
    let sa = run(&a, "1");
    let sb = run(&b, "4");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(sa, sb);
    assert!(sa.contains("err_en_uh="));
    let sol = Solution::<f64>::read_csv(std::fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(sol.k, 2);
    assert_eq!(sol.cells.len(), 72);
}

#[test]
fn command_flag_and_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("square.mesh");
    std::fs::write(&mesh, Mesh::<f64>::structured_triangular(3).unwrap().to_text()).unwrap();
    let out = hho(&[
        "--command",
        "verify",
        "--k",
        "1",
        "--mesh",
        mesh.to_str().unwrap(),
        "--case",
        "polynomial",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).starts_with("kind,id,raw,normalized"));
}

#[test]
fn unreadable_mesh_is_a_numerical_failure() {
    let out = hho(&["solve", "--mesh", "/nonexistent/mesh.txt"]);
    assert_eq!(out.status.code(), Some(1));
}
