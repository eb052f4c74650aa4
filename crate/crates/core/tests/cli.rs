use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use safe_nnls::io;
use safe_nnls::report::{read_batch_checkpoints_csv, read_report, RunReport};
use safe_nnls::repro::small_example;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safe-nnls"))
        .args(args)
        .output()
        .expect("spawn safe-nnls")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the five-column worked example as `A.csv` and `b.csv`.
fn small_inputs(dir: &TempDir) -> (PathBuf, PathBuf) {
    let (a, b) = small_example();
    let ap = dir.path().join("A.csv");
    let bp = dir.path().join("b.csv");
    io::write_matrix(&ap, &a).unwrap();
    io::write_matrix(&bp, &DMatrix::from_column_slice(b.len(), 1, b.as_slice())).unwrap();
    (ap, bp)
}

#[test]
fn certify_small_example_reports_unique() {
    let dir = TempDir::new().unwrap();
    let (a, b) = small_inputs(&dir);
    let rep = dir.path().join("r.json");
    let out = run(&[
        "certify",
        "--matrix",
        s(&a),
        "--rhs",
        s(&b),
        "--max-iters",
        "400",
        "--report",
        s(&rep),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: RunReport = read_report(&rep).unwrap();
    assert!(r.certification.unique);
    assert_eq!(r.eliminated, vec![1, 3]);
    assert_eq!(r.shape, (3, 5));
    assert!(r.safe_certified_at.is_some_and(|k| k <= 400));
}

#[test]
fn certify_without_enough_iterations_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let (a, b) = small_inputs(&dir);
    let out = run(&[
        "certify",
        "--matrix",
        s(&a),
        "--rhs",
        s(&b),
        "--max-iters",
        "2",
    ]);
    assert_eq!(code(&out), 2);
    // the JSON report goes to stdout without --report
    let r: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!r.certification.unique);
}

#[test]
fn screen_at_a_given_point() {
    let dir = TempDir::new().unwrap();
    let (a, b) = small_inputs(&dir);
    let x = dir.path().join("x.csv");
    let anchor = dir.path().join("nu.csv");
    std::fs::write(&x, "0,0,0.9282,0,0.5409\n").unwrap();
    std::fs::write(&anchor, "0.56,0.34,0.1\n").unwrap();
    let out = run(&[
        "screen",
        "--matrix",
        s(&a),
        "--rhs",
        s(&b),
        "--x-hat",
        s(&x),
        "--nu-strict",
        s(&anchor),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["eliminated"], serde_json::json!([1, 3]));
    assert_eq!(v["lower_bounds"].as_array().unwrap().len(), 5);
    assert!((v["gap"].as_f64().unwrap() - 0.006657).abs() < 1e-6);
}

#[test]
fn generate_then_solve_roundtrip_through_matrix_market() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("A.mtx");
    let b = dir.path().join("b.csv");
    let gen = run(&[
        "generate",
        "--m",
        "12",
        "--n",
        "8",
        "--k",
        "1",
        "--seed",
        "3",
        "--matrix-out",
        s(&a),
        "--rhs-out",
        s(&b),
    ]);
    assert_eq!(code(&gen), 0);
    let am = io::read_matrix(&a).unwrap();
    assert_eq!(am.shape(), (12, 8));
    let exact = dir.path().join("x_as.csv");
    let iter = dir.path().join("x_pgd.csv");
    assert_eq!(
        code(&run(&[
            "solve",
            "--matrix",
            s(&a),
            "--rhs",
            s(&b),
            "--solver",
            "active-set",
            "--output",
            s(&exact)
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "solve",
            "--matrix",
            s(&a),
            "--rhs",
            s(&b),
            "--solver",
            "accel",
            "--max-iters",
            "5000",
            "--output",
            s(&iter)
        ])),
        0
    );
    let x1 = io::read_vector(&exact).unwrap();
    let x2 = io::read_vector(&iter).unwrap();
    assert!(x1.iter().all(|&v| v >= 0.0));
    assert!((x1 - x2).amax() < 1e-6);
}

#[test]
fn batch_writes_checkpoint_csv() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("A.csv");
    let b = dir.path().join("B.csv");
    run(&[
        "generate",
        "--kind",
        "kernel",
        "--m",
        "20",
        "--n",
        "30",
        "--k",
        "4",
        "--seed",
        "1",
        "--matrix-out",
        s(&a),
        "--rhs-out",
        s(&b),
    ]);
    let rep = dir.path().join("batch.csv");
    let out = run(&[
        "batch",
        "--matrix",
        s(&a),
        "--rhs",
        s(&b),
        "--max-iters",
        "200",
        "--screen-method",
        "dome",
        "--report",
        s(&rep),
    ]);
    assert!(
        matches!(code(&out), 0 | 2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_batch_checkpoints_csv(std::fs::File::open(&rep).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].iteration, 50);
    assert!(rows.iter().all(|r| r.dome_fraction.is_some()));
}

#[test]
fn ragged_csv_is_an_error() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("A.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "1,2,3\n4,5\n").unwrap();
    std::fs::write(&b, "1\n2\n").unwrap();
    let out = run(&["certify", "--matrix", s(&a), "--rhs", s(&b)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn mismatched_rhs_is_an_error() {
    let dir = TempDir::new().unwrap();
    let (a, _) = small_inputs(&dir);
    let b = dir.path().join("b4.csv");
    std::fs::write(&b, "1\n2\n3\n4\n").unwrap();
    assert_eq!(
        code(&run(&["certify", "--matrix", s(&a), "--rhs", s(&b)])),
        1
    );
}

#[test]
fn active_set_is_rejected_for_screening_loops() {
    let dir = TempDir::new().unwrap();
    let (a, b) = small_inputs(&dir);
    let out = run(&[
        "certify",
        "--matrix",
        s(&a),
        "--rhs",
        s(&b),
        "--solver",
        "active-set",
    ]);
    assert_eq!(code(&out), 1);
}
