use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qst(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qst")).args(args).current_dir(cwd).output().expect("spawn qst")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_probe_fit_imle_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = qst(&["generate", "--family", "ghzi", "--qubits", "2", "--out", "g.qdm"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(&fs::read(d.join("g.qdm")).unwrap()[..4], b"QDM1");

    let out = qst(&["probe", "--state", "g.qdm", "--out", "p.csv"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let probs: Vec<f64> = fs::read_to_string(d.join("p.csv")).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(probs.len(), 16);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let out = qst(
        &["fit", "--freqs", "p.csv", "--target", "g.qdm", "--strategy", "chol_h", "--fidelity-target", "0.999", "--out-dir", "nn"],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("nn/report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert!(report["best_fidelity"].as_f64().unwrap() >= 0.999);
    assert!(d.join("nn/rho.qdm").exists());

    let out = qst(&["imle", "--freqs", "p.csv", "--target", "g.qdm", "--out-dir", "ml"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ml/report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "imle");
}

#[test]
fn sampled_binary_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(qst(&["generate", "--family", "w", "--qubits", "2", "--mix", "0.8", "--out", "w.json"], d).status.success());
    let out = qst(&["probe", "--state", "w.json", "--shots", "1000", "--seed", "3", "--out", "f.bin"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let again = qst(&["probe", "--state", "w.json", "--shots", "1000", "--seed", "3", "--out", "g.bin"], d);
    assert!(again.status.success());
    assert_eq!(fs::read(d.join("f.bin")).unwrap(), fs::read(d.join("g.bin")).unwrap());
    let out = qst(&["fit", "--freqs", "f.bin", "--shots", "1000", "--iters", "20", "--strategy", "abs_p:2", "--out-dir", "o"], d);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = qst(&["generate", "--family", "expdecay", "--qubits", "2", "--out", "x.qdm"], d);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = qst(&["fit", "--freqs", "missing.csv", "--out-dir", "o"], d);
    assert_eq!(unknown.status.code(), Some(2));
    let strategy = qst(&["fit", "--freqs", "p.csv", "--strategy", "abs_p:-1", "--out-dir", "o"], d);
    assert_eq!(strategy.status.code(), Some(2));
    let guard = qst(&["generate", "--family", "w", "--qubits", "13", "--out", "x.qdm"], d);
    assert_eq!(guard.status.code(), Some(3), "{}", stderr(&guard));

    fs::write(d.join("big.toml"), "qubits = [9]\n").unwrap();
    let guard = qst(&["bench", "--spec", "big.toml"], d);
    assert_eq!(guard.status.code(), Some(3), "{}", stderr(&guard));

    fs::write(d.join("typo.toml"), "qubit = [2]\n").unwrap();
    assert_eq!(qst(&["bench", "--spec", "typo.toml"], d).status.code(), Some(2));

    fs::write(d.join("odd.csv"), "0.5\n0.5\n").unwrap();
    assert_eq!(qst(&["fit", "--freqs", "odd.csv", "--out-dir", "o"], d).status.code(), Some(2));
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("spec.toml"),
        r#"kind = "depolarizing_sweep"
qubits = [1]
family = "ghzi"
repetitions = 1
strategies = ["chol_h"]
lambdas = [0.0, 0.5, 1.0]
nn_iterations = 100
fidelity_target = 1.1
"#,
    )
    .unwrap();
    let out = qst(&["bench", "--spec", "spec.toml", "--out-dir", "run"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(d.join("run/records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(d.join("run/states/row_00000.qdm").exists());

    let out = qst(&["report", "--records", "run/records.json", "--out-dir", "plots"], d);
    assert!(out.status.success(), "{}", stderr(&out));
    let svg = fs::read_to_string(d.join("plots/fidelity_vs_lambda.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(d.join("plots/fidelity_vs_purity.svg").exists());
}
