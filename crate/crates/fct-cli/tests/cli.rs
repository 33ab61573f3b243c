//! End-to-end tests of the `fct` binary: exit codes, output files, the
//! run manifest, and byte-level determinism of the CSV streams.

use std::path::Path;
use std::process::{Command, Output};

fn fct(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fct"))
        .args(args)
        .current_dir(dir)
        .env_remove("FCT_THREADS")
        .output()
        .expect("spawn fct")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"))
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(&["--help"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gradcheck", "bench", "train", "eval", "inspect", "associativity-probe"] {
        assert!(text.contains(sub), "--help missing `{sub}`");
    }
}

#[test]
fn negative_steps_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(&["train", "--steps", "-1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_writes_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(&["gradcheck", "--seed", "11", "--out", "g"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&tmp.path().join("g/gradcheck.csv"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("op,max_rel_err,worst_coord,nonfinite_evals,pass")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 26, "only {} rows", rows.len());
    assert!(rows.iter().all(|r| r.ends_with(",pass")), "{csv}");
    let manifest = read(&tmp.path().join("g/run_manifest.json"));
    let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(m["subcommand"], "gradcheck");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["success"], true);
}

#[test]
fn probe_reports_both_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(&["associativity-probe", "--out", "p"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&tmp.path().join("p/probe.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,lhs_norm,rhs_norm,rel_discrepancy");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("4,"));
    assert!(lines[2].starts_with("8,"));
}

/// Same argv + seed must give byte-identical CSVs once the timing column
/// (measured_ns, position 5) is dropped.
#[test]
fn bench_is_deterministic_modulo_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "bench", "--sizes", "32,64", "--trials", "2", "--warmups", "0",
    ];
    for out_dir in ["b1", "b2"] {
        let mut a = args.to_vec();
        a.extend(["--out", out_dir]);
        let out = fct(&a, tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let strip = |csv: String| -> Vec<String> {
        csv.lines()
            .map(|l| {
                l.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 4)
                    .map(|(_, f)| f)
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    let a = strip(read(&tmp.path().join("b1/bench.csv")));
    let b = strip(read(&tmp.path().join("b2/bench.csv")));
    assert_eq!(a, b);
}

#[test]
fn bench_refuses_thread_pool() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fct"))
        .args(["bench", "--sizes", "32", "--trials", "1", "--out", "b"])
        .current_dir(tmp.path())
        .env("FCT_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let m: serde_json::Value =
        serde_json::from_str(&read(&tmp.path().join("b/run_manifest.json"))).unwrap();
    assert_eq!(m["success"], false);
}

#[test]
fn train_then_eval_then_inspect_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(
        &["train", "--steps", "3", "--batch-size", "4", "--out", "t"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&tmp.path().join("t/records.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,loss,grad_norm,nan_flag,lr,wall_ms");
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(tmp.path().join("t/checkpoint/manifest.json").exists());

    let out = fct(
        &["eval", "--ckpt", "t/checkpoint", "--batches", "1", "--batch-size", "4", "--out", "e"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let eval_csv = read(&tmp.path().join("e/eval.csv"));
    assert!(eval_csv.starts_with("batches,batch_size,noise,oa\n"));

    let out = fct(&["inspect", "--ckpt", "t/checkpoint", "--out", "i"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // toy config has 5 blocks (depths 1,1,2,1): each dumps attn_r + attn_i,
    // plus one alpha vector per block
    let dumped: Vec<String> = std::fs::read_dir(tmp.path().join("i"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".fctt"))
        .collect();
    assert_eq!(dumped.iter().filter(|n| n.ends_with(".attn_r.fctt")).count(), 5);
    assert_eq!(dumped.iter().filter(|n| n.ends_with(".attn_i.fctt")).count(), 5);
    assert_eq!(dumped.iter().filter(|n| n.ends_with("csa.alpha.fctt")).count(), 5);
}

#[test]
fn failed_run_still_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fct(&["eval", "--ckpt", "does-not-exist", "--out", "f"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let m: serde_json::Value =
        serde_json::from_str(&read(&tmp.path().join("f/run_manifest.json"))).unwrap();
    assert_eq!(m["subcommand"], "eval");
    assert_eq!(m["success"], false);
    assert!(m["error"].as_str().unwrap().len() > 0);
}

#[test]
fn train_records_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out_dir in ["t1", "t2"] {
        let out = fct(
            &["train", "--steps", "2", "--batch-size", "4", "--seed", "5", "--out", out_dir],
            tmp.path(),
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let strip = |csv: String| -> Vec<String> {
        // drop the wall_ms column (position 5)
        csv.lines()
            .map(|l| l.split(',').take(5).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(
        strip(read(&tmp.path().join("t1/records.csv"))),
        strip(read(&tmp.path().join("t2/records.csv")))
    );
}
