use std::io::{BufRead, BufReader};
use std::process::{Command, Output, Stdio};

use codomain_cli::commands::{EXIT_CHECK_FAILED, EXIT_IRRATIONAL_TAU, EXIT_USAGE};
use serde_json::Value;

fn codomain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codomain")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

#[test]
fn irrational_tau_has_its_own_exit_code() {
    let out = codomain(&["construct", "--loss", "kary-ce:3", "--n", "2", "--tau", "pi"]);
    assert_eq!(out.status.code(), Some(EXIT_IRRATIONAL_TAU));
    let out = codomain(&["fig1", "--tau", "1/10,pi"]);
    assert_eq!(out.status.code(), Some(EXIT_IRRATIONAL_TAU));
}

#[test]
fn usage_errors() {
    assert_eq!(codomain(&["construct", "--loss", "hinge", "--n", "2"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(codomain(&["verify"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(codomain(&["fig1", "--trials", "0"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(codomain(&["attack", "--loss", "binary-ce", "--tau", "1/4", "--dataset", "iris"]).status.code(), Some(EXIT_USAGE));
}

#[test]
fn all_half_theta_collides() {
    let v = json(&codomain(&["verify", "--theta", "1/2,1/2,1/2,1/2"]));
    assert_eq!(v["verdict"]["kind"], "zero");
    assert_eq!(v["exact_collision"], true);
}

#[test]
fn synthetic_attack_recovers_everything() {
    let v = json(&codomain(&["attack", "--loss", "binary-ce", "--tau", "1/4", "--dataset", "synthetic:8,2,3", "--precision", "apa"]));
    assert_eq!(v["accuracy"], 1.0);
    assert_eq!(v["queries"], 1);
}

#[test]
fn construct_then_verify_payload_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let p = path.to_str().unwrap();
    let out = codomain(&["construct", "--loss", "kary-ce:3", "--n", "3", "--tau", "1/8", "--out", p]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["decoder"], "codeword");
    assert_eq!(doc["queries"][0]["payload"]["encoding"], "pow3");
    let v = json(&codomain(&["verify", "--payload", p]));
    assert_eq!(v["verdict"]["kind"], "separable");
    assert_eq!(v["tau_claimed"], "1/4");
}

#[test]
fn verify_exhaustive_reports() {
    let v = json(&codomain(&["verify", "--loss", "itakura-saito", "--n", "5", "--tau", "1"]));
    assert_eq!((v["decode_failures"].as_u64(), v["mismatches"].as_u64()), (Some(0), Some(0)));
    let out = codomain(&["verify", "--loss", "mahalanobis:2,0,0,2", "--n", "2", "--tau", "1/4", "--mahalanobis-mode", "paper-faithful"]);
    assert_eq!(out.status.code(), Some(EXIT_CHECK_FAILED));
}

#[test]
fn multi_block_attack() {
    let v = json(&codomain(&["attack", "--loss", "kary-ce:3", "--tau", "1", "--dataset", "iris", "--block-size", "7"]));
    assert_eq!(v["queries"], 22);
    assert_eq!(v["correct"], 150);
}

#[test]
fn oracle_over_stdio() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_codomain"))
        .args(["oracle", "--loss", "binary-ce", "--tau", "1/4", "--dataset", "synthetic:4,2,1", "--max-queries", "1"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        use std::io::Write;
        let mut stdin = child.stdin.take().unwrap();
        let payload = r#"{"kind":"probs","encoding":"rational","rows":[["1/2","1/2"],["1/2","1/2"],["1/2","1/2"],["1/2","1/2"]]}"#;
        writeln!(stdin, r#"{{"id":1,"op":"evaluate","loss":{{"family":"binary-ce"}},"payload":{payload}}}"#).unwrap();
        writeln!(stdin, r#"{{"id":2,"op":"evaluate","loss":{{"family":"binary-ce"}},"payload":{payload}}}"#).unwrap();
    }
    let lines: Vec<Value> =
        BufReader::new(child.stdout.take().unwrap()).lines().map(|l| serde_json::from_str(&l.unwrap()).unwrap()).collect();
    assert!(child.wait().unwrap().success());
    assert_eq!(lines[0]["ok"], true);
    assert_eq!(lines[1]["code"], "budget_exhausted");
}

#[test]
fn fig1_is_byte_identical_and_replayable() {
    let args = ["fig1", "--dataset", "titanic", "--loss", "binary-ce,kary-ce", "--tau", "1/100,1", "--trials", "5", "--max-n", "10"];
    let a = codomain(&args);
    let b = codomain(&[&args[..], &["--threads", "3"]].concat());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let csv = String::from_utf8(a.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("loss,dataset,tau,max_N,accuracy_target"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let n = first[3];
    let v = json(&codomain(&["replay", "--loss", first[0], "--dataset", first[1], "--tau", first[2], "--n", n, "--trial", "4"]));
    assert_eq!(v["success"], true);
}

#[test]
fn fig2_with_config_file_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let svg = dir.path().join("fig2.svg");
    std::fs::write(&cfg, r#"{"datasets":["synthetic:40,2,9"],"losses":["binary-ce"],"tau":["1/10"],"trials":2,"block_size":[4,40]}"#).unwrap();
    let out = codomain(&["fig2", "--config", cfg.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "loss,dataset,tau,block_size,queries,accuracy");
    assert_eq!(rows[1], "binary-ce,\"synthetic:40,2,9\",1/10,4,10,1.000000");
    assert!(rows[2].starts_with("binary-ce,\"synthetic:40,2,9\",1/10,40,1,"));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn mutnet_export() {
    let v = json(&codomain(&["mutnet", "--loss", "binary-ce", "--n", "4", "--tau", "1/4", "--d1", "3"]));
    assert_eq!((v["d1"].as_u64(), v["d2"].as_u64()), (Some(3), Some(4)));
}
