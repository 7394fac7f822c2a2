use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use agentloom_core::catalog;
use serde_json::Value;

fn agentloom(log_dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agentloom"));
    cmd.arg("--log-dir").arg(log_dir).env_remove("AGENTLOOM_DASH_TOKEN");
    cmd
}

fn run(log_dir: &Path, args: &[&str]) -> Output {
    agentloom(log_dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The single run directory created under `root`.
fn only_run(root: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

const SCRIPTED: [&str; 3] = ["--backend", "scripted", "--auto-approve"];

#[test]
fn model_run_prints_checkpoints_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[
            &["model", "--model_type", "DSGE", "--focus", "fiscal policy impacts"][..],
            &SCRIPTED,
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("[INFO] agentloom initializing model workflow"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("CHECKPOINT: ")).count(), 3);
    assert!(out.contains("--- EXECUTION SUMMARY ---"));
    assert!(out.contains("Status:            completed"));
}

#[test]
fn script_file_backend_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let script = tmp.path().join("fx.script");
    fs::write(&script, catalog::script("literature").unwrap().unwrap().to_document()).unwrap();
    let backend = format!("--backend=scripted:{}", script.display());
    let logs = tmp.path().join("runs");
    let o = run(
        &logs,
        &["literature", "--topic", "carbon pricing", &backend, "--auto-approve"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // The script is recorded with the run so replay needs no external file.
    let recorded = fs::read_to_string(only_run(&logs).join("script.toml")).unwrap();
    assert_eq!(recorded, fs::read_to_string(&script).unwrap());
}

#[test]
fn quiet_prints_only_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[&["ideation", "--topic", "trade", "-q"][..], &SCRIPTED].concat(),
    );
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(!out.contains("[INFO]"), "{out}");
    assert!(out.starts_with("--- EXECUTION SUMMARY ---"));
}

#[test]
fn json_events_are_jsonl_on_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[
            &["ideation", "--idea", "tariffs and trade", "--json-events"][..],
            &SCRIPTED,
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let events: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).expect("jsonl")).collect();
    assert!(events.len() > 3);
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
    // The log on disk has the same events.
    let on_disk = fs::read_to_string(only_run(tmp.path()).join("events.jsonl")).unwrap();
    assert_eq!(on_disk.lines().count(), events.len());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--- EXECUTION SUMMARY ---"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["model", "--focus", "x", "--bogus"][..],
        &["model", "--model-type", "DSGE"],
        &["run", "no-such-pipeline", "--backend", "scripted"],
        &["run", "model", "-p", "missing_equals", "--backend", "scripted"],
        &["ideation", "--backend", "quantum"],
        &["ideation", "--auto-approve", "--decisions", "d.json"],
    ] {
        let o = run(tmp.path(), args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn abort_decision_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let decisions = tmp.path().join("decisions.json");
    fs::write(&decisions, r#"[{"decision": "approve"}, {"decision": "abort"}]"#).unwrap();
    let o = agentloom(&tmp.path().join("runs"))
        .args([
            "model",
            "--model-type",
            "RBC",
            "--focus",
            "labor",
            "--backend",
            "scripted",
            "--decisions",
        ])
        .arg(&decisions)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Status:            aborted"));
}

#[test]
fn generic_run_takes_params() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[
            &["run", "literature", "-p", "topic=credit cycles", "-p", "max_results=3"][..],
            &SCRIPTED,
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(
        tmp.path(),
        &[&["run", "literature", "-p", "max_results=lots"][..], &SCRIPTED].concat(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn list_names_the_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["list"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for name in [
        "ideation",
        "literature",
        "model",
        "data",
        "implementation",
        "estimation",
        "reporting",
    ] {
        assert!(out.contains(name), "{name}");
    }
}

#[test]
fn verify_and_replay_round_trip_then_detect_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[&["data", "--dataset", "fred", "--indicators", "gdp,cpi"][..], &SCRIPTED].concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run(tmp.path());
    let dir_s = dir.to_str().unwrap();
    assert_eq!(run(tmp.path(), &["verify", "--run", dir_s]).status.code(), Some(0));
    let o = run(tmp.path(), &["replay", "--run", dir_s, "-q"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Replay matches"));

    let log = dir.join("events.jsonl");
    let mut bytes = fs::read(&log).unwrap();
    let at = bytes.len() / 3;
    bytes[at] ^= 0x01;
    fs::write(&log, bytes).unwrap();
    let o = run(tmp.path(), &["verify", "--run", dir_s]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
    assert_eq!(run(tmp.path(), &["replay", "--run", dir_s]).status.code(), Some(3));
}

fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> (u16, Value) {
    let mut s = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let status = raw.split_whitespace().nth(1).unwrap().parse().unwrap();
    let payload = raw.split_once("\r\n\r\n").map(|(_, b)| b).unwrap_or("");
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

#[test]
fn serve_launches_and_resumes_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = agentloom(tmp.path())
        .args(["serve", "--addr", "127.0.0.1:0", "--backend", "scripted"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut banner)
        .unwrap();
    let addr = banner.trim().rsplit("http://").next().unwrap().to_string();

    let result = std::panic::catch_unwind(|| {
        let (status, v) = http(
            &addr,
            "POST",
            "/runs",
            Some(r#"{"pipeline": "literature", "params": {"topic": "oil"}}"#),
        );
        assert_eq!(status, 201, "{v}");
        let run_id = v["run_id"].as_str().unwrap().to_string();
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (_, detail) = http(&addr, "GET", &format!("/runs/{run_id}"), None);
            if detail["status"] == "completed" {
                break;
            }
            assert!(Instant::now() < deadline, "run never completed: {detail}");
            let (_, pending) = http(&addr, "GET", &format!("/checkpoints?pending=true&run={run_id}"), None);
            for cp in pending.as_array().unwrap() {
                let id = cp["id"].as_str().unwrap();
                let (status, _) = http(
                    &addr,
                    "POST",
                    &format!("/checkpoints/{id}/decision"),
                    Some(r#"{"decision": "approve"}"#),
                );
                assert_eq!(status, 200);
            }
            std::thread::sleep(Duration::from_millis(25));
        }
        let (_, detail) = http(&addr, "GET", &format!("/runs/{run_id}"), None);
        assert_eq!(detail["checkpoints"].as_array().unwrap().len(), 3);
    });
    let _ = child.kill();
    let _ = child.wait();
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}
