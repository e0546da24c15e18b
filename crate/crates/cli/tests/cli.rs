use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const SMOKE: &str = "\
task = PointReach-sparse
total_steps = 500
warmup_steps = 100
pretrain_steps = 200
session_interval = 200
queries_per_session = 10
total_budget = 20
reward_epochs = 3
eval_interval = 250
eval_episodes = 2
";

fn rune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rune")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_task_is_a_named_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.conf", "total_steps = 500\n");
    let out = rune(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("task"), "{}", stderr(&out));
}

#[test]
fn unknown_key_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.conf", "task = PointReach-dense\n\nlearning_rat = 0.1\n");
    let out = rune(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("learning_rat"), "{err}");
}

#[test]
fn smoke_run_writes_metrics_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "smoke.conf", SMOKE);
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = rune(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "4",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
        assert!(metrics.lines().count() >= 2, "{metrics}");
        files.push(metrics);
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn set_overrides_apply_after_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "smoke.conf", SMOKE);
    let out_dir = dir.path().join("run");
    let out = rune(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "total_steps=300",
        "--set",
        "exploration=none",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let echo = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(echo.contains("total_steps = 300"), "{echo}");
    assert!(echo.contains("exploration = none"), "{echo}");
    let bad = rune(&["run", "--config", config.to_str().unwrap(), "--set", "exploration"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn seed_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "smoke.conf", SMOKE);
    let sweep_dir = dir.path().join("sweep");
    let out = rune(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "seeds",
        "--values",
        "1..3",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(sweep_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2, "{summary}");
    let runs = std::fs::read_to_string(sweep_dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4, "{runs}");
    assert!(std::fs::read_to_string(sweep_dir.join("summary.md")).unwrap().contains('±'));

    let run_dirs: Vec<String> = (1..=3)
        .map(|s| sweep_dir.join(format!("seed-{s}")).to_string_lossy().into_owned())
        .collect();
    let report_dir = dir.path().join("report");
    let mut args = vec!["report", "--out", report_dir.to_str().unwrap()];
    args.extend(run_dirs.iter().map(String::as_str));
    let out = rune(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let curves = std::fs::read_to_string(report_dir.join("curves.csv")).unwrap();
    assert!(curves.starts_with("method,seed,step,metric,value\n"));
    assert!(curves.contains("rune-b20,2,500,success_rate,"), "{curves}");
    let bands = std::fs::read_to_string(report_dir.join("bands.csv")).unwrap();
    let line = bands.lines().find(|l| l.starts_with("rune-b20,500,budget_used,")).unwrap();
    assert!(line.ends_with(",20,0,3"), "{line}");
}

#[test]
fn budget_sweep_accounts_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "smoke.conf", SMOKE);
    let sweep_dir = dir.path().join("sweep");
    let out = rune(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "budget",
        "--values",
        "20,10",
        "--repeats",
        "2",
        "--workers",
        "2",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let runs = std::fs::read_to_string(sweep_dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5, "{runs}");
    for budget in ["20", "10"] {
        let cell_rows: Vec<&str> = runs.lines().filter(|l| l.starts_with(&format!("{budget},"))).collect();
        assert_eq!(cell_rows.len(), 2, "{runs}");
    }
    let summary = std::fs::read_to_string(sweep_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
}

#[test]
fn report_rejects_an_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = rune(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn http(addr: &str, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    let status = response.split(' ').nth(1).unwrap().parse().unwrap();
    let body = response.split("\r\n\r\n").nth(1).unwrap_or("").to_string();
    (status, body)
}

/// Pulls the value of a string field out of a flat JSON fragment.
fn field<'a>(json: &'a str, key: &str) -> Option<&'a str> {
    let start = json.find(&format!("\"{key}\":\""))? + key.len() + 4;
    Some(&json[start..start + json[start..].find('"')?])
}

#[test]
fn served_run_takes_labels_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMOKE}queries_per_session = 2\ntotal_budget = 4\n").replace("queries_per_session = 10\ntotal_budget = 20\n", "");
    let config = write_config(dir.path(), "human.conf", &text);
    let out_dir = dir.path().join("run");
    let mut child = Command::new(env!("CARGO_BIN_EXE_rune"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
        .args(["--serve", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server address line").unwrap();
        if let Some(rest) = line.strip_prefix("label server at http://") {
            break rest.trim().to_string();
        }
    };
    let deadline = Instant::now() + Duration::from_secs(120);
    let mut labeled = 0;
    while labeled < 4 {
        assert!(Instant::now() < deadline, "timed out waiting for queries");
        let (status, body) = http(&addr, "GET", "/api/query/next", "");
        assert_eq!(status, 200);
        match field(&body, "id") {
            Some(id) => {
                let (status, ack) = http(&addr, "POST", &format!("/api/query/{id}/label"), r#"{"choice":"first"}"#);
                assert_eq!(status, 200, "{ack}");
                let (again, _) = http(&addr, "POST", &format!("/api/query/{id}/label"), r#"{"choice":"second"}"#);
                assert_eq!(again, 409);
                labeled += 1;
            }
            None => std::thread::sleep(Duration::from_millis(20)),
        }
    }
    let (_, status) = http(&addr, "GET", "/api/status", "");
    assert!(status.contains("\"budget_used\":"), "{status}");
    assert!(child.wait().unwrap().success());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.trim_end().ends_with(",4"), "{metrics}");
}
