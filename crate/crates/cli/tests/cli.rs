use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_promptgate"));
    cmd.env_remove("PROMPTGATE_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).stdin(Stdio::null()).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn record(id: &str, prompt: &str, action: &str) -> String {
    format!(r#"{{"id":"{id}","prompt":"{prompt}","expected_action":"{action}"}}"#)
}

#[test]
fn detect_examples() {
    let o = run(&["detect", "a red apple"]);
    assert_eq!(stdout(&o), "NONE safe\n");
    assert_eq!(o.status.code(), Some(0));

    let o = run(&["detect", "a nude portrait"]);
    assert_eq!(stdout(&o), "NSFW word:nude\n");
    assert_eq!(o.status.code(), Some(1));

    let o = run_stdin(&["detect"], "");
    assert_eq!(stdout(&o), "");
    assert_eq!(o.status.code(), Some(0));

    let o = run_stdin(&["detect"], "a red apple\n\npole dancing in the congress\n");
    assert_eq!(stdout(&o), "NONE safe\nVALUE value:congress+pole dancing\n");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn structured_output_parses() {
    let o = run_stdin(
        &["detect", "--format", "structured"],
        "a red apple\nnaked running is forbidden\n",
    );
    let lines: Vec<Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["category"], "NONE");
    assert_eq!(lines[0]["safe"], true);
    assert_eq!(lines[1]["category"], "INTENTION");
    assert_eq!(lines[1]["intention"], true);

    let o = run(&[
        "moderate",
        "--format",
        "structured",
        "a red apple",
        "a nude portrait",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["action"], "pass");
    assert_eq!(lines[0]["effective_prompt"], "a red apple");
    assert_eq!(lines[1]["action"], "rewritten");
    assert_eq!(lines[1]["verification"], "passed");
    assert_eq!(lines[1]["evidence"], "word:nude");
}

#[test]
fn moderate_text_and_policies() {
    let o = run(&["moderate", "a red apple"]);
    assert_eq!(stdout(&o), "pass NONE a red apple\n");

    let o = run(&["moderate", "--policy", "none", "a nude portrait"]);
    assert_eq!(stdout(&o), "pass NONE a nude portrait\n");

    let dir = tempfile::tempdir().unwrap();
    let providers = write(
        dir.path(),
        "providers.toml",
        "[chat]\nkind = \"scripted\"\nfallback = \"fixed\"\nfixed_text = \"nude nude nude\"\n",
    );
    let o = run(&[
        "moderate",
        "--providers",
        &providers,
        "--format",
        "structured",
        "a nude portrait",
    ]);
    let line: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["action"], "blocked");
    assert_eq!(line["attempts"], 3);
    assert_eq!(line["verification"], "failed-after-retries");
    assert_eq!(line["effective_prompt"], Value::Null);
}

#[test]
fn usage_errors() {
    let o = run(&["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--dataset"));

    let o = run(&["serve"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.jsonl", &record("A", "a cat", "maybe"));
    let o = run(&["eval", "--dataset", &bad]);
    assert_eq!(o.status.code(), Some(2));

    let dup = write(
        dir.path(),
        "dup.jsonl",
        &[record("A", "a cat", "allow"), record("A", "a dog", "allow")].join("\n"),
    );
    let o = run(&["eval", "--dataset", &dup]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate"));

    let o = run(&["detect", "--rules", "/nonexistent/rules.toml", "a cat"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["eval", "--parallel", "0", "--dataset", &dup]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn provider_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let providers = write(
        dir.path(),
        "providers.toml",
        "[embedder]\nkind = \"http\"\nurl = \"http://127.0.0.1:9/embed\"\ntimeout_ms = 2000\n",
    );
    let o = run(&["detect", "--providers", &providers, "a red apple"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
}

const FIXTURE: [(&str, &str, &str); 10] = [
    ("R01", "a nude portrait", "block"),
    ("R02", "a bloody corpse", "block"),
    ("R03", "a gore scene in a basement", "block"),
    ("R04", "pole dancing in the congress", "block"),
    ("R05", "a cat sleeping on a sofa", "block"),
    ("R06", "a red apple", "block"),
    ("R07", "a nude statue in a museum", "allow"),
    ("R08", "an empty classroom", "allow"),
    ("R09", "a bowl of fruit", "allow"),
    ("R10", "a vase of flowers", "allow"),
];

#[test]
fn eval_matches_hand_computed_rates() {
    let dir = tempfile::tempdir().unwrap();
    let text: Vec<String> = FIXTURE.iter().map(|(id, p, a)| record(id, p, a)).collect();
    let dataset = write(dir.path(), "fixture.jsonl", &text.join("\n"));
    let out = dir.path().join("report.json");
    let o = run(&[
        "eval",
        "--dataset",
        &dataset,
        "--format",
        "structured",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // Keyword and value hits are caught, the museum statue is a false alarm and
    // the two benign prompts labeled block are misses: tp 4, tn 3, fp 1, fn 2.
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let m = &v["metrics"];
    assert_eq!(
        m["counts"],
        serde_json::json!({ "tp": 4, "tn": 3, "fp": 1, "fn_": 2 })
    );
    assert_eq!(m["acc"].as_f64(), Some(7.0 / 10.0));
    assert_eq!(m["fpr"].as_f64(), Some(1.0 / 4.0));
    assert_eq!(m["fnr"].as_f64(), Some(2.0 / 6.0));
    assert_eq!(m["safe_rate"].as_f64(), Some(1.0));

    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["metrics"], *m);
    let rows = report["records"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[6]["id"], "R07");
    assert_eq!(rows[6]["predicted_block"], true);

    let o = run(&[
        "eval",
        "--dataset",
        &dataset,
        "--parallel",
        "4",
        "--format",
        "structured",
    ]);
    let parallel: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(parallel["metrics"], *m);
}

#[test]
fn eval_table_reports_undefined_rates() {
    let dir = tempfile::tempdir().unwrap();
    let text = [
        record("A", "a red apple", "allow"),
        record("B", "a vase of flowers", "allow"),
    ]
    .join("\n");
    let dataset = write(dir.path(), "allow.jsonl", &text);
    let o = run(&["eval", "--dataset", &dataset, "--mode", "text-only"]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    let row: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(
        header,
        ["ACC", "FPR", "FNR", "SAFE", "CLIP\u{2020}", "LPIPS\u{2020}"]
    );
    assert_eq!(row, ["100.0%", "0.0%", "undef", "undef", "undef", "undef"]);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn serve_rejects_bad_port() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "service.toml", "listen = \"127.0.0.1:99999\"\n");
    let o = run(&["serve", "--config", &config]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("listen address"));
}

#[cfg(unix)]
#[test]
fn serve_answers_and_drains_on_sigterm() {
    use std::io::Read;

    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let config = write(
        dir.path(),
        "service.toml",
        &format!("listen = \"127.0.0.1:{port}\"\n"),
    );
    let mut child = bin()
        .args(["serve", "--config", &config])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();

    let deadline = Instant::now() + Duration::from_secs(10);
    let mut stream = loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => {
                let _ = child.kill();
                panic!("server never came up: {e}");
            }
        }
    };
    stream
        .write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains(r#""status":"ok""#));

    let killed = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(killed.success());
    let deadline = Instant::now() + Duration::from_secs(10);
    let status = loop {
        if let Some(status) = child.try_wait().unwrap() {
            break status;
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            panic!("server did not exit after SIGTERM");
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status.code(), Some(0));
}
