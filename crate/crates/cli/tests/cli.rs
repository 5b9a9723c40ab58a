//! End-to-end tests of the command-line interface, including the
//! bytecode fetcher against a local canned-response server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deadmem"))
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn analyze_text_and_exit_zero() {
    let out = bin()
        .arg("analyze")
        .arg(fixtures_dir().join("running2.hex"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("5 slots"), "{stdout}");
    assert!(stdout.contains("6 findings"), "{stdout}");
    assert!(stdout.contains("whole slot dead"), "{stdout}");
}

#[test]
fn analyze_json_has_schema() {
    let out = bin()
        .arg("analyze")
        .arg(fixtures_dir().join("running1.hex"))
        .args(["--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["stats"]["slots"], 2);
}

#[test]
fn analyze_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dyn.hex");
    std::fs::write(&path, "60003556").unwrap(); // dynamic jump
    let out = bin().arg("analyze").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("cfg-failed"), "{stdout}");
}

#[test]
fn usage_error_exits_one() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corpus_runs_fixtures_with_oracle_check() {
    let out = bin()
        .arg("corpus")
        .arg(fixtures_dir())
        .args(["--oracle-check", "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["totals"]["failed"], 0);
    // Three .hex plus three .json descriptors.
    assert_eq!(v["totals"]["contracts"], 6);
    for row in v["rows"].as_array().unwrap() {
        if let Some(oracle) = row.get("oracle") {
            assert_eq!(oracle["violations"].as_array().unwrap().len(), 0);
        }
        assert!(row.get("regressions").is_none(), "{row}");
    }
}

#[test]
fn dot_export_writes_graph() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("cfg.dot");
    let out = bin()
        .arg("analyze")
        .arg(fixtures_dir().join("running2.hex"))
        .arg("--dot")
        .arg(&dot)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let graph = std::fs::read_to_string(&dot).unwrap();
    assert!(graph.starts_with("digraph cfg"));
    assert!(graph.contains("->"));
}

/// A minimal one-shot HTTP server that answers each connection with the
/// next canned response.
fn serve_cassette(responses: Vec<String>) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        for response in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/api"), handle)
}

fn http_json(body: &str) -> String {
    format!(
        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
        body.len(),
        body
    )
}

#[test]
fn fetch_uses_cassette_and_cache() {
    let code_hex = "6080604052600080fd";
    let body = format!(r#"{{"jsonrpc":"2.0","id":1,"result":"0x{code_hex}"}}"#);
    let (endpoint, handle) = serve_cassette(vec![http_json(&body)]);
    let cache = tempfile::tempdir().unwrap();
    let addr = "0x1111111111111111111111111111111111111111";

    let out = bin()
        .args(["fetch", addr, "--endpoint", &endpoint])
        .arg("--cache-dir")
        .arg(cache.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("0x{code_hex}"));
    handle.join().unwrap();

    // Second fetch is served from the cache: the server is gone.
    let out = bin()
        .args(["fetch", addr, "--endpoint", &endpoint])
        .arg("--cache-dir")
        .arg(cache.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("0x{code_hex}"));
}

#[test]
fn fetch_rate_limit_retries_then_succeeds() {
    let code_hex = "608060405200";
    let limited = "HTTP/1.1 429 Too Many Requests\r\nretry-after: 1\r\ncontent-length: 0\r\nconnection: close\r\n\r\n".to_string();
    let body = format!(r#"{{"jsonrpc":"2.0","id":1,"result":"0x{code_hex}"}}"#);
    let (endpoint, handle) = serve_cassette(vec![limited, http_json(&body)]);
    let cache = tempfile::tempdir().unwrap();

    let out = bin()
        .args(["fetch", "0x2222222222222222222222222222222222222222", "--endpoint", &endpoint])
        .arg("--cache-dir")
        .arg(cache.path())
        .output()
        .unwrap();
    handle.join().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("0x{code_hex}"));
}

#[test]
fn fetch_empty_code_is_not_a_contract() {
    let body = r#"{"jsonrpc":"2.0","id":1,"result":"0x"}"#;
    let (endpoint, handle) = serve_cassette(vec![http_json(body)]);
    let cache = tempfile::tempdir().unwrap();

    let out = bin()
        .args(["fetch", "0x3333333333333333333333333333333333333333", "--endpoint", &endpoint])
        .arg("--cache-dir")
        .arg(cache.path())
        .output()
        .unwrap();
    handle.join().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("no deployed code"), "{stderr}");
}

#[test]
fn fetch_rejects_malformed_address() {
    let out = bin().args(["fetch", "0x1234"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("not a 20-byte hex address"), "{stderr}");
}
