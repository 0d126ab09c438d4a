//! End-to-end tests of the `atgen` binary.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::Value;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus")
}

fn atgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atgen"))
        .args(args)
        .env_remove("ATGEN_LLM_URL")
        .env_remove("ATGEN_LLM_MODEL")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_prints_one_row_per_point() {
    let o = atgen(&["simulate", path(&corpus().join("divider.sp"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 27);
    let header: Vec<&str> = lines[0].split(',').collect();
    let out = header.iter().position(|h| *h == "v(out)").unwrap();
    // At in = 0, R1 || R2 (500 ohm) divides 2 V against R3 (10k).
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[out] - 2.0 * 500.0 / 10_500.0).abs() < 1e-12);
}

#[test]
fn custom_sweep_is_honoured() {
    let o = atgen(&["simulate", path(&corpus().join("divider.sp")), "--sweep", "V1", "0", "1", "5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 6);
}

#[test]
fn malformed_netlist_exits_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sp");
    std::fs::write(&bad, "* bad\nV1 in 0 0\nR1 in\n").unwrap();
    let o = atgen(&["simulate", path(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn floating_island_exits_1_naming_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("island.sp");
    std::fs::write(&f, "* island\nV1 in 0 0\nR1 in 0 1k\nR2 x y 1k\n").unwrap();
    let o = atgen(&["simulate", path(&f)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("\"x\"") && err.contains("\"y\""), "{err}");
}

#[test]
fn missing_llm_environment_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("llm.toml");
    std::fs::write(&cfg, "policy = \"llm\"\n").unwrap();
    let o = atgen(&[
        "--config",
        path(&cfg),
        "--out-dir",
        path(dir.path()),
        "campaign",
        path(&corpus().join("divider.sp")),
        "--area",
        "1e-10",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ATGEN_LLM_URL"), "{}", stderr(&o));
}

fn history(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("history.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn campaign_is_reproducible_and_bounded() {
    let runs: Vec<tempfile::TempDir> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let o = atgen(&[
                "--seed",
                "42",
                "--out-dir",
                path(dir.path()),
                "campaign",
                "--manifest",
                path(&corpus().join("manifest.toml")),
                "--entry",
                "bench20",
            ]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            dir
        })
        .collect();
    let (a, b) = (runs[0].path().join("bench20"), runs[1].path().join("bench20"));
    for file in ["final.sp", "history.jsonl", "metrics.csv", "result.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let h = history(&a);
    assert!(!h.is_empty());
    for (i, rec) in h.iter().enumerate() {
        assert_eq!(rec["iteration"].as_u64().unwrap() as usize, i + 1);
        assert!(rec["inserted"].as_array().unwrap().len() <= 12);
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(a.join("result.json")).unwrap()).unwrap();
    assert_eq!(summary["l_max"], 12);
    assert_eq!(summary["n_it"].as_u64().unwrap() as usize, h.len());
}

#[test]
fn baseline_scores_transistor_overhead() {
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = atgen(&[
            "--seed",
            seed,
            "--out-dir",
            path(dir.path()),
            "baseline",
            path(&corpus().join("divider.sp")),
            "--pattern",
            "a2",
            "--area",
            "1e-10",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        dir
    };
    let (a, b) = (run("3"), run("3"));
    let bundle = |d: &tempfile::TempDir| d.path().join("divider-a2-like");
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(bundle(&a).join("result.json")).unwrap()).unwrap();
    assert!(summary["metrics"]["delta_a"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["kind"]["baseline"]["pattern"], "a2-like");
    assert_eq!(
        std::fs::read(bundle(&a).join("final.sp")).unwrap(),
        std::fs::read(bundle(&b).join("final.sp")).unwrap()
    );
}

#[test]
fn report_aggregates_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let o = atgen(&[
        "--out-dir",
        path(&results),
        "campaign",
        "--manifest",
        path(&corpus().join("manifest.toml")),
        "--entry",
        "divider",
        "--entry",
        "bench20",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = atgen(&[
        "--out-dir",
        path(&results),
        "baseline",
        "--manifest",
        path(&corpus().join("manifest.toml")),
        "--entry",
        "ttrig",
        "--pattern",
        "delta",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let out = dir.path().join("report");
    let o = atgen(&["--out-dir", path(&out), "report", path(&results)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 3 + 1, "{csv}");
    assert!(rows.last().unwrap().starts_with("Average"));
    assert!(out.join("report.txt").exists());
    assert!(out.join("revade_series.csv").exists());
}

fn manifest_with_broken_entry(dir: &Path) -> PathBuf {
    std::fs::copy(corpus().join("divider.sp"), dir.join("divider.sp")).unwrap();
    std::fs::write(
        dir.join("island.sp"),
        "* island\n* output out\nV1 in 0 0\nR1 in out 1k\nR2 out 0 1k\nR3 x y 1k\n",
    )
    .unwrap();
    let m = dir.join("manifest.toml");
    std::fs::write(
        &m,
        r#"version = "atgen-corpus-1"

[[entry]]
name = "divider"
netlist = "divider.sp"
output_node = "out"
source = "V1"
area = 1e-10
expected_n = 3

[[entry]]
name = "island"
netlist = "island.sp"
output_node = "out"
source = "V1"
area = 1e-10
expected_n = 4
"#,
    )
    .unwrap();
    m
}

#[test]
fn partial_manifest_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_with_broken_entry(dir.path());
    let out = dir.path().join("out");
    let o = atgen(&["--out-dir", path(&out), "campaign", "--manifest", path(&m)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(out.join("divider").join("result.json").exists());
    assert!(stderr(&o).contains("island"), "{}", stderr(&o));
}

/// Serve chat completions until the test ends. Policy requests get a fresh
/// resistor between `in` and `out`; detector requests get an empty verdict.
fn mock_llm() -> (String, Arc<AtomicUsize>, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let policy_calls = Arc::new(AtomicUsize::new(0));
    let detector_calls = Arc::new(AtomicUsize::new(0));
    let (p, d) = (policy_calls.clone(), detector_calls.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            assert!(request_line.starts_with("POST /v1/chat/completions"), "{request_line}");
            assert_eq!(req["model"], "mock-model");
            let system = req["messages"][0]["content"].as_str().unwrap().to_string();
            let content = if system.contains("REVERT") {
                let k = p.fetch_add(1, Ordering::SeqCst);
                format!("Thinking.\n```spice\nR{} in out {}k\n```", 900 + k, 10 + k)
            } else {
                d.fetch_add(1, Ordering::SeqCst);
                "```\nnone\n```".to_string()
            };
            let reply = serde_json::json!({
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, policy_calls, detector_calls)
}

#[test]
fn llm_backends_speak_chat_completions() {
    let (url, policy_calls, detector_calls) = mock_llm();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("llm.toml");
    std::fs::write(&cfg, "policy = \"llm\"\ndetector_kind = \"llm\"\nalpha = 5.0\n").unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_atgen"))
        .args([
            "--config",
            path(&cfg),
            "--out-dir",
            path(&out),
            "campaign",
            path(&corpus().join("divider.sp")),
            "--area",
            "1e-10",
        ])
        .env("ATGEN_LLM_URL", &url)
        .env("ATGEN_LLM_MODEL", "mock-model")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // The detector never flags, so three clean rounds close the window.
    let h = history(&out.join("divider"));
    assert_eq!(h.len(), 3);
    assert_eq!(policy_calls.load(Ordering::SeqCst), 3);
    assert!(detector_calls.load(Ordering::SeqCst) >= 3);
    let inserted: Vec<&str> = h[2]["inserted"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(inserted, ["R900", "R901", "R902"]);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("divider").join("result.json")).unwrap()).unwrap();
    assert_eq!(summary["reason"], "ConsecutiveEvasion");
}
