//! End-to-end tests of the command-line interface: golden evaluation
//! output, transcript shape, self-comparison, exit codes, and parse
//! diagnostics.

use std::path::Path;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn convsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convsearch"))
        .args(args)
        .output()
        .expect("spawn convsearch")
}

fn run_to(out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run".to_string(),
        "--collection".into(),
        fixture("collection.tsv"),
        "--topics".into(),
        fixture("topics.json"),
        "--needs".into(),
        fixture("needs.json"),
        "--mock-script".into(),
        fixture("mock_script.jsonl"),
        "--out-dir".into(),
        out_dir.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    convsearch(&args)
}

#[test]
fn eval_matches_committed_golden_file() {
    let output = convsearch(&[
        "eval",
        "--run",
        &fixture("run_fixture.txt"),
        "--qrels",
        &fixture("qrels.txt"),
    ]);
    assert!(output.status.success());
    let golden = std::fs::read(fixture("golden_eval.txt")).expect("golden file");
    assert_eq!(
        output.stdout, golden,
        "eval table differs from the committed golden file"
    );
}

#[test]
fn eval_emits_json_report() {
    let output = convsearch(&[
        "eval",
        "--run",
        &fixture("run_fixture.txt"),
        "--qrels",
        &fixture("qrels.txt"),
        "--json",
    ]);
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("valid JSON report");
    assert!((report["macro"]["map"].as_f64().expect("macro map") - 0.616667).abs() < 1e-5);
    assert_eq!(report["flagged_turns"][0], "c3_1");
}

#[test]
fn run_without_feedback_has_one_system_move_per_turn() {
    let dir = tempfile::tempdir().expect("temp dir");
    let output = run_to(dir.path(), &["--feedback-rounds", "0"]);
    assert!(output.status.success(), "{output:?}");
    let transcript =
        std::fs::read_to_string(dir.path().join("transcripts.jsonl")).expect("transcript");
    let records: Vec<serde_json::Value> = transcript
        .lines()
        .map(|l| serde_json::from_str(l).expect("record"))
        .collect();
    // 4 turns, each exactly one user query and one system response.
    assert_eq!(records.len(), 8);
    for pair in records.chunks(2) {
        assert_eq!(pair[0]["role"], "user");
        assert_eq!(pair[1]["role"], "system");
        assert_eq!(pair[1]["kind"], "response");
    }
}

#[test]
fn compare_run_with_itself_is_all_zero_deltas() {
    let output = convsearch(&[
        "compare",
        "--run-a",
        &fixture("run_fixture.txt"),
        "--run-b",
        &fixture("run_fixture.txt"),
        "--qrels",
        &fixture("qrels.txt"),
    ]);
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).expect("utf8");
    assert!(stdout.starts_with("turns compared: 5\n"), "{stdout}");
    for line in stdout.lines().skip(2) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields[3], "+0.000000", "delta in {line}");
        assert_eq!(fields[5], "1.000000", "p in {line}");
    }
}

#[test]
fn index_artifact_reproduces_direct_collection_run() {
    let idx_dir = tempfile::tempdir().expect("temp dir");
    let artifact = idx_dir.path().join("index.json");
    let output = convsearch(&[
        "index",
        "--collection",
        &fixture("collection.tsv"),
        "--out",
        &artifact.display().to_string(),
    ]);
    assert!(output.status.success());

    let from_collection = tempfile::tempdir().expect("temp dir");
    assert!(run_to(from_collection.path(), &[]).status.success());

    let from_artifact = tempfile::tempdir().expect("temp dir");
    let output = Command::new(env!("CARGO_BIN_EXE_convsearch"))
        .args([
            "run",
            "--index",
            &artifact.display().to_string(),
            "--topics",
            &fixture("topics.json"),
            "--needs",
            &fixture("needs.json"),
            "--mock-script",
            &fixture("mock_script.jsonl"),
            "--out-dir",
            &from_artifact.path().display().to_string(),
        ])
        .output()
        .expect("spawn convsearch");
    assert!(output.status.success(), "{output:?}");

    let a = std::fs::read(from_collection.path().join("run.txt")).expect("run a");
    let b = std::fs::read(from_artifact.path().join("run.txt")).expect("run b");
    assert_eq!(a, b, "prebuilt index changes retrieval output");
}

#[test]
fn missing_input_file_exits_with_data_code() {
    let output = convsearch(&[
        "eval",
        "--run",
        "/nonexistent/run.txt",
        "--qrels",
        &fixture("qrels.txt"),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn malformed_line_reports_file_and_line() {
    let dir = tempfile::tempdir().expect("temp dir");
    let bad = dir.path().join("bad_qrels.txt");
    std::fs::write(&bad, "c1_1 0 p01 3\nc1_1 0 p02\n").expect("write");
    let output = convsearch(&[
        "eval",
        "--run",
        &fixture("run_fixture.txt"),
        "--qrels",
        &bad.display().to_string(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).expect("utf8");
    assert!(
        stderr.contains("bad_qrels.txt:2:"),
        "diagnostic must name file and line: {stderr}"
    );
}

#[test]
fn remote_stage_without_transport_config_is_config_error() {
    let dir = tempfile::tempdir().expect("temp dir");
    let output = Command::new(env!("CARGO_BIN_EXE_convsearch"))
        .args([
            "run",
            "--collection",
            &fixture("collection.tsv"),
            "--topics",
            &fixture("topics.json"),
            "--needs",
            &fixture("needs.json"),
            "--feedback-rounds",
            "1",
            "--out-dir",
            &dir.path().display().to_string(),
        ])
        .output()
        .expect("spawn convsearch");
    assert_eq!(output.status.code(), Some(1), "{output:?}");
    let stderr = String::from_utf8(output.stderr).expect("utf8");
    assert!(stderr.contains("remote"), "{stderr}");
}

#[test]
fn run_with_rerank_and_clarification_flags_succeeds() {
    let dir = tempfile::tempdir().expect("temp dir");
    // Entity clarification asks one question per turn when salient
    // entities exist; the script interleaves answers and feedback.
    let script_dir = tempfile::tempdir().expect("temp dir");
    let script = script_dir.path().join("script.jsonl");
    std::fs::write(
        &script,
        concat!(
            "\"Yes, exactly.\"\n",
            "\"That's not what I asked for.\"\n",
            "\"Yes, exactly.\"\n",
            "\"Thank you, that was helpful.\"\n",
            "\"Yes, exactly.\"\n",
            "\"That's not what I asked for.\"\n",
            "\"Yes, exactly.\"\n",
            "\"Thank you, that was helpful.\"\n",
        ),
    )
    .expect("write script");
    let output = Command::new(env!("CARGO_BIN_EXE_convsearch"))
        .args([
            "run",
            "--collection",
            &fixture("collection.tsv"),
            "--topics",
            &fixture("topics.json"),
            "--needs",
            &fixture("needs.json"),
            "--mock-script",
            &script.display().to_string(),
            "--feedback-rounds",
            "1",
            "--rerank",
            "lexical",
            "--clarify",
            "--expansion",
            "rocchio",
            "--out-dir",
            &dir.path().display().to_string(),
        ])
        .output()
        .expect("spawn convsearch");
    assert!(output.status.success(), "{output:?}");
    let transcript =
        std::fs::read_to_string(dir.path().join("transcripts.jsonl")).expect("transcript");
    assert!(
        transcript.contains("clarifying_question"),
        "expected at least one clarifying question: {transcript}"
    );
}
