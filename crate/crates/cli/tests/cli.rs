use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const QUERY: &str = "I'm going to a concert next Thursday with a friend!";
const QUERY_TIME: &str = "1700000000";

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn recollect(store: &Path, args: &[&str]) -> Output {
    recollect_with_stdin(store, args, None)
}

fn recollect_with_stdin(store: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_recollect"));
    cmd.arg("--store")
        .arg(store)
        .args(args)
        .env_remove("RECOLLECT_STORE");
    cmd.stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().unwrap();
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(text) = stdin {
            pipe.write_all(text.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        stderr(&o)
    );
    o
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn task0_store() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("store");
    ok(recollect(
        &store,
        &["replay", repo_file("datasets/task0.json").to_str().unwrap()],
    ));
    (dir, store)
}

#[test]
fn add_then_list_shows_fresh_gradient() {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("s");
    let added = ok(recollect(
        &store,
        &[
            "--format",
            "json",
            "add",
            "User stayed at home",
            "--time",
            "1700000000",
            "--importance",
            "2",
            "--tags",
            "home,evening",
        ],
    ));
    let event = json(&added);
    assert_eq!(event["g"], 1.0);
    assert_eq!(event["n"], 0);
    assert_eq!(event["tags"], serde_json::json!(["home", "evening"]));
    assert_eq!(event["created_at_iso"], "2023-11-14T22:13:20Z");

    let listed = ok(recollect(&store, &["list"]));
    let text = stdout(&listed);
    assert!(text.contains("User stayed at home"));
    assert!(text.contains("1.000"), "{text}");

    let listed = json(&ok(recollect(&store, &["--format", "json", "list"])));
    assert_eq!(listed[0]["id"], event["id"]);
}

#[test]
fn future_event_warns_on_earlier_recall() {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("s");
    ok(recollect(
        &store,
        &[
            "add",
            "concert next Thursday with a friend",
            "--time",
            "2023-11-23T19:00:00Z",
        ],
    ));
    let out = ok(recollect(
        &store,
        &[
            "recall",
            "concert with a friend",
            "--now",
            QUERY_TIME,
            "--explain",
        ],
    ));
    assert!(stderr(&out).contains("clamped"), "{}", stderr(&out));
    assert!(stdout(&out).contains("future-dated"));
    let out = ok(recollect(
        &store,
        &[
            "--format",
            "json",
            "recall",
            "concert with a friend",
            "--now",
            QUERY_TIME,
            "--dry-run",
        ],
    ));
    let v = json(&out);
    assert!(v["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w.as_str().unwrap().contains("clamped")));
    assert_eq!(v["candidates"][0]["clamped_future"], true);
}

#[test]
fn validation_failures_exit_2_without_side_effects() {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("s");
    let cases: [&[&str]; 5] = [
        &["add", "x", "--importance", "12"],
        &["add", "   "],
        &["--threshold", "1.5", "add", "x"],
        &["--candidate-k", "0", "recall", "x"],
        &["add", "x", "--time", "next thursday"],
    ];
    for args in cases {
        let out = recollect(&store, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(!store.exists(), "{args:?} touched the store");
    }
    ok(recollect(&store, &["add", "x", "--time", "1700000000"]));
    let before = fs::read(store.join("events.log")).unwrap();
    let out = recollect(&store, &["add", "y", "--importance", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read(store.join("events.log")).unwrap(), before);
}

#[test]
fn unusable_store_path_exits_3() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("not-a-dir");
    fs::write(&file, "occupied").unwrap();
    let out = recollect(&file, &["list"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn task0_replay_explain_table() {
    let (_dir, store) = task0_store();
    let out = ok(recollect(
        &store,
        &[
            "recall",
            QUERY,
            "--now",
            QUERY_TIME,
            "--explain",
            "--dry-run",
        ],
    ));
    let text = stdout(&out);
    for header in ["relevance", "time (s)", "grad", "score"] {
        assert!(text.contains(header), "{text}");
    }
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("User ")).collect();
    assert_eq!(rows.len(), 4, "{text}");
    let expected = [
        ("university", 0.850),
        ("office", 0.836),
        ("restaurant", 0.836),
        ("home", 0.830),
    ];
    for (row, (place, reference)) in rows.iter().zip(expected) {
        assert!(row.contains(place), "{row}");
        let score: f64 = row.split_whitespace().last().unwrap().parse().unwrap();
        assert!((score - reference).abs() <= 0.01, "{row}");
    }
}

#[test]
fn dry_run_is_idempotent() {
    let (_dir, store) = task0_store();
    let args = [
        "--policy",
        "argmax-only",
        "--format",
        "json",
        "recall",
        QUERY,
        "--now",
        QUERY_TIME,
        "--dry-run",
    ];
    let first = ok(recollect(&store, &args));
    let second = ok(recollect(&store, &args));
    assert_eq!(first.stdout, second.stdout);
    let v = json(&first);
    assert_eq!(v["dry_run"], true);
    assert!(v["recalled"]["consolidation_after"].is_null());
    assert!(v["recalled"]["content"]
        .as_str()
        .unwrap()
        .contains("university"));

    // A real recall then consolidates exactly the recalled event.
    let real = ok(recollect(
        &store,
        &[
            "--policy",
            "argmax-only",
            "--format",
            "json",
            "recall",
            QUERY,
            "--now",
            QUERY_TIME,
        ],
    ));
    let after = json(&real)["recalled"]["consolidation_after"].clone();
    // Imported g = 5.102 stands for n = 5 prior recalls.
    assert_eq!(after["n"], 6);
    let listed = json(&ok(recollect(&store, &["--format", "json", "list"])));
    let changed: Vec<_> = listed
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["n"] == 6)
        .collect();
    assert_eq!(changed.len(), 1);
    assert!(changed[0]["content"]
        .as_str()
        .unwrap()
        .contains("university"));
}

#[test]
fn threshold_only_with_high_k_recalls_nothing() {
    let (_dir, store) = task0_store();
    let before = ok(recollect(&store, &["--format", "json", "list"])).stdout;
    let out = ok(recollect(
        &store,
        &[
            "--policy",
            "threshold-only",
            "--threshold",
            "0.99",
            "recall",
            QUERY,
            "--now",
            QUERY_TIME,
        ],
    ));
    assert!(stdout(&out).contains("no recall"));
    assert_eq!(
        ok(recollect(&store, &["--format", "json", "list"])).stdout,
        before
    );
}

#[test]
fn remove_and_compact() {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("s");
    let a = json(&ok(recollect(
        &store,
        &[
            "--format",
            "json",
            "add",
            "first note",
            "--time",
            "1700000000",
        ],
    )));
    ok(recollect(
        &store,
        &["add", "second note", "--time", "1700000100"],
    ));
    ok(recollect(&store, &["remove", a["id"].as_str().unwrap()]));
    let out = recollect(&store, &["remove", a["id"].as_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = recollect(&store, &["remove", "not-an-id"]);
    assert_eq!(out.status.code(), Some(2));
    let compacted = json(&ok(recollect(&store, &["--format", "json", "compact"])));
    assert_eq!(compacted["events"], 1);
    let listed = json(&ok(recollect(&store, &["--format", "json", "list"])));
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert_eq!(listed[0]["content"], "second note");
}

#[test]
fn bench_task0_reports_argmax_per_model() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("reports/task0.json");
    let out = ok(recollect(
        &dir.path().join("unused"),
        &[
            "bench",
            repo_file("datasets/task0.json").to_str().unwrap(),
            "--report-out",
            out_path.to_str().unwrap(),
        ],
    ));
    assert!(
        !dir.path().join("unused").exists(),
        "bench must not open the store"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let results = &report["tasks"][0]["results"];
    assert_eq!(results[0]["model"], "proposed");
    assert_eq!(results[0]["argmax_label"], "A");
    assert_eq!(results[1]["model"], "baseline");
    assert_eq!(results[1]["argmax_label"], "D");
    assert_eq!(results[0]["correct"], false);
    assert_eq!(results[1]["correct"], false);
    let text = fs::read_to_string(out_path.with_extension("txt")).unwrap();
    assert_eq!(text, stdout(&out));
    assert!(text.contains("argmax A"));
    assert!(text.contains("argmax D"));
}

#[test]
fn bench_synthetic10_t_test() {
    let dir = TempDir::new().unwrap();
    let out = ok(recollect(
        dir.path(),
        &[
            "--format",
            "json",
            "bench",
            repo_file("datasets/synthetic10.json").to_str().unwrap(),
        ],
    ));
    let report = json(&out);
    let t = &report["t_test"];
    assert!(t["t_statistic"].as_f64().unwrap() < 0.0);
    assert_eq!(t["dof"], 9);
    assert!((t["critical_value"].as_f64().unwrap() - 2.262).abs() < 1e-3);
    let text = stdout(&ok(recollect(
        dir.path(),
        &[
            "bench",
            repo_file("datasets/synthetic10.json").to_str().unwrap(),
        ],
    )));
    assert!(text.contains("dof = 9"));
    assert!(text.contains("critical = ±2.262"));
}

#[test]
fn bench_single_model_and_missing_dataset() {
    let dir = TempDir::new().unwrap();
    let out = ok(recollect(
        dir.path(),
        &[
            "--format",
            "json",
            "bench",
            repo_file("datasets/synthetic10.json").to_str().unwrap(),
            "--models",
            "baseline",
        ],
    ));
    let report = json(&out);
    assert!(report.get("t_test").is_none());
    assert_eq!(report["models"], serde_json::json!(["baseline"]));

    let out = recollect(dir.path(), &["bench", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not found"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version":1,"tasks":[{"task_id":"x","query":"q","query_time":0,"correct_label":"Z","events":[]}]}"#).unwrap();
    let out = recollect(dir.path(), &["bench", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("task x"), "{}", stderr(&out));
}

const GOLDEN_SCRIPT: &str = "\
# canned replies for the golden transcript
Sounds fun! Who are you going with?
@echo
Enjoy the ice cream!
";

const GOLDEN_INPUT: &str = "\
I finished work and decided to have an ice cream.
Thinking about ice cream after work again.
Back home now.
";

fn run_golden_chat(dir: &Path) -> String {
    let store = dir.join("store");
    let script = dir.join("script.txt");
    let transcript = dir.join("transcript.txt");
    fs::write(&script, GOLDEN_SCRIPT).unwrap();
    ok(recollect_with_stdin(
        &store,
        &[
            "--policy",
            "argmax-only",
            "chat",
            "--user",
            "Ann",
            "--llm-stub",
            script.to_str().unwrap(),
            "--now",
            "2023-11-14T18:00:00Z",
            "--step",
            "86400",
            "--transcript",
            transcript.to_str().unwrap(),
            "--explain",
        ],
        Some(GOLDEN_INPUT),
    ));
    fs::read_to_string(transcript).unwrap()
}

#[test]
fn chat_transcript_matches_golden() {
    let golden_path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/chat_transcript.txt");
    let dir = TempDir::new().unwrap();
    let transcript = run_golden_chat(dir.path());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_path.parent().unwrap()).unwrap();
        fs::write(&golden_path, &transcript).unwrap();
    }
    assert_eq!(transcript, fs::read_to_string(&golden_path).unwrap());
    // Second turn recalls the first, as in the ice-cream exchange.
    assert!(transcript.contains("recalled: I finished work and decided to have an ice cream."));
    let dir = TempDir::new().unwrap();
    assert_eq!(run_golden_chat(dir.path()), transcript);
}

#[test]
fn chat_with_unreachable_endpoint_keeps_turn() {
    let dir = TempDir::new().unwrap();
    let store = dir.path().join("s");
    let out = recollect_with_stdin(
        &store,
        &[
            "chat",
            "--user",
            "Ann",
            "--llm-endpoint",
            "http://127.0.0.1:9/chat",
            "--llm-timeout-ms",
            "2000",
            "--now",
            QUERY_TIME,
        ],
        Some("are you there?\n"),
    );
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("error"));
    let listed = json(&ok(recollect(&store, &["--format", "json", "list"])));
    assert_eq!(listed[0]["content"], "are you there?");
    assert_eq!(listed[0]["source"], "chat");
}

#[test]
fn chat_exits_cleanly_on_eof() {
    let dir = TempDir::new().unwrap();
    let script = dir.path().join("s.txt");
    fs::write(&script, "hi\n").unwrap();
    let out = ok(recollect_with_stdin(
        &dir.path().join("s"),
        &[
            "chat",
            "--user",
            "Ann",
            "--llm-stub",
            script.to_str().unwrap(),
        ],
        Some(""),
    ));
    assert!(stdout(&out).is_empty());
}

#[test]
fn chat_requires_exactly_one_llm() {
    let dir = TempDir::new().unwrap();
    let out = recollect(dir.path(), &["chat", "--user", "Ann"]);
    assert_eq!(out.status.code(), Some(2));
    let out = recollect(
        dir.path(),
        &[
            "chat",
            "--user",
            "Ann",
            "--llm-stub",
            "a",
            "--llm-endpoint",
            "http://x",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
