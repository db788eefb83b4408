use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn tsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsvm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The counting loop with its constants swapped for `a` and `b`.
fn counting_loop(a: i64, b: i64) -> String {
    fs::read_to_string(corpus("counting_loop.tsasm"))
        .unwrap()
        .replacen("const 5", &format!("const {a}"), 1)
        .replacen("const 1\n", &format!("const {b}\n"), 1)
}

#[test]
fn instrumented_loop_prints_result_and_final_ts() {
    let o = tsvm(&["run", path(&corpus("counting_loop.tsasm")), "--instrument", "--show-ts"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "5\nts=7\n");
}

#[test]
fn final_ts_counts_entry_iterations_and_return() {
    let dir = tempfile::tempdir().unwrap();
    for (a, b) in [(0, 1), (1, 1), (7, 2), (12, 3), (40, 7)] {
        let src = dir.path().join(format!("loop_{a}_{b}.tsasm"));
        fs::write(&src, counting_loop(a, b)).unwrap();
        let o = tsvm(&["run", path(&src), "--instrument", "--show-ts"]);
        let iterations = (a + b - 1) / b;
        assert_eq!(stdout(&o), format!("{}\nts={}\n", iterations * b, iterations + 2), "a={a} b={b}");
    }
}

#[test]
fn uninstrumented_run_stays_at_zero() {
    let o = tsvm(&["run", path(&corpus("counting_loop.tsasm")), "--show-ts"]);
    assert_eq!(stdout(&o), "5\nts=0\n");
}

#[test]
fn asm_dis_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("loop.tsvm");
    assert!(tsvm(&["asm", path(&corpus("loop.tsasm")), path(&image)]).status.success());
    assert!(fs::read(&image).unwrap().starts_with(b"TSVM"));
    let text = stdout(&tsvm(&["dis", path(&image)]));
    let again = dir.path().join("again.tsasm");
    fs::write(&again, &text).unwrap();
    let image2 = dir.path().join("again.tsvm");
    assert!(tsvm(&["asm", path(&again), path(&image2)]).status.success());
    assert_eq!(fs::read(&image).unwrap(), fs::read(&image2).unwrap());
}

#[test]
fn instrument_writes_image_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fib.tsvm");
    let o = tsvm(&["instrument", path(&corpus("fib.tsasm")), path(&out)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let json: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(json.is_object());
    let dis = stdout(&tsvm(&["dis", path(&out)]));
    assert!(dis.contains("incts"));
    let again = tsvm(&["instrument", path(&out), path(&dir.path().join("twice.tsvm"))]);
    assert_eq!(again.status.code(), Some(1));
    let input = dir.path().join("tape");
    fs::write(&input, "10\n").unwrap();
    let plain = tsvm(&["run", path(&corpus("fib.tsasm")), "--input", path(&input)]);
    let inst = tsvm(&["run", path(&out), "--input", path(&input)]);
    assert_eq!(stdout(&plain), stdout(&inst));
}

#[test]
fn exit_codes() {
    assert_eq!(tsvm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tsvm(&["--help"]).status.code(), Some(0));
    assert_eq!(tsvm(&["dis", "/nonexistent/file"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsasm");
    fs::write(&bad, ".func main 0\n.line 1\nbogus\n").unwrap();
    assert_eq!(tsvm(&["asm", path(&bad), path(&dir.path().join("x"))]).status.code(), Some(1));
    let o = tsvm(&["run", path(&corpus("two_conditions.tsasm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fault"));
}

#[test]
fn trace_file_has_one_record_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = tsvm(&["run", path(&corpus("counting_loop.tsasm")), "--instrument", "--trace", path(&trace)]);
    assert!(o.status.success());
    let records: Vec<Value> = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!records.is_empty());
    assert_eq!(records[0]["ts"], 0);
}

#[test]
fn debug_script_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let dir = tempfile::tempdir().unwrap();
    let tape = dir.path().join("tape");
    fs::write(&tape, "20\n2\n").unwrap();
    let o = tsvm(&[
        "debug",
        path(&corpus("loop.tsasm")),
        "--input",
        path(&tape),
        "--script",
        path(&golden.join("loop.repl")),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), fs::read_to_string(golden.join("loop.repl.out")).unwrap());
}

#[test]
fn serve_over_stdio() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_tsvm"))
        .args(["serve", path(&corpus("counting_loop.tsasm")), "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    writeln!(stdin, r#"{{"id":1,"cmd":"source"}}"#).unwrap();
    writeln!(stdin, r#"{{"id":2,"cmd":"continue"}}"#).unwrap();
    writeln!(stdin, r#"{{"id":3,"cmd":"disconnect"}}"#).unwrap();
    drop(stdin);
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ids: Vec<&Value> = lines.iter().filter_map(|v| v.get("id")).collect();
    assert_eq!(ids, [1, 2, 3]);
    assert!(lines[0]["result"]["text"].as_str().unwrap().contains("br head"));
    assert!(lines.iter().any(|v| v["type"] == "terminated"));
    assert!(lines.iter().any(|v| v["type"] == "output" && v["payload"]["values"] == serde_json::json!([5])));
}

#[test]
fn bench_suite_reports_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("bench.toml");
    let corpus_dir = corpus("").canonicalize().unwrap();
    fs::write(
        &suite,
        fs::read_to_string(corpus("bench.toml"))
            .unwrap()
            .replace("1000000", "1000")
            .replace("20000", "200")
            .replace("program = \"", &format!("program = \"{}/", corpus_dir.display())),
    )
    .unwrap();
    let o = tsvm(&["bench", path(&suite), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report.to_string().contains("empty-loop"));
}
