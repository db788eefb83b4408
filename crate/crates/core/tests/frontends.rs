mod common;

use std::io::{BufReader, Cursor, Write};
use std::thread;
use std::time::Duration;

use serde_json::Value;

use common::{corpus, corpus_dir};
use tsvm_core::control::Session;
use tsvm_core::isa::assemble;
use tsvm_core::server::bench::{load_suite, run_bench};
use tsvm_core::server::{Repl, Server};

fn session(name: &str, input: &[i64]) -> Session {
    Session::instrumented(assemble(&corpus(name)).unwrap(), input.to_vec()).unwrap()
}

fn parse(lines: &[String]) -> Vec<Value> {
    lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Every REPL command paired with its protocol request.
const ROUND_TRIP: &[(&str, &[i64], &[(&str, &str)])] = &[
    (
        "loop.tsasm",
        &[20, 2],
        &[
            ("s", r#"{"id":1,"cmd":"step"}"#),
            ("s", r#"{"id":2,"cmd":"step"}"#),
            ("b main:2 if ts == 8", r#"{"id":3,"cmd":"break","args":{"function":"main","line":2,"condition":"ts == 8"}}"#),
            ("c", r#"{"id":4,"cmd":"continue"}"#),
            ("watch i", r#"{"id":5,"cmd":"watch","args":{"target":"i"}}"#),
            ("c", r#"{"id":6,"cmd":"continue"}"#),
            ("delete 2", r#"{"id":7,"cmd":"clear","args":{"id":2}}"#),
            ("mark here", r#"{"id":8,"cmd":"bookmark","args":{"annotation":"here"}}"#),
            ("gotots 3", r#"{"id":9,"cmd":"goto_timestamp","args":{"ts":3}}"#),
            ("goto 1", r#"{"id":10,"cmd":"goto_bookmark","args":{"id":1}}"#),
            ("goto main:3@4 slow", r#"{"id":11,"cmd":"goto_position","args":{"function":"main","line":3,"ts":4,"mode":"slow"}}"#),
            ("goto main:3@4", r#"{"id":12,"cmd":"goto_position","args":{"function":"main","line":3,"ts":4}}"#),
            ("goto main:3@40", r#"{"id":13,"cmd":"goto_position","args":{"function":"main","line":3,"ts":40}}"#),
            ("c", r#"{"id":14,"cmd":"continue"}"#),
            ("c", r#"{"id":15,"cmd":"continue"}"#),
            ("c", r#"{"id":16,"cmd":"continue"}"#),
            ("restart", r#"{"id":17,"cmd":"restart"}"#),
        ],
    ),
    (
        "writes_135.tsasm",
        &[],
        &[
            ("rwatch x", r#"{"id":1,"cmd":"reverse_watchpoint","args":{"target":"x"}}"#),
            ("b main:7", r#"{"id":2,"cmd":"break","args":{"function":"main","line":7}}"#),
            ("c", r#"{"id":3,"cmd":"continue"}"#),
            ("rwatch x", r#"{"id":4,"cmd":"reverse_watchpoint","args":{"target":"x"}}"#),
            ("rwatch nope", r#"{"id":5,"cmd":"reverse_watchpoint","args":{"target":"nope"}}"#),
        ],
    ),
    (
        "two_conditions.tsasm",
        &[],
        &[
            ("c", r#"{"id":1,"cmd":"continue"}"#),
            ("bsearch cache >= 0 0 15", r#"{"id":2,"cmd":"binary_search","args":{"condition":"cache >= 0","lo":0,"hi":15}}"#),
            ("bsearch bal >= 0 0 15", r#"{"id":3,"cmd":"binary_search","args":{"condition":"bal >= 0","lo":0,"hi":15}}"#),
            ("bsearch bal >= 0 5 5", r#"{"id":4,"cmd":"binary_search","args":{"condition":"bal >= 0","lo":5,"hi":5}}"#),
            ("bsearch bal >= 0 0 9", r#"{"id":5,"cmd":"binary_search","args":{"condition":"bal >= 0","lo":0,"hi":9}}"#),
        ],
    ),
];

fn error_code(repl_text: &str) -> Option<&str> {
    let start = repl_text.find("error[")? + "error[".len();
    let len = repl_text[start..].find(']')?;
    Some(&repl_text[start..start + len])
}

#[test]
fn repl_and_protocol_report_the_same_stops() {
    for (program, input, pairs) in ROUND_TRIP {
        let mut repl = Repl::new(session(program, input));
        let mut server = Server::new(session(program, input), String::new());
        for (cmd, request) in *pairs {
            let before = repl.last_stop().cloned();
            let (text, _) = repl.execute(cmd);
            let replies = parse(&server.handle_line(request));
            let response = replies.iter().find(|v| v.get("id").is_some()).unwrap();
            match error_code(&text) {
                Some(code) => assert_eq!(response["error"]["code"], code, "{program}: `{cmd}`"),
                None => assert_eq!(response["ok"], true, "{program}: `{cmd}` gave {response}"),
            }
            let event = replies
                .iter()
                .rfind(|v| v["type"] == "stopped" || v["type"] == "terminated");
            let stop = repl.last_stop().cloned();
            if stop != before {
                let stop = serde_json::to_value(stop.unwrap()).unwrap();
                assert_eq!(event.map(|e| &e["payload"]), Some(&stop), "{program}: `{cmd}`");
            }
            assert_eq!(repl.session().machine().state(), server.session().machine().state(), "{program}: `{cmd}`");
        }
    }
}

#[test]
fn each_request_gets_one_response() {
    let mut server = Server::new(session("loop.tsasm", &[20, 2]), "src".into());
    let requests = [
        r#"{"id":1,"cmd":"position"}"#,
        r#"{"id":2,"cmd":"continue"}"#,
        r#"{"id":3,"cmd":"continue"}"#,
        r#"{"id":4,"cmd":"source"}"#,
        r#"{"id":5,"cmd":"breakpoints"}"#,
        r#"{"id":6,"cmd":"bookmarks"}"#,
        r#"{"id":7,"cmd":"evaluate","args":{"expression":"1 +"}}"#,
        r##"{"id":8,"cmd":"evaluate","args":{"expression":"#9.f"}}"##,
        r#"{"id": 9, "cmd": 5}"#,
        r#"[1, 2]"#,
    ];
    let mut codes = Vec::new();
    for (i, r) in requests.iter().enumerate() {
        let replies = parse(&server.handle_line(r));
        let responses: Vec<_> = replies.iter().filter(|v| v.get("id").is_some()).collect();
        assert_eq!(responses.len(), 1, "{r}");
        assert!(replies.iter().filter(|v| v.get("type").is_some()).all(|v| v.get("id").is_none()));
        let expected_id = if i < 9 { Value::from(i + 1) } else { Value::Null };
        assert_eq!(responses[0]["id"], expected_id);
        codes.push(responses[0]["error"]["code"].as_str().unwrap_or("ok").to_string());
    }
    assert_eq!(
        codes,
        ["ok", "ok", "terminated", "ok", "ok", "ok", "invalid-condition", "evaluation-error", "bad-message", "bad-message"]
    );
}

#[test]
fn output_is_reported_once() {
    let mut server = Server::new(session("loop.tsasm", &[20, 2]), String::new());
    let outputs = |lines: Vec<String>| parse(&lines).into_iter().filter(|v| v["type"] == "output").count();
    assert_eq!(outputs(server.handle_line(r#"{"id":1,"cmd":"continue"}"#)), 1);
    assert_eq!(outputs(server.handle_line(r#"{"id":2,"cmd":"restart"}"#)), 0);
    assert_eq!(outputs(server.handle_line(r#"{"id":3,"cmd":"continue"}"#)), 0);
}

#[test]
fn serve_stops_at_disconnect() {
    let input = concat!(
        r#"{"id":1,"cmd":"step"}"#,
        "\n\n",
        r#"{"id":2,"cmd":"disconnect"}"#,
        "\n",
        r#"{"id":3,"cmd":"step"}"#,
        "\n"
    );
    let mut server = Server::new(session("counting_loop.tsasm", &[]), String::new());
    let mut out = Vec::new();
    server.serve(Cursor::new(input), &mut out).unwrap();
    let lines: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ids: Vec<&Value> = lines.iter().filter_map(|v| v.get("id")).collect();
    assert_eq!(ids, [1, 2]);
    assert!(server.is_done());
}

#[test]
fn pause_interrupts_a_running_command() {
    let (reader, mut writer) = std::io::pipe().unwrap();
    let mut s = session("empty_loop.tsasm", &[4_000_000_000]);
    s.set_budget(u64::MAX);
    let mut server = Server::new(s, String::new());
    let feeder = thread::spawn(move || {
        writeln!(writer, r#"{{"id":1,"cmd":"continue"}}"#).unwrap();
        thread::sleep(Duration::from_millis(100));
        writeln!(writer, r#"{{"id":2,"cmd":"pause"}}"#).unwrap();
        writeln!(writer, r#"{{"id":3,"cmd":"position"}}"#).unwrap();
        writeln!(writer, r#"{{"id":4,"cmd":"disconnect"}}"#).unwrap();
    });
    let mut out = Vec::new();
    server.serve(BufReader::new(reader), &mut out).unwrap();
    feeder.join().unwrap();
    let lines: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["id"], 1);
    assert_eq!(lines[0]["error"]["code"], "interrupted");
    assert_eq!(lines[1]["type"], "stopped");
    assert_eq!(lines[1]["payload"]["reason"]["kind"], "pause");
    assert_eq!(lines[2]["id"], 2);
    assert_eq!(lines[2]["ok"], true);
    assert_eq!(lines[3]["result"]["reason"]["kind"], "pause");
    assert!(server.session().machine().ts() > 1);
}

#[test]
fn bench_counts_repeat_exactly() {
    let suite = load_suite(&corpus_dir().join("bench.toml")).unwrap();
    assert_eq!(suite.bench.len(), 3);
    for spec in &suite.bench {
        let mut quick = spec.clone();
        quick.runs = 1;
        if quick.name == "empty-loop" {
            quick.input = vec![1000];
        }
        let a = run_bench(&quick).unwrap();
        let b = run_bench(&quick).unwrap();
        assert_eq!(
            (a.increments, a.steps_original, a.steps_instrumented, a.size_original, a.size_instrumented),
            (b.increments, b.steps_original, b.steps_instrumented, b.size_original, b.size_instrumented)
        );
        assert!(a.steps_instrumented > a.steps_original);
        assert!(a.size_instrumented > a.size_original);
    }
}
