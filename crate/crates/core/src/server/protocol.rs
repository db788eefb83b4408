//! Line-delimited JSON debug protocol.
//!
//! Requests are `{"id": n, "cmd": "...", "args": {...}}`. Every request gets
//! exactly one response, `{"id": n, "ok": true, "result": ...}` or
//! `{"id": n, "ok": false, "error": {"code": "...", "message": "..."}}`.
//! Events have no id: `{"type": "stopped" | "output" | "terminated" |
//! "progress", "payload": ...}`.
//!
//! Verbs that move the machine answer with the new position, except
//! `reverse_watchpoint` and `binary_search`, which answer with their full
//! result. The stop report follows in the `stopped` or `terminated` event.
//!
//! For one request the order on the wire is: progress events, the
//! response, new guest output, then `stopped` or `terminated` if the
//! machine moved. Output is reported once; replays that reproduce output
//! already shown stay silent.

use std::io::{self, BufRead, Write};
use std::sync::atomic::Ordering;
use std::sync::mpsc;
use std::thread;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::autodebug::{self, AutodebugError, Progress};
use crate::control::{ControlError, Session, StopReport};
use crate::expr;
use crate::position::{Location, Position};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolError {
    pub code: String,
    pub message: String,
}

impl ProtocolError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl From<ControlError> for ProtocolError {
    fn from(e: ControlError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<AutodebugError> for ProtocolError {
    fn from(e: AutodebugError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

#[derive(Deserialize)]
struct Request {
    id: i64,
    cmd: String,
    #[serde(default)]
    args: Value,
}

#[derive(Deserialize)]
struct BreakArgs {
    function: String,
    line: u32,
    condition: Option<String>,
}

#[derive(Deserialize)]
struct TargetArgs {
    target: String,
}

#[derive(Deserialize)]
struct IdArgs {
    id: u32,
}

#[derive(Deserialize)]
struct BookmarkArgs {
    #[serde(default)]
    annotation: String,
}

#[derive(Deserialize, Default, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum GotoMode {
    #[default]
    Fast,
    Slow,
}

#[derive(Deserialize)]
struct GotoArgs {
    function: String,
    line: u32,
    ts: u64,
    #[serde(default)]
    mode: GotoMode,
}

#[derive(Deserialize)]
struct TsArgs {
    ts: u64,
}

#[derive(Deserialize)]
struct SearchArgs {
    condition: String,
    lo: u64,
    hi: u64,
}

#[derive(Deserialize)]
struct EvalArgs {
    expression: String,
}

fn args<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, ProtocolError> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| ProtocolError::new("bad-arguments", e.to_string()))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol types serialize")
}

/// Verbs that may move the machine, even when they fail.
const MOVING: &[&str] = &[
    "restart",
    "continue",
    "step",
    "goto_bookmark",
    "goto_position",
    "goto_timestamp",
    "reverse_watchpoint",
    "binary_search",
];

/// One debug session behind the protocol.
pub struct Server {
    session: Session,
    source: String,
    output_shown: usize,
    done: bool,
}

struct Outcome {
    result: Value,
    /// The stop report of a movement.
    moved: Option<StopReport>,
}

impl Outcome {
    fn stay(result: Value) -> Self {
        Self { result, moved: None }
    }

    fn moved(report: StopReport) -> Self {
        Self {
            result: to_value(&report.position),
            moved: Some(report),
        }
    }

    fn moved_with(result: Value, report: StopReport) -> Self {
        Self {
            result,
            moved: Some(report),
        }
    }
}

impl Server {
    /// `source` is returned by the `source` verb.
    pub fn new(session: Session, source: String) -> Self {
        Self {
            session,
            source,
            output_shown: 0,
            done: false,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        &mut self.session
    }

    /// True after `disconnect`.
    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Handles one request line and returns the lines to send back.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        let mut progress = Vec::new();
        let mut moving = false;
        let (id, outcome) = match serde_json::from_str::<Request>(line) {
            Err(e) => {
                let id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .filter(Value::is_i64)
                    .unwrap_or(Value::Null);
                (id, Err(ProtocolError::new("bad-message", e.to_string())))
            }
            Ok(req) => {
                moving = MOVING.contains(&req.cmd.as_str());
                let outcome = self.dispatch(&req.cmd, &req.args, &mut |p| progress.push(p));
                (json!(req.id), outcome)
            }
        };

        let mut out: Vec<Value> = progress
            .into_iter()
            .map(|p| json!({"type": "progress", "payload": p}))
            .collect();
        let report = match outcome {
            Ok(o) => {
                out.push(json!({"id": id, "ok": true, "result": o.result}));
                o.moved
            }
            Err(e) => {
                out.push(json!({
                    "id": id,
                    "ok": false,
                    "error": {"code": e.code, "message": e.message},
                }));
                let moved = moving && e.code != "bad-arguments" && e.code != "terminated";
                moved.then(|| self.session.report())
            }
        };
        if let Some(report) = report {
            out.extend(self.movement_events(report));
        }
        out.into_iter().map(|v| v.to_string()).collect()
    }

    fn movement_events(&mut self, report: StopReport) -> Vec<Value> {
        let mut events = Vec::new();
        let output = &self.session.machine().state().output;
        if output.len() > self.output_shown {
            events.push(json!({
                "type": "output",
                "payload": {"values": &output[self.output_shown..]},
            }));
            self.output_shown = output.len();
        }
        if self.session.is_terminated() {
            events.push(json!({"type": "terminated", "payload": report}));
        } else {
            events.push(json!({"type": "stopped", "payload": report}));
        }
        events
    }

    fn dispatch(
        &mut self,
        cmd: &str,
        a: &Value,
        progress: &mut dyn FnMut(Progress),
    ) -> Result<Outcome, ProtocolError> {
        let s = &mut self.session;
        Ok(match cmd {
            "restart" => Outcome::moved(s.restart()),
            "continue" => Outcome::moved(s.cont()?),
            "step" => Outcome::moved(s.step_line()?),
            "position" => Outcome::stay(to_value(&s.report())),
            "break" => {
                let b: BreakArgs = args(a)?;
                let id = s.set_breakpoint(Location::new(b.function, b.line), b.condition.as_deref())?;
                Outcome::stay(json!({ "id": id }))
            }
            "watch" => {
                let t: TargetArgs = args(a)?;
                let id = s.set_watchpoint(&t.target)?;
                Outcome::stay(json!({ "id": id }))
            }
            "clear" => {
                let IdArgs { id } = args(a)?;
                s.clear(id)?;
                Outcome::stay(Value::Null)
            }
            "breakpoints" => Outcome::stay(Value::Array(
                s.breakpoints()
                    .iter()
                    .map(|(id, bp)| {
                        let mut v = to_value(bp);
                        v["id"] = json!(id);
                        v
                    })
                    .collect(),
            )),
            "bookmark" => {
                let b: BookmarkArgs = args(a)?;
                Outcome::stay(to_value(&s.bookmark(b.annotation)))
            }
            "bookmarks" => Outcome::stay(to_value(&s.bookmarks().collect::<Vec<_>>())),
            "goto_bookmark" => {
                let IdArgs { id } = args(a)?;
                Outcome::moved(s.goto_bookmark(id)?)
            }
            "goto_position" => {
                let g: GotoArgs = args(a)?;
                let p = Position::new(g.function, g.line, g.ts);
                Outcome::moved(match g.mode {
                    GotoMode::Fast => s.goto_position_fast(&p)?,
                    GotoMode::Slow => s.goto_position_slow(&p)?,
                })
            }
            "goto_timestamp" => {
                let TsArgs { ts } = args(a)?;
                Outcome::moved(s.goto_timestamp(ts)?)
            }
            "reverse_watchpoint" => {
                let t: TargetArgs = args(a)?;
                let rw = autodebug::reverse_watchpoint(s, &t.target, progress)?;
                Outcome::moved_with(to_value(&rw), rw.landing)
            }
            "binary_search" => {
                let b: SearchArgs = args(a)?;
                let o = autodebug::binary_search(s, &b.condition, b.lo, b.hi, progress)?;
                Outcome::moved_with(to_value(&o), o.landing.clone())
            }
            "evaluate" => {
                let EvalArgs { expression } = args(a)?;
                let e = expr::parse_for(&expression, s.image())
                    .map_err(|e| ProtocolError::new("invalid-condition", e.to_string()))?;
                let v = e
                    .eval(s.machine())
                    .map_err(|e| ProtocolError::new("evaluation-error", e.to_string()))?;
                Outcome::stay(json!({ "value": v }))
            }
            "stats" => Outcome::stay(to_value(&s.stats())),
            "source" => Outcome::stay(json!({ "text": self.source })),
            // the flag is raised by the reader as soon as the request arrives;
            // whatever is left of it now would only stop the next command
            "pause" => {
                s.pause_handle().store(false, Ordering::SeqCst);
                Outcome::stay(Value::Null)
            }
            "disconnect" => {
                self.done = true;
                Outcome::stay(Value::Null)
            }
            other => {
                return Err(ProtocolError::new(
                    "unknown-command",
                    format!("unknown command `{other}`"),
                ))
            }
        })
    }

    /// Serves requests from `input` until `disconnect` or end of input.
    ///
    /// Lines are read on a separate thread so that a `pause` request can
    /// interrupt the command being executed.
    pub fn serve<R: BufRead + Send, W: Write>(&mut self, input: R, mut output: W) -> io::Result<()> {
        let pause = self.session.pause_handle();
        let (tx, rx) = mpsc::channel::<io::Result<String>>();
        thread::scope(|scope| {
            scope.spawn(move || {
                for line in input.lines() {
                    if let Ok(l) = &line {
                        if is_pause(l) {
                            pause.store(true, Ordering::SeqCst);
                        }
                    }
                    let failed = line.is_err();
                    if tx.send(line).is_err() || failed {
                        break;
                    }
                }
            });
            for line in rx {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                for reply in self.handle_line(&line) {
                    writeln!(output, "{reply}")?;
                }
                output.flush()?;
                if self.done {
                    break;
                }
            }
            Ok(())
        })
    }
}

fn is_pause(line: &str) -> bool {
    serde_json::from_str::<Request>(line).is_ok_and(|r| r.cmd == "pause")
}
