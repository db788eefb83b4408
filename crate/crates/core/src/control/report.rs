use std::fmt;

use serde::Serialize;

use crate::position::{Location, Position};
use crate::vm::{Machine, Status, TrapKind};

use super::traps::{Breakpoint, TrapTable, WatchTarget};

/// Breakpoint ids are those of the session's table; 0 marks a trap armed
/// internally by a driver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Entry,
    Breakpoint {
        id: u32,
    },
    ConditionalBreakpoint {
        id: u32,
    },
    Watchpoint {
        id: u32,
        target: String,
        value: i64,
        /// Where the writing instruction sits; the machine itself is
        /// already past it.
        writer: Location,
    },
    PredicateError {
        id: u32,
        message: String,
    },
    Step,
    Pause,
    Brake,
    Exited {
        code: i64,
    },
    Faulted {
        message: String,
    },
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Entry => f.write_str("entry"),
            StopReason::Breakpoint { id: 0 } | StopReason::ConditionalBreakpoint { id: 0 } => {
                f.write_str("arrived")
            }
            StopReason::Watchpoint {
                id: 0,
                target,
                value,
                writer,
            } => write!(f, "last write: {target} = {value} (at {writer})"),
            StopReason::Breakpoint { id } => write!(f, "breakpoint {id}"),
            StopReason::ConditionalBreakpoint { id } => write!(f, "conditional breakpoint {id}"),
            StopReason::Watchpoint {
                id,
                target,
                value,
                writer,
            } => write!(f, "watchpoint {id}: {target} = {value} (written at {writer})"),
            StopReason::PredicateError { id, message } => {
                write!(f, "breakpoint {id}: condition failed: {message}")
            }
            StopReason::Step => f.write_str("step"),
            StopReason::Pause => f.write_str("paused"),
            StopReason::Brake => f.write_str("brake"),
            StopReason::Exited { code } => write!(f, "exited with code {code}"),
            StopReason::Faulted { message } => write!(f, "fault: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameSummary {
    pub function: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WatchedValue {
    pub id: u32,
    pub target: WatchTarget,
    pub value: Option<i64>,
}

/// Where and why the session stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StopReport {
    pub reason: StopReason,
    pub position: Position,
    /// Instructions executed so far.
    pub seq: u64,
    /// Innermost frame first; caller frames report their call line.
    pub stack: Vec<FrameSummary>,
    pub watched: Vec<WatchedValue>,
}

impl StopReport {
    pub(crate) fn capture(m: &Machine, table: &TrapTable) -> Self {
        let reason = match m.status() {
            Status::Exited(code) => StopReason::Exited { code: *code },
            Status::Faulted(fault) => StopReason::Faulted {
                message: fault.to_string(),
            },
            Status::Running => StopReason::Pause,
            Status::Stopped(kind) => match kind {
                TrapKind::Brake => StopReason::Brake,
                TrapKind::Breakpoint(id) => StopReason::Breakpoint { id: *id },
                TrapKind::ConditionalBreakpoint(id) => StopReason::ConditionalBreakpoint { id: *id },
                TrapKind::Watchpoint { id, write } => {
                    let (func, pc) = m.state().last.expect("a write was executed");
                    StopReason::Watchpoint {
                        id: *id,
                        target: m.name_target(write.target).to_string(),
                        value: write.value,
                        writer: m.location_of(func, pc),
                    }
                }
                TrapKind::PredicateError { id, message } => StopReason::PredicateError {
                    id: *id,
                    message: message.clone(),
                },
                TrapKind::Step => StopReason::Step,
                TrapKind::Pause => StopReason::Pause,
                TrapKind::Entry => StopReason::Entry,
            },
        };
        let stack = if m.status().is_terminal() {
            Vec::new()
        } else {
            let frames = &m.state().frames;
            frames
                .iter()
                .rev()
                .enumerate()
                .map(|(depth, f)| {
                    let pc = if depth == 0 { f.pc } else { f.pc - 1 };
                    let code = m.image().function(f.func);
                    FrameSummary {
                        function: code.name.clone(),
                        line: code.lines[pc],
                    }
                })
                .collect()
        };
        let watched = table
            .iter()
            .filter_map(|(id, bp)| match bp {
                Breakpoint::Data { target } => Some(WatchedValue {
                    id,
                    target: target.clone(),
                    value: target.value(m),
                }),
                _ => None,
            })
            .collect();
        StopReport {
            reason,
            position: m.current_position(),
            seq: m.state().steps,
            stack,
            watched,
        }
    }
}

impl fmt::Display for StopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stopped at {} [{}]", self.position, self.reason)?;
        for w in &self.watched {
            match w.value {
                Some(v) => write!(f, "\n  {} = {v}", w.target)?,
                None => write!(f, "\n  {} = <unallocated>", w.target)?,
            }
        }
        Ok(())
    }
}
