//! Replay-driven debugging procedures built on positions.
//!
//! [`reverse_watchpoint`] moves a stopped session back to the last write of
//! a target before the current position. [`binary_search`] bisects over
//! timestamps for the first epoch at which a predicate stops holding.
//!
//! Both use private trap tables and leave the user's breakpoints alone.

use serde::Serialize;
use thiserror::Error;

use crate::control::{
    Breakpoint, ControlError, Mode, Session, StopReason, StopReport, TrapTable, WatchTarget,
};
use crate::expr::{self, EvalError, ExprError};
use crate::position::{Location, Position};
use crate::vm::{Status, TrapKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodebugError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("`{target}` is not written before {position}")]
    NoWritesBeforeS { target: String, position: Position },
    #[error("condition must hold at ts {lo} and fail at ts {hi} (got {pred_lo} and {pred_hi})")]
    NotMonotoneAtEndpoints {
        lo: u64,
        hi: u64,
        pred_lo: bool,
        pred_hi: bool,
    },
    #[error("empty range: lo {lo} must be below hi {hi}")]
    EmptyRange { lo: u64, hi: u64 },
    #[error("invalid condition: {0}")]
    InvalidCondition(#[from] ExprError),
    #[error("condition failed at ts {ts}: {error}")]
    Evaluation { ts: u64, error: EvalError },
}

impl AutodebugError {
    pub fn code(&self) -> &'static str {
        match self {
            AutodebugError::Control(e) => e.code(),
            AutodebugError::NoWritesBeforeS { .. } => "no-writes-before-s",
            AutodebugError::NotMonotoneAtEndpoints { .. } => "not-monotone-at-endpoints",
            AutodebugError::EmptyRange { .. } => "empty-range",
            AutodebugError::InvalidCondition(_) => "invalid-condition",
            AutodebugError::Evaluation { .. } => "evaluation-error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WriteRecord {
    /// Location of the writing instruction and the timestamp it ran under.
    pub position: Position,
    pub target: WatchTarget,
    pub value: i64,
    /// 1-based count of watch stops in the first pass.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Progress {
    Pass { pass: u8 },
    Write { record: WriteRecord },
    Endpoint { ts: u64, value: bool },
    Probe { ts: u64, value: bool, reachable: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReverseWatch {
    /// The position the search started from.
    pub start: Position,
    pub writes: Vec<WriteRecord>,
    /// Where the session ended: just after the last write.
    pub landing: StopReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Probe {
    pub ts: u64,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchOutcome {
    /// Smallest timestamp at which the condition is false.
    pub boundary_ts: u64,
    /// Bisection midpoints in the order they were examined.
    pub probes: Vec<Probe>,
    /// The two range checks made before bisecting.
    pub endpoints: [Probe; 2],
    /// The condition held at `boundary_ts - 1`.
    pub verified: bool,
    pub diagnostics: Vec<String>,
    pub landing: StopReport,
}

/// Replays to the last write of `target` strictly before the current
/// position `S` and leaves the session stopped just after that write.
///
/// Pass 1 restarts with `ref = S.ts` and a watch on the target, recording
/// every watch stop. At the brake a breakpoint is armed at `S`'s location,
/// and stopping there under `S.ts` ends the pass. Pass 2 restarts, brakes at
/// the last write's timestamp and counts watch stops up to that write.
///
/// When the session sits on an `incts`, `S` is the end of its epoch and the
/// pass ends at the brake for `S.ts + 1`. A terminated session uses the end
/// of the run. If nothing was written the session is put back at `S`.
pub fn reverse_watchpoint(
    session: &mut Session,
    target: &str,
    progress: &mut dyn FnMut(Progress),
) -> Result<ReverseWatch, AutodebugError> {
    let target = WatchTarget::resolve(target, session.machine())?;
    let start = session.position();
    let saved = session.machine().clone();
    let no_writes = |session: &mut Session, saved: crate::vm::Machine| {
        session.replace_machine(saved);
        AutodebugError::NoWritesBeforeS {
            target: target.to_string(),
            position: start.clone(),
        }
    };
    if saved.state().steps == 0 {
        return Err(no_writes(session, saved));
    }
    let end = if saved.status().is_terminal() {
        End::Termination
    } else if saved.at_increment() {
        End::Brake
    } else {
        End::Breakpoint
    };

    progress(Progress::Pass { pass: 1 });
    let mut table = TrapTable::default();
    table.insert(Breakpoint::Data {
        target: target.clone(),
    });
    session.reset_machine();
    match end {
        End::Termination => {}
        End::Brake => session.set_reference(Some(start.ts + 1)),
        End::Breakpoint if start.ts > 0 => session.set_reference(Some(start.ts)),
        End::Breakpoint => {
            table.insert(static_at(&start.location));
        }
    }
    let mut writes: Vec<WriteRecord> = Vec::new();
    let reached = loop {
        let result = session.drive(&table, Mode::Continue);
        if result.is_err() {
            session.set_reference(None);
        }
        result?;
        let m = session.machine();
        match m.status() {
            Status::Stopped(TrapKind::Watchpoint { write, .. }) => {
                let (func, pc) = m.state().last.expect("a write was executed");
                let record = WriteRecord {
                    position: Position {
                        location: m.location_of(func, pc),
                        ts: m.ts(),
                    },
                    target: target.clone(),
                    value: write.value,
                    ordinal: writes.len() + 1,
                };
                progress(Progress::Write {
                    record: record.clone(),
                });
                writes.push(record);
            }
            Status::Stopped(TrapKind::Brake) => {
                session.set_reference(None);
                if end == End::Brake {
                    break true;
                }
                table.insert(static_at(&start.location));
            }
            Status::Stopped(TrapKind::Breakpoint(_)) => break session.position() == start,
            status if status.is_terminal() => break end == End::Termination,
            _ => break false,
        }
    };
    if !reached {
        return Err(ControlError::PositionNotReached(start).into());
    }
    let Some(last) = writes.last().cloned() else {
        return Err(no_writes(session, saved));
    };

    progress(Progress::Pass { pass: 2 });
    let same_epoch = writes.iter().filter(|w| w.position.ts == last.position.ts).count();
    session.goto_timestamp(last.position.ts)?;
    let mut watch = TrapTable::default();
    watch.insert(Breakpoint::Data {
        target: target.clone(),
    });
    for _ in 0..same_epoch {
        session.drive(&watch, Mode::Continue)?;
        if !matches!(session.machine().status(), Status::Stopped(TrapKind::Watchpoint { .. })) {
            return Err(ControlError::PositionNotReached(last.position).into());
        }
    }
    let m = session.machine();
    let (func, pc) = m.state().last.expect("a write was executed");
    if m.ts() != last.position.ts || m.location_of(func, pc) != last.position.location {
        return Err(ControlError::PositionNotReached(last.position).into());
    }
    let landing = watch_landing(session);
    Ok(ReverseWatch {
        start,
        writes,
        landing,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum End {
    Breakpoint,
    Brake,
    Termination,
}

fn static_at(location: &Location) -> Breakpoint {
    Breakpoint::Static {
        location: location.clone(),
    }
}

/// Private traps report id 0.
fn watch_landing(session: &Session) -> StopReport {
    let mut report = session.report();
    if let StopReason::Watchpoint { id, .. } = &mut report.reason {
        *id = 0;
    }
    report
}

/// Finds the smallest timestamp in `(lo, hi]` at which `condition` is false,
/// given that it holds at `lo` and fails at `hi`.
///
/// The condition is evaluated at the first instruction of each probed epoch
/// (the state right after the brake), or at the initial state for ts 0.
/// The session ends stopped at the boundary.
pub fn binary_search(
    session: &mut Session,
    condition: &str,
    lo: u64,
    hi: u64,
    progress: &mut dyn FnMut(Progress),
) -> Result<SearchOutcome, AutodebugError> {
    let predicate = expr::parse_for(condition, session.image())?;
    if lo >= hi {
        return Err(AutodebugError::EmptyRange { lo, hi });
    }
    let eval_at = |session: &mut Session, ts: u64| -> Result<bool, AutodebugError> {
        session.goto_timestamp(ts)?;
        predicate
            .holds(session.machine())
            .map_err(|error| AutodebugError::Evaluation { ts, error })
    };

    let pred_lo = eval_at(session, lo)?;
    progress(Progress::Endpoint { ts: lo, value: pred_lo });
    let pred_hi = eval_at(session, hi)?;
    progress(Progress::Endpoint { ts: hi, value: pred_hi });
    if !pred_lo || pred_hi {
        return Err(AutodebugError::NotMonotoneAtEndpoints {
            lo,
            hi,
            pred_lo,
            pred_hi,
        });
    }

    let (mut lo_ts, mut hi_ts) = (lo, hi);
    let mut probes = Vec::new();
    let mut diagnostics = Vec::new();
    while hi_ts - lo_ts > 1 {
        let mid = lo_ts + (hi_ts - lo_ts) / 2;
        let (value, reachable) = match eval_at(session, mid) {
            Ok(v) => (v, true),
            Err(AutodebugError::Control(ControlError::TimestampUnreachable { final_ts, .. })) => {
                diagnostics.push(format!(
                    "ts {mid} is not reached (run ends at {final_ts}); treated as false"
                ));
                (false, false)
            }
            Err(e) => return Err(e),
        };
        progress(Progress::Probe {
            ts: mid,
            value,
            reachable,
        });
        probes.push(Probe { ts: mid, value });
        if value {
            lo_ts = mid;
        } else {
            hi_ts = mid;
        }
    }
    let landing = session.goto_timestamp(hi_ts)?;
    Ok(SearchOutcome {
        boundary_ts: hi_ts,
        verified: lo_ts + 1 == hi_ts,
        probes,
        endpoints: [
            Probe { ts: lo, value: pred_lo },
            Probe { ts: hi, value: pred_hi },
        ],
        diagnostics,
        landing,
    })
}
