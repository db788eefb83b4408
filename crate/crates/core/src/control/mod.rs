//! Execution control over a replayable machine.
//!
//! A [`Session`] owns one program, one input tape and one live machine.
//! Because every run is deterministic, going "back" is a restart followed by
//! a forward run to a chosen [`Position`]. Two ways of getting there are
//! provided:
//!
//! * [`Session::goto_position_slow`] restarts with a conditional breakpoint
//!   `ts == T` at the location, evaluated at every visit of that line.
//! * [`Session::goto_position_fast`] restarts with `ref = T`, runs to the
//!   brake, then arms a plain breakpoint at the location. Two traps total.
//!
//! Line breakpoints fire when a frame enters the line: it last executed a
//! different line, or did so under a different timestamp, or has not
//! executed anything yet. A position therefore names the first entry of its
//! line at that timestamp.

mod report;
mod traps;

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, ExprError};
use crate::instrument::instrument;
use crate::isa::Program;
use crate::position::{Location, Position};
use crate::vm::{Image, Machine, Status, TrapKind, VmError, DEFAULT_BUDGET};

pub use report::{FrameSummary, StopReason, StopReport, WatchedValue};
pub use traps::{Breakpoint, Stats, TrapTable, WatchTarget};
pub(crate) use traps::{Hooks, Mode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("no executable instruction at {0}")]
    UnresolvableLocation(Location),
    #[error("unknown watch target `{0}`")]
    UnknownTarget(String),
    #[error("invalid condition: {0}")]
    InvalidCondition(#[from] ExprError),
    #[error("no breakpoint with id {0}")]
    UnknownBreakpoint(u32),
    #[error("no bookmark with id {0}")]
    UnknownBookmark(u32),
    #[error("step budget of {budget} instructions exhausted")]
    BudgetExhausted { budget: u64 },
    #[error("position {0} was not reached")]
    PositionNotReached(Position),
    #[error("timestamp {ts} is not reached; the run ends at {final_ts}")]
    TimestampUnreachable { ts: u64, final_ts: u64 },
    #[error("the program has terminated; restart first")]
    Terminated,
    #[error("interrupted by a pause request")]
    Interrupted,
    #[error("invalid program: {0}")]
    InvalidProgram(String),
}

impl ControlError {
    /// Stable kebab-case identifier.
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::UnresolvableLocation(_) => "unresolvable-location",
            ControlError::UnknownTarget(_) => "unknown-target",
            ControlError::InvalidCondition(_) => "invalid-condition",
            ControlError::UnknownBreakpoint(_) => "unknown-breakpoint",
            ControlError::UnknownBookmark(_) => "unknown-bookmark",
            ControlError::BudgetExhausted { .. } => "budget-exhausted",
            ControlError::PositionNotReached(_) => "position-not-reached",
            ControlError::TimestampUnreachable { .. } => "timestamp-unreachable",
            ControlError::Terminated => "terminated",
            ControlError::Interrupted => "interrupted",
            ControlError::InvalidProgram(_) => "invalid-program",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bookmark {
    pub id: u32,
    pub position: Position,
    pub annotation: String,
}

pub struct Session {
    image: Arc<Image>,
    input: Arc<[i64]>,
    machine: Machine,
    traps: TrapTable,
    bookmarks: BTreeMap<u32, Bookmark>,
    next_bookmark: u32,
    budget: u64,
    stats: Stats,
    pause: Arc<AtomicBool>,
}

impl Session {
    /// Opens a session on `program` as given, held before its first
    /// instruction.
    pub fn new(program: Program, input: Vec<i64>) -> Result<Self, ControlError> {
        let image = Arc::new(
            Image::new(program).map_err(|e| ControlError::InvalidProgram(e.to_string()))?,
        );
        let input: Arc<[i64]> = input.into();
        let mut machine = Machine::new(Arc::clone(&image), Arc::clone(&input));
        machine.hold_at_entry();
        Ok(Self {
            image,
            input,
            machine,
            traps: TrapTable::default(),
            bookmarks: BTreeMap::new(),
            next_bookmark: 0,
            budget: DEFAULT_BUDGET,
            stats: Stats::default(),
            pause: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Like [`Session::new`], instrumenting every function first unless the
    /// program already carries increments.
    pub fn instrumented(program: Program, input: Vec<i64>) -> Result<Self, ControlError> {
        let program = if program.contains_incts() {
            program
        } else {
            instrument(&program, None)
                .map_err(|e| ControlError::InvalidProgram(e.to_string()))?
                .0
        };
        Self::new(program, input)
    }

    pub fn image(&self) -> &Arc<Image> {
        &self.image
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn set_budget(&mut self, budget: u64) {
        self.budget = budget;
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = Stats::default();
    }

    /// Setting the flag stops a running operation before its next
    /// instruction.
    pub fn pause_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.pause)
    }

    pub fn position(&self) -> Position {
        self.machine.current_position()
    }

    pub fn report(&self) -> StopReport {
        StopReport::capture(&self.machine, &self.traps)
    }

    pub fn is_terminated(&self) -> bool {
        self.machine.status().is_terminal()
    }

    /// Back to the initial state. Breakpoints and bookmarks are kept.
    pub fn restart(&mut self) -> StopReport {
        self.reset_machine();
        self.report()
    }

    pub(crate) fn reset_machine(&mut self) {
        self.machine = Machine::new(Arc::clone(&self.image), Arc::clone(&self.input));
        self.machine.hold_at_entry();
    }

    pub fn resolve(&self, location: &Location) -> Result<usize, ControlError> {
        let unresolvable = || ControlError::UnresolvableLocation(location.clone());
        let f = self
            .image
            .function_id(&location.function)
            .map(|id| self.image.function(id))
            .ok_or_else(unresolvable)?;
        f.first_pc_of_line(location.line)
            .filter(|&pc| !f.is_incts(pc))
            .ok_or_else(unresolvable)
    }

    pub fn set_breakpoint(
        &mut self,
        location: Location,
        condition: Option<&str>,
    ) -> Result<u32, ControlError> {
        self.resolve(&location)?;
        let bp = match condition {
            None => Breakpoint::Static { location },
            Some(src) => Breakpoint::Conditional {
                predicate: expr::parse_for(src, &self.image)?,
                condition: src.trim().to_string(),
                location,
            },
        };
        Ok(self.traps.insert(bp))
    }

    pub fn set_watchpoint(&mut self, spec: &str) -> Result<u32, ControlError> {
        let target = WatchTarget::resolve(spec, &self.machine)?;
        Ok(self.traps.insert(Breakpoint::Data { target }))
    }

    pub fn clear(&mut self, id: u32) -> Result<Breakpoint, ControlError> {
        self.traps.remove(id).ok_or(ControlError::UnknownBreakpoint(id))
    }

    pub fn breakpoints(&self) -> &TrapTable {
        &self.traps
    }

    /// Runs under the user's breakpoints until a trap or termination.
    pub fn cont(&mut self) -> Result<StopReport, ControlError> {
        self.ensure_live()?;
        let table = std::mem::take(&mut self.traps);
        let result = self.drive(&table, Mode::Continue);
        self.traps = table;
        result?;
        Ok(self.report())
    }

    /// Runs to the next line entry in any frame.
    pub fn step_line(&mut self) -> Result<StopReport, ControlError> {
        self.ensure_live()?;
        let table = std::mem::take(&mut self.traps);
        let mode = Mode::StepLine {
            from_steps: self.machine.state().steps,
        };
        let result = self.drive(&table, mode);
        self.traps = table;
        result?;
        Ok(self.report())
    }

    fn ensure_live(&self) -> Result<(), ControlError> {
        if self.is_terminated() {
            Err(ControlError::Terminated)
        } else {
            Ok(())
        }
    }

    /// Resumes the machine under `table`. Brakes are counted here; the hooks
    /// count everything else.
    pub(crate) fn drive(&mut self, table: &TrapTable, mode: Mode) -> Result<(), ControlError> {
        let image = Arc::clone(&self.image);
        let mut hooks = Hooks::new(&image, table, mode, &mut self.stats, &self.pause);
        let status = self
            .machine
            .resume(&mut hooks, self.budget)
            .map_err(|e| match e {
                VmError::BudgetExhausted { budget } => ControlError::BudgetExhausted { budget },
                other => ControlError::InvalidProgram(other.to_string()),
            })?;
        match status {
            Status::Stopped(TrapKind::Brake) => self.stats.trap_activations += 1,
            Status::Stopped(TrapKind::Pause) => return Err(ControlError::Interrupted),
            _ => {}
        }
        Ok(())
    }

    pub(crate) fn replace_machine(&mut self, machine: Machine) {
        self.machine = machine;
    }

    pub(crate) fn set_reference(&mut self, reference: Option<u64>) {
        self.machine.set_reference(reference);
    }

    /// Restarts and runs to the first instruction executed with `ts == t`,
    /// just after the increment that produced it. `t = 0` is the initial
    /// state.
    pub fn goto_timestamp(&mut self, t: u64) -> Result<StopReport, ControlError> {
        self.reset_machine();
        if t > 0 {
            self.run_to_brake(t)?;
        }
        Ok(self.report())
    }

    fn run_to_brake(&mut self, t: u64) -> Result<(), ControlError> {
        self.set_reference(Some(t));
        let result = self.drive(&TrapTable::default(), Mode::Continue);
        self.set_reference(None);
        result?;
        if self.machine.status() != &Status::Stopped(TrapKind::Brake) {
            return Err(ControlError::TimestampUnreachable {
                ts: t,
                final_ts: self.machine.ts(),
            });
        }
        Ok(())
    }

    /// Dynamic breakpoint via a conditional breakpoint `ts == T`.
    pub fn goto_position_slow(&mut self, position: &Position) -> Result<StopReport, ControlError> {
        self.resolve(&position.location)?;
        self.reset_machine();
        let mut table = TrapTable::default();
        table.insert(Breakpoint::Conditional {
            location: position.location.clone(),
            condition: format!("ts == {}", position.ts),
            predicate: expr::parse(&format!("ts == {}", position.ts))?,
        });
        self.drive(&table, Mode::Continue)?;
        self.arrived_at(position)
    }

    /// Dynamic breakpoint via the brake: `ref = T`, run, then one static
    /// breakpoint at the location.
    pub fn goto_position_fast(&mut self, position: &Position) -> Result<StopReport, ControlError> {
        self.resolve(&position.location)?;
        self.reset_machine();
        if position.ts > 0 {
            self.run_to_brake(position.ts).map_err(|e| match e {
                ControlError::TimestampUnreachable { .. } => {
                    ControlError::PositionNotReached(position.clone())
                }
                other => other,
            })?;
        }
        let mut table = TrapTable::default();
        table.insert(Breakpoint::Static {
            location: position.location.clone(),
        });
        self.drive(&table, Mode::Continue)?;
        self.arrived_at(position)
    }

    fn arrived_at(&self, position: &Position) -> Result<StopReport, ControlError> {
        let stopped = matches!(
            self.machine.status(),
            Status::Stopped(TrapKind::Breakpoint(_) | TrapKind::ConditionalBreakpoint(_))
        );
        if stopped && &self.position() == position {
            let mut report = self.report();
            if let StopReason::Breakpoint { id } | StopReason::ConditionalBreakpoint { id } =
                &mut report.reason
            {
                *id = 0;
            }
            Ok(report)
        } else {
            Err(ControlError::PositionNotReached(position.clone()))
        }
    }

    pub fn bookmark(&mut self, annotation: impl Into<String>) -> Bookmark {
        self.next_bookmark += 1;
        let mark = Bookmark {
            id: self.next_bookmark,
            position: self.position(),
            annotation: annotation.into(),
        };
        self.bookmarks.insert(mark.id, mark.clone());
        mark
    }

    pub fn bookmarks(&self) -> impl Iterator<Item = &Bookmark> {
        self.bookmarks.values()
    }

    pub fn goto_bookmark(&mut self, id: u32) -> Result<StopReport, ControlError> {
        let position = self
            .bookmarks
            .get(&id)
            .ok_or(ControlError::UnknownBookmark(id))?
            .position
            .clone();
        self.goto_position_fast(&position)
    }
}
