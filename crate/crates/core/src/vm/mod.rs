//! Deterministic interpreter with the timestamp runtime.
//!
//! The machine keeps a counter `ts` and an optional trap threshold `ref`.
//! Executing `incts` does `ts += 1` and stops the machine with
//! [`TrapKind::Brake`] when the new value equals `ref`. Breakpoint-style
//! traps are consulted through [`TrapHooks`] before an instruction executes;
//! write traps are consulted after the write commits.
//!
//! `incts` is invisible to `before` hooks: it is never a stop point and does
//! not count as a line of its own.

mod link;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{IsaError, Program};
use crate::position::{Location, Position};

pub use link::{FieldId, FuncId, GlobalId, Image, LinkedFunction};
pub(crate) use link::Ins;

pub const DEFAULT_BUDGET: u64 = 100_000_000;
pub const MAX_CALL_DEPTH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampState {
    pub ts: u64,
    /// Trap threshold; `None` means unset.
    pub reference: Option<u64>,
}

impl Default for TimestampState {
    fn default() -> Self {
        Self { ts: 0, reference: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum FaultKind {
    DivideByZero,
    NilHandle(i64),
    StackOverflow,
    StackUnderflow,
    UnhandledThrow(i64),
    InputExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub kind: FaultKind,
    /// Ordinal of the instruction that faulted.
    pub seq: u64,
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            FaultKind::DivideByZero => write!(f, "divide by zero")?,
            FaultKind::NilHandle(h) => write!(f, "nil or dangling handle {h}")?,
            FaultKind::StackOverflow => write!(f, "call stack overflow")?,
            FaultKind::StackUnderflow => write!(f, "operand stack underflow")?,
            FaultKind::UnhandledThrow(v) => write!(f, "unhandled throw of {v}")?,
            FaultKind::InputExhausted => write!(f, "input exhausted")?,
        }
        write!(f, " at instruction {}", self.seq)
    }
}

/// Where a write landed, by dense id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Global(GlobalId),
    Field { handle: i64, field: FieldId },
    Local { slot: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Write {
    pub target: Target,
    pub value: i64,
}

/// A write target by name, as it appears in traces and reports.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedTarget {
    Global(String),
    Field { handle: i64, field: String },
    Local(usize),
}

impl std::fmt::Display for NamedTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NamedTarget::Global(g) => f.write_str(g),
            NamedTarget::Field { handle, field } => write!(f, "#{handle}.{field}"),
            NamedTarget::Local(s) => write!(f, "local {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceWrite {
    pub target: NamedTarget,
    pub value: i64,
}

/// One executed instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub function: String,
    pub pc: usize,
    pub line: u32,
    /// Timestamp when the instruction started; for `incts` this is the
    /// value before the increment.
    pub ts: u64,
    /// Call depth, 1 for `main`.
    pub depth: usize,
    pub incts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write: Option<TraceWrite>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrapKind {
    /// `incts` made `ts == ref`.
    Brake,
    Breakpoint(u32),
    ConditionalBreakpoint(u32),
    Watchpoint { id: u32, write: Write },
    /// A conditional breakpoint's predicate failed to evaluate.
    PredicateError { id: u32, message: String },
    Step,
    Pause,
    /// Held before the first instruction.
    Entry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Running,
    Stopped(TrapKind),
    Exited(i64),
    Faulted(Fault),
}

impl Status {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Status::Exited(_) | Status::Faulted(_))
    }
}

/// The instruction about to execute.
#[derive(Debug, Clone, Copy)]
pub struct Site {
    pub func: FuncId,
    pub pc: usize,
    pub line: u32,
    /// True when this frame last executed a different line, or executed its
    /// last instruction under a different timestamp, or has executed nothing
    /// yet. Returning from a call therefore re-enters the caller's line.
    pub line_entry: bool,
}

pub trait TrapHooks {
    /// Polled once per step, before anything else.
    fn poll(&mut self) -> Option<TrapKind> {
        None
    }

    fn before(&mut self, _machine: &Machine, _site: &Site) -> Option<TrapKind> {
        None
    }

    fn after_write(&mut self, _machine: &Machine, _write: &Write) -> Option<TrapKind> {
        None
    }
}

pub struct NoTraps;

impl TrapHooks for NoTraps {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub func: FuncId,
    pub pc: usize,
    pub locals: Vec<i64>,
    pub stack: Vec<i64>,
    last_line: Option<u32>,
    last_ts: u64,
}

pub type Record = BTreeMap<FieldId, i64>;

/// Everything that determines where the guest is. Pure data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub frames: Vec<Frame>,
    pub globals: Vec<i64>,
    /// Handle `h` lives at `heap[h - 1]`.
    pub heap: Vec<Record>,
    pub cursor: usize,
    pub output: Vec<i64>,
    pub ts: TimestampState,
    pub status: Status,
    /// Instructions executed so far; the `seq` of the next one.
    pub steps: u64,
    /// Last instruction executed (or attempted, on a fault).
    pub last: Option<(FuncId, usize)>,
    resume_past_trap: bool,
}

impl MachineState {
    /// Equality of guest-visible state and timestamp, ignoring the stop
    /// reason and the trap threshold.
    pub fn same_point(&self, other: &MachineState) -> bool {
        self.frames == other.frames
            && self.globals == other.globals
            && self.heap == other.heap
            && self.cursor == other.cursor
            && self.output == other.output
            && self.ts.ts == other.ts.ts
            && self.steps == other.steps
            && self.last == other.last
            && self.status.is_terminal() == other.status.is_terminal()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error(transparent)]
    Invalid(#[from] IsaError),
    #[error("step budget of {budget} instructions exhausted")]
    BudgetExhausted { budget: u64 },
    #[error("guest fault: {0}")]
    Fault(Fault),
}

#[derive(Clone)]
pub struct Machine {
    image: Arc<Image>,
    input: Arc<[i64]>,
    state: MachineState,
    trace: Option<Vec<TraceEvent>>,
}

impl Machine {
    pub fn new(image: Arc<Image>, input: Arc<[i64]>) -> Self {
        let entry = image.entry();
        let frame = Frame {
            func: entry,
            pc: 0,
            locals: vec![0; image.function(entry).nlocals],
            stack: Vec::new(),
            last_line: None,
            last_ts: 0,
        };
        let state = MachineState {
            frames: vec![frame],
            globals: image.global_inits().collect(),
            heap: Vec::new(),
            cursor: 0,
            output: Vec::new(),
            ts: TimestampState::default(),
            status: Status::Running,
            steps: 0,
            last: None,
            resume_past_trap: false,
        };
        Self {
            image,
            input,
            state,
            trace: None,
        }
    }

    pub fn image(&self) -> &Arc<Image> {
        &self.image
    }

    pub fn input(&self) -> &Arc<[i64]> {
        &self.input
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn status(&self) -> &Status {
        &self.state.status
    }

    pub fn ts(&self) -> u64 {
        self.state.ts.ts
    }

    pub fn set_reference(&mut self, reference: Option<u64>) {
        self.state.ts.reference = reference;
    }

    /// Marks the machine as held before its first instruction.
    pub fn hold_at_entry(&mut self) {
        if self.state.steps == 0 && !self.state.status.is_terminal() {
            self.state.status = Status::Stopped(TrapKind::Entry);
        }
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceEvent>> {
        self.trace.take()
    }

    pub fn global(&self, name: &str) -> Option<i64> {
        self.image.global_id(name).map(|g| self.state.globals[g])
    }

    /// Reads `handle.field`; `None` for a nil or dangling handle.
    pub fn field(&self, handle: i64, field: &str) -> Option<i64> {
        let record = self.record(handle)?;
        Some(
            self.image
                .field_id(field)
                .and_then(|f| record.get(&f).copied())
                .unwrap_or(0),
        )
    }

    pub fn record(&self, handle: i64) -> Option<&Record> {
        usize::try_from(handle)
            .ok()
            .and_then(|h| h.checked_sub(1))
            .and_then(|h| self.state.heap.get(h))
    }

    pub fn name_target(&self, target: Target) -> NamedTarget {
        match target {
            Target::Global(g) => NamedTarget::Global(self.image.global_name(g).to_string()),
            Target::Field { handle, field } => NamedTarget::Field {
                handle,
                field: self.image.field_name(field).to_string(),
            },
            Target::Local { slot } => NamedTarget::Local(slot),
        }
    }

    /// Function and pc of the instruction about to execute, or of the last
    /// executed one once the machine has terminated.
    pub fn current_site(&self) -> Option<(FuncId, usize)> {
        if self.state.status.is_terminal() {
            return self.state.last;
        }
        self.state.frames.last().map(|f| (f.func, f.pc))
    }

    pub fn location_of(&self, func: FuncId, pc: usize) -> Location {
        let f = self.image.function(func);
        Location::new(f.name.clone(), f.lines[pc])
    }

    /// True when the next instruction is an `incts`.
    pub fn at_increment(&self) -> bool {
        !self.state.status.is_terminal()
            && self
                .current_site()
                .is_some_and(|(func, pc)| self.image.function(func).is_incts(pc))
    }

    /// `((function, line), ts)` of the current point.
    pub fn current_position(&self) -> Position {
        let (func, pc) = self
            .current_site()
            .unwrap_or((self.image.entry(), 0));
        Position {
            location: self.location_of(func, pc),
            ts: self.state.ts.ts,
        }
    }

    /// Runs until the machine stops, terminates, or has executed `budget`
    /// instructions in total. A stopped machine resumes first.
    pub fn resume<H: TrapHooks + ?Sized>(
        &mut self,
        hooks: &mut H,
        budget: u64,
    ) -> Result<&Status, VmError> {
        if self.state.status.is_terminal() {
            return Ok(&self.state.status);
        }
        self.state.status = Status::Running;
        while self.state.status == Status::Running {
            if self.state.steps >= budget {
                return Err(VmError::BudgetExhausted { budget });
            }
            self.step(hooks);
        }
        Ok(&self.state.status)
    }

    /// Executes at most one instruction. A pending trap leaves the
    /// instruction unexecuted and the machine stopped in front of it; the
    /// next step then executes it without re-checking.
    pub fn step<H: TrapHooks + ?Sized>(&mut self, hooks: &mut H) -> &Status {
        if self.state.status.is_terminal() {
            return &self.state.status;
        }
        self.state.status = Status::Running;
        if let Some(kind) = hooks.poll() {
            self.state.status = Status::Stopped(kind);
            return &self.state.status;
        }

        let image = Arc::clone(&self.image);
        let frame = self.state.frames.last().expect("running machine has a frame");
        let (func, pc) = (frame.func, frame.pc);
        let code = image.function(func);
        let ins = code.code[pc];
        let line = code.lines[pc];
        let ts = self.state.ts.ts;

        if ins != Ins::IncTs {
            if !self.state.resume_past_trap {
                let site = Site {
                    func,
                    pc,
                    line,
                    line_entry: frame.last_line != Some(line) || frame.last_ts != ts,
                };
                if let Some(kind) = hooks.before(self, &site) {
                    self.state.status = Status::Stopped(kind);
                    self.state.resume_past_trap = true;
                    return &self.state.status;
                }
            }
            let frame = self.state.frames.last_mut().unwrap();
            frame.last_line = Some(line);
            frame.last_ts = ts;
        }
        self.state.resume_past_trap = false;

        let seq = self.state.steps;
        let depth = self.state.frames.len();
        self.state.last = Some((func, pc));
        let write = match self.execute(ins) {
            Ok(w) => w,
            Err(kind) => {
                self.state.status = Status::Faulted(Fault { kind, seq });
                return &self.state.status;
            }
        };
        self.state.steps += 1;

        if let Some(trace) = self.trace.as_mut() {
            let write = write.map(|w| TraceWrite {
                target: match w.target {
                    Target::Global(g) => NamedTarget::Global(image.global_name(g).to_string()),
                    Target::Field { handle, field } => NamedTarget::Field {
                        handle,
                        field: image.field_name(field).to_string(),
                    },
                    Target::Local { slot } => NamedTarget::Local(slot),
                },
                value: w.value,
            });
            trace.push(TraceEvent {
                seq,
                function: code.name.clone(),
                pc,
                line,
                ts,
                depth,
                incts: ins == Ins::IncTs,
                write,
            });
        }

        if self.state.status.is_terminal() {
            return &self.state.status;
        }
        if let Some(w) = write {
            if let Some(kind) = hooks.after_write(self, &w) {
                self.state.status = Status::Stopped(kind);
                return &self.state.status;
            }
        }
        if ins == Ins::IncTs && self.state.ts.reference == Some(self.state.ts.ts) {
            self.state.status = Status::Stopped(TrapKind::Brake);
        }
        &self.state.status
    }

    fn execute(&mut self, ins: Ins) -> Result<Option<Write>, FaultKind> {
        let st = &mut self.state;
        let depth = st.frames.len();
        let frame = st.frames.last_mut().unwrap();
        let mut next = frame.pc + 1;
        let mut write = None;
        macro_rules! pop {
            () => {
                frame.stack.pop().ok_or(FaultKind::StackUnderflow)?
            };
        }
        macro_rules! binop {
            (|$a:ident, $b:ident| $e:expr) => {{
                let $b = pop!();
                let $a = pop!();
                let r: Result<i64, FaultKind> = $e;
                frame.stack.push(r?);
            }};
        }
        match ins {
            Ins::Const(k) => frame.stack.push(k),
            Ins::Load(s) => frame.stack.push(frame.locals[s]),
            Ins::Store(s) => {
                let v = pop!();
                frame.locals[s] = v;
                write = Some(Write {
                    target: Target::Local { slot: s },
                    value: v,
                });
            }
            Ins::GLoad(g) => frame.stack.push(st.globals[g]),
            Ins::GStore(g) => {
                let v = pop!();
                st.globals[g] = v;
                write = Some(Write {
                    target: Target::Global(g),
                    value: v,
                });
            }
            Ins::New => {
                st.heap.push(Record::new());
                frame.stack.push(st.heap.len() as i64);
            }
            Ins::GetF(f) => {
                let h = pop!();
                let record = heap_slot(&mut st.heap, h)?;
                frame.stack.push(record.get(&f).copied().unwrap_or(0));
            }
            Ins::SetF(f) => {
                let v = pop!();
                let h = pop!();
                heap_slot(&mut st.heap, h)?.insert(f, v);
                write = Some(Write {
                    target: Target::Field { handle: h, field: f },
                    value: v,
                });
            }
            Ins::Add => binop!(|a, b| Ok(a.wrapping_add(b))),
            Ins::Sub => binop!(|a, b| Ok(a.wrapping_sub(b))),
            Ins::Mul => binop!(|a, b| Ok(a.wrapping_mul(b))),
            Ins::Div => binop!(|a, b| match b {
                0 => Err(FaultKind::DivideByZero),
                _ => Ok(a.wrapping_div(b)),
            }),
            Ins::Mod => binop!(|a, b| match b {
                0 => Err(FaultKind::DivideByZero),
                _ => Ok(a.wrapping_rem(b)),
            }),
            Ins::Lt => binop!(|a, b| Ok((a < b) as i64)),
            Ins::Eq => binop!(|a, b| Ok((a == b) as i64)),
            Ins::Br(t) => next = t,
            Ins::Brz(t) => {
                if pop!() == 0 {
                    next = t;
                }
            }
            Ins::Call(callee, argc) => {
                if depth >= MAX_CALL_DEPTH {
                    return Err(FaultKind::StackOverflow);
                }
                if frame.stack.len() < argc {
                    return Err(FaultKind::StackUnderflow);
                }
                let mut locals = vec![0; self.image.function(callee).nlocals];
                let base = frame.stack.len() - argc;
                for (slot, v) in frame.stack.drain(base..).enumerate() {
                    locals[slot] = v;
                }
                frame.pc = next;
                st.frames.push(Frame {
                    func: callee,
                    pc: 0,
                    locals,
                    stack: Vec::new(),
                    last_line: None,
                    last_ts: 0,
                });
                return Ok(None);
            }
            Ins::Ret => {
                let v = pop!();
                st.frames.pop();
                match st.frames.last_mut() {
                    Some(caller) => caller.stack.push(v),
                    None => st.status = Status::Exited(v),
                }
                return Ok(None);
            }
            Ins::Throw => {
                let v = pop!();
                return self.unwind(v).map(|_| None);
            }
            Ins::Read => {
                let v = *self.input.get(st.cursor).ok_or(FaultKind::InputExhausted)?;
                st.cursor += 1;
                frame.stack.push(v);
            }
            Ins::Print => {
                let v = pop!();
                st.output.push(v);
            }
            Ins::IncTs => st.ts.ts += 1,
            Ins::Halt => {
                st.status = Status::Exited(0);
                return Ok(None);
            }
        }
        frame.pc = next;
        Ok(write)
    }

    /// Transfers control to the innermost handler covering the throw site,
    /// popping frames as needed. Caller frames are matched at their call
    /// instruction.
    fn unwind(&mut self, value: i64) -> Result<(), FaultKind> {
        let mut innermost = true;
        while let Some(frame) = self.state.frames.last_mut() {
            let site = if innermost { frame.pc } else { frame.pc - 1 };
            innermost = false;
            let handlers = &self.image.function(frame.func).handlers;
            if let Some(h) = handlers.iter().find(|h| h.start <= site && site <= h.end) {
                frame.stack.clear();
                frame.stack.push(value);
                frame.pc = h.target;
                return Ok(());
            }
            self.state.frames.pop();
        }
        Err(FaultKind::UnhandledThrow(value))
    }
}

fn heap_slot(heap: &mut [Record], handle: i64) -> Result<&mut Record, FaultKind> {
    usize::try_from(handle)
        .ok()
        .and_then(|h| h.checked_sub(1))
        .and_then(|h| heap.get_mut(h))
        .ok_or(FaultKind::NilHandle(handle))
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub budget: u64,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            trace: false,
        }
    }
}

/// A finished run: the final machine and, if requested, its full trace.
pub struct Execution {
    pub machine: Machine,
    pub trace: Option<Vec<TraceEvent>>,
}

impl Execution {
    pub fn status(&self) -> &Status {
        self.machine.status()
    }

    pub fn exit_code(&self) -> Result<i64, VmError> {
        match self.machine.status() {
            Status::Exited(code) => Ok(*code),
            Status::Faulted(f) => Err(VmError::Fault(*f)),
            other => unreachable!("finished run in state {other:?}"),
        }
    }

    pub fn final_ts(&self) -> u64 {
        self.machine.ts()
    }
}

/// Runs `program` from `main` to completion without traps.
pub fn run(program: &Program, input: &[i64], options: RunOptions) -> Result<Execution, VmError> {
    let image = Arc::new(Image::new(program.clone())?);
    run_image(image, input.into(), options)
}

pub fn run_image(
    image: Arc<Image>,
    input: Arc<[i64]>,
    options: RunOptions,
) -> Result<Execution, VmError> {
    let mut machine = Machine::new(image, input);
    machine.record_trace(options.trace);
    machine.resume(&mut NoTraps, options.budget)?;
    let trace = machine.take_trace();
    Ok(Execution { machine, trace })
}
