//! The mini-ISA: in-memory program model, text assembly and binary images.
//!
//! A [`Program`] is a set of named [`Function`]s plus an ordered list of
//! integer globals. Every instruction carries the source line it was
//! attributed to by the assembler's `.line` directive; that line number is
//! the static half of a position.

mod asm;
mod disasm;
mod image;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

pub use asm::assemble;
pub use disasm::disassemble;
pub use image::{deserialize, serialize, FORMAT_VERSION, INCTS_ENCODED_SIZE, MAGIC};

/// Name of the function where execution starts.
pub const ENTRY_FUNCTION: &str = "main";

/// Reads a binary image when `bytes` start with the magic, `.tsasm` text
/// otherwise.
pub fn load(bytes: &[u8]) -> Result<Program, IsaError> {
    if bytes.starts_with(MAGIC) {
        return deserialize(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| IsaError::Syntax {
        line: 0,
        message: format!("source is not UTF-8: {e}"),
    })?;
    assemble(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("duplicate label `{label}` in function `{function}`")]
    DuplicateLabel { function: String, label: String },
    #[error("duplicate global `{0}`")]
    DuplicateGlobal(String),
    #[error("call to unknown function `{0}`")]
    UnresolvedCall(String),
    #[error("reference to unknown global `{0}`")]
    UnresolvedGlobal(String),
    #[error("program has no `main` function")]
    MissingMain,
    #[error("invalid function `{function}`: {message}")]
    InvalidFunction { function: String, message: String },
    #[error("malformed image: {0}")]
    MalformedImage(String),
}

/// One operation of the mini-ISA.
///
/// Stack effects are written `[before] -> [after]` with the top of the
/// operand stack on the right. All values are `i64`; heap handles are
/// positive integers and `0` is the nil handle.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    /// `[] -> [k]`
    Const(i64),
    /// `[] -> [local[s]]`
    Load(u32),
    /// `[v] -> []`, writes `local[s] = v`.
    Store(u32),
    /// `[] -> [global g]`
    GLoad(String),
    /// `[v] -> []`, writes global `g = v`.
    GStore(String),
    /// `[] -> [h]`, allocates an empty heap record and pushes its handle.
    New,
    /// `[h] -> [h.f]`; unset fields read as 0, a nil or dangling handle faults.
    GetF(String),
    /// `[h v] -> []`, writes `h.f = v`.
    SetF(String),
    /// `[a b] -> [a + b]` (wrapping)
    Add,
    /// `[a b] -> [a - b]` (wrapping)
    Sub,
    /// `[a b] -> [a * b]` (wrapping)
    Mul,
    /// `[a b] -> [a / b]`, faults when `b == 0`.
    Div,
    /// `[a b] -> [a % b]`, faults when `b == 0`.
    Mod,
    /// `[a b] -> [a < b ? 1 : 0]`
    Lt,
    /// `[a b] -> [a == b ? 1 : 0]`
    Eq,
    /// `[] -> []`, jumps to instruction index `t`.
    Br(usize),
    /// `[v] -> []`, jumps to `t` when `v == 0`.
    Brz(usize),
    /// `[a1 .. an] -> [r]`; the callee receives the arguments in locals
    /// `0..n` and its `ret` value is pushed on return.
    Call { func: String, argc: u32 },
    /// `[v] -> ` returns `v` to the caller; returning from `main` exits with
    /// code `v`.
    Ret,
    /// `[v] -> ` unwinds to the nearest covering handler, which starts with
    /// `[v]` on an otherwise empty operand stack.
    Throw,
    /// `[] -> [x]`, consumes the next integer of the input tape.
    Read,
    /// `[v] -> []`, appends `v` to the output log.
    Print,
    /// `[] -> []`, the timestamp intrinsic: `ts += 1`, then trap with
    /// `Brake` if `ts == ref`.
    IncTs,
    /// `[] -> []`, exits with code 0.
    Halt,
}

impl Op {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Load(_) => "load",
            Op::Store(_) => "store",
            Op::GLoad(_) => "gload",
            Op::GStore(_) => "gstore",
            Op::New => "new",
            Op::GetF(_) => "getf",
            Op::SetF(_) => "setf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Mod => "mod",
            Op::Lt => "lt",
            Op::Eq => "eq",
            Op::Br(_) => "br",
            Op::Brz(_) => "brz",
            Op::Call { .. } => "call",
            Op::Ret => "ret",
            Op::Throw => "throw",
            Op::Read => "read",
            Op::Print => "print",
            Op::IncTs => "incts",
            Op::Halt => "halt",
        }
    }

    pub fn branch_target(&self) -> Option<usize> {
        match self {
            Op::Br(t) | Op::Brz(t) => Some(*t),
            _ => None,
        }
    }

    pub(crate) fn branch_target_mut(&mut self) -> Option<&mut usize> {
        match self {
            Op::Br(t) | Op::Brz(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Op,
    /// Source line attributed to this instruction; never 0.
    pub line: u32,
}

impl Instruction {
    pub fn new(op: Op, line: u32) -> Self {
        Self { op, line }
    }

    /// A branch whose resolved target does not lie after it.
    pub fn is_backward_branch(&self, index: usize) -> bool {
        self.op.branch_target().is_some_and(|t| t <= index)
    }
}

/// An exception range: instructions `start..=end` are covered and a throw
/// inside them transfers control to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handler {
    pub start: usize,
    pub end: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub nlocals: u32,
    pub body: Vec<Instruction>,
    pub handlers: Vec<Handler>,
}

impl Function {
    pub fn contains_incts(&self) -> bool {
        self.body.iter().any(|i| i.op == Op::IncTs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub functions: BTreeMap<String, Function>,
    pub globals: Vec<Global>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.get(name)
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn contains_incts(&self) -> bool {
        self.functions.values().any(Function::contains_incts)
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.values().map(|f| f.body.len()).sum()
    }

    /// Checks every structural invariant the VM relies on.
    pub fn validate(&self) -> Result<(), IsaError> {
        let mut seen = HashSet::new();
        for g in &self.globals {
            if !seen.insert(g.name.as_str()) {
                return Err(IsaError::DuplicateGlobal(g.name.clone()));
            }
        }
        if !self.functions.contains_key(ENTRY_FUNCTION) {
            return Err(IsaError::MissingMain);
        }
        for (name, f) in &self.functions {
            let invalid = |message: String| IsaError::InvalidFunction {
                function: name.clone(),
                message,
            };
            if name != &f.name {
                return Err(invalid(format!("registered under `{name}` but named `{}`", f.name)));
            }
            if f.body.is_empty() {
                return Err(invalid("empty body".into()));
            }
            let len = f.body.len();
            for (pc, ins) in f.body.iter().enumerate() {
                if ins.line == 0 {
                    return Err(invalid(format!("instruction {pc} has line 0")));
                }
                match &ins.op {
                    Op::Load(s) | Op::Store(s) if *s >= f.nlocals => {
                        return Err(invalid(format!(
                            "instruction {pc} uses local {s} but only {} declared",
                            f.nlocals
                        )));
                    }
                    Op::GLoad(g) | Op::GStore(g) if self.global(g).is_none() => {
                        return Err(IsaError::UnresolvedGlobal(g.clone()));
                    }
                    Op::Br(t) | Op::Brz(t) if *t >= len => {
                        return Err(invalid(format!("branch at {pc} targets {t}, body has {len}")));
                    }
                    Op::Call { func, argc } => {
                        let callee = self
                            .functions
                            .get(func)
                            .ok_or_else(|| IsaError::UnresolvedCall(func.clone()))?;
                        if *argc > callee.nlocals {
                            return Err(invalid(format!(
                                "call to `{func}` passes {argc} arguments but it has {} locals",
                                callee.nlocals
                            )));
                        }
                    }
                    _ => {}
                }
            }
            for h in &f.handlers {
                if !(h.start <= h.end && h.end < len && h.target < len) {
                    return Err(invalid(format!(
                        "handler {}..={} -> {} out of range",
                        h.start, h.end, h.target
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Const(k) => write!(f, "const {k}"),
            Op::Load(s) => write!(f, "load {s}"),
            Op::Store(s) => write!(f, "store {s}"),
            Op::GLoad(g) => write!(f, "gload {g}"),
            Op::GStore(g) => write!(f, "gstore {g}"),
            Op::GetF(x) => write!(f, "getf {x}"),
            Op::SetF(x) => write!(f, "setf {x}"),
            Op::Br(t) => write!(f, "br @{t}"),
            Op::Brz(t) => write!(f, "brz @{t}"),
            Op::Call { func, argc } => write!(f, "call {func} {argc}"),
            other => f.write_str(other.mnemonic()),
        }
    }
}
