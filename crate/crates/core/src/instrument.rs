//! The timestamp-insertion pass.
//!
//! In every selected function one `incts` is inserted
//!
//! * at body index 0 (entry),
//! * immediately before every `ret`,
//! * immediately before every branch whose target is not after it,
//! * as the first instruction of every exception handler.
//!
//! Sites are computed on the original indices, then the body is rebuilt and
//! every branch target and handler range is remapped in one pass. An
//! inserted `incts` copies the line of the instruction it precedes.
//!
//! Branches that target an instrumented `ret` or backward branch land on
//! its `incts`; branches never land on an entry or handler-entry `incts`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{serialize, Function, Handler, Instruction, Op, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    Entry,
    HandlerEntry,
    Ret,
    BackwardBranch,
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SiteKind::Entry => "entry",
            SiteKind::HandlerEntry => "handler-entry",
            SiteKind::Ret => "ret",
            SiteKind::BackwardBranch => "backward-branch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationSite {
    pub function: String,
    /// Index in the original body of the instruction the `incts` precedes.
    pub original_pc: usize,
    pub kind: SiteKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationReport {
    pub sites: Vec<InstrumentationSite>,
    pub inserted_count: usize,
    pub size_before: usize,
    pub size_after: usize,
}

impl fmt::Display for InstrumentationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .sites
            .iter()
            .map(|s| s.function.len())
            .max()
            .unwrap_or(0)
            .max("function".len());
        writeln!(f, "{:<width$}  {:>6}  kind", "function", "pc")?;
        for s in &self.sites {
            writeln!(f, "{:<width$}  {:>6}  {}", s.function, s.original_pc, s.kind)?;
        }
        writeln!(f, "inserted: {}", self.inserted_count)?;
        write!(
            f,
            "size: {} -> {} bytes ({:.2}x)",
            self.size_before,
            self.size_after,
            self.size_after as f64 / self.size_before.max(1) as f64
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("program already contains `incts`")]
    AlreadyInstrumented,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
}

/// Site kinds in insertion order for each original index.
fn plan(f: &Function) -> Vec<Vec<SiteKind>> {
    let handler_targets: BTreeSet<usize> = f.handlers.iter().map(|h| h.target).collect();
    f.body
        .iter()
        .enumerate()
        .map(|(pc, ins)| {
            let mut kinds = Vec::new();
            if pc == 0 {
                kinds.push(SiteKind::Entry);
            }
            if handler_targets.contains(&pc) {
                kinds.push(SiteKind::HandlerEntry);
            }
            if ins.op == Op::Ret {
                kinds.push(SiteKind::Ret);
            } else if ins.is_backward_branch(pc) {
                kinds.push(SiteKind::BackwardBranch);
            }
            kinds
        })
        .collect()
}

fn rewrite(f: &Function, sites: &mut Vec<InstrumentationSite>) -> Function {
    let plan = plan(f);
    // new index of the first incts before i, and of the original instruction i
    let mut block_start = Vec::with_capacity(plan.len());
    let mut at = 0;
    for kinds in &plan {
        block_start.push(at);
        at += kinds.len() + 1;
    }
    let own_index = |i: usize| block_start[i] + plan[i].len();
    let branch_target = |t: usize| {
        let trailing = plan[t]
            .iter()
            .filter(|k| matches!(k, SiteKind::Ret | SiteKind::BackwardBranch))
            .count();
        own_index(t) - trailing
    };
    let handler_target =
        |t: usize| block_start[t] + plan[t].iter().take_while(|k| **k == SiteKind::Entry).count();

    let mut body = Vec::with_capacity(at);
    for (pc, (ins, kinds)) in f.body.iter().zip(&plan).enumerate() {
        for &kind in kinds {
            body.push(Instruction::new(Op::IncTs, ins.line));
            sites.push(InstrumentationSite {
                function: f.name.clone(),
                original_pc: pc,
                kind,
            });
        }
        let mut ins = ins.clone();
        if let Some(t) = ins.op.branch_target_mut() {
            *t = branch_target(*t);
        }
        body.push(ins);
    }
    let handlers = f
        .handlers
        .iter()
        .map(|h| Handler {
            start: block_start[h.start],
            end: own_index(h.end),
            target: handler_target(h.target),
        })
        .collect();
    Function {
        name: f.name.clone(),
        nlocals: f.nlocals,
        body,
        handlers,
    }
}

/// Instruments `program`. `selection` restricts the pass to the named
/// functions; `None` instruments all of them.
pub fn instrument(
    program: &Program,
    selection: Option<&[String]>,
) -> Result<(Program, InstrumentationReport), InstrumentError> {
    if program.contains_incts() {
        return Err(InstrumentError::AlreadyInstrumented);
    }
    if let Some(names) = selection {
        if let Some(missing) = names.iter().find(|n| !program.functions.contains_key(*n)) {
            return Err(InstrumentError::UnknownFunction(missing.clone()));
        }
    }
    let selected = |name: &str| selection.is_none_or(|s| s.iter().any(|n| n == name));

    let mut sites = Vec::new();
    let mut out = program.clone();
    for (name, f) in &program.functions {
        if selected(name) {
            out.functions.insert(name.clone(), rewrite(f, &mut sites));
        }
    }
    let report = InstrumentationReport {
        inserted_count: sites.len(),
        sites,
        size_before: serialize(program).len(),
        size_after: serialize(&out).len(),
    };
    Ok((out, report))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub violations: Vec<String>,
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Differential check of an instrumented program against its original.
///
/// Confirms that stripping every `incts` and undoing the remapping gives the
/// original back, that every backward branch is immediately preceded by an
/// `incts`, and that `incts` appear exactly at the expected sites. Functions
/// outside `selection` must be untouched.
pub fn verify_instrumentation(
    original: &Program,
    instrumented: &Program,
    selection: Option<&[String]>,
) -> VerificationReport {
    let mut v = Vec::new();
    if original.globals != instrumented.globals {
        v.push("globals differ".to_string());
    }
    let names_a: Vec<_> = original.functions.keys().collect();
    let names_b: Vec<_> = instrumented.functions.keys().collect();
    if names_a != names_b {
        v.push(format!("function sets differ: {names_a:?} vs {names_b:?}"));
        return VerificationReport { violations: v };
    }
    let selected = |name: &str| selection.is_none_or(|s| s.iter().any(|n| n == name));

    for (name, orig) in &original.functions {
        let inst = &instrumented.functions[name];
        if !selected(name) {
            if orig != inst {
                v.push(format!("{name}: unselected function was modified"));
            }
            continue;
        }
        verify_function(orig, inst, &mut v);
    }
    VerificationReport { violations: v }
}

fn verify_function(orig: &Function, inst: &Function, v: &mut Vec<String>) {
    let name = &orig.name;
    let len = inst.body.len();

    // (b) backward branches carry an increment
    for (pc, ins) in inst.body.iter().enumerate() {
        if ins.is_backward_branch(pc) && (pc == 0 || inst.body[pc - 1].op != Op::IncTs) {
            v.push(format!("{name}: backward branch at {pc} not preceded by incts"));
        }
    }

    // map each instrumented index to the original index it belongs to
    let mut to_orig = vec![usize::MAX; len];
    let mut runs = Vec::new();
    let mut pending = 0usize;
    let mut next_orig = 0usize;
    for (pc, ins) in inst.body.iter().enumerate() {
        if ins.op == Op::IncTs {
            pending += 1;
            continue;
        }
        for slot in &mut to_orig[pc - pending..=pc] {
            *slot = next_orig;
        }
        runs.push(pending);
        pending = 0;
        next_orig += 1;
    }
    if pending != 0 {
        v.push(format!("{name}: trailing incts"));
        return;
    }
    if next_orig != orig.body.len() {
        v.push(format!(
            "{name}: {} non-incts instructions, original has {}",
            next_orig,
            orig.body.len()
        ));
        return;
    }

    // (a) strip and un-remap
    let stripped: Vec<Instruction> = inst
        .body
        .iter()
        .filter(|i| i.op != Op::IncTs)
        .map(|i| {
            let mut i = i.clone();
            if let Some(t) = i.op.branch_target_mut() {
                *t = to_orig.get(*t).copied().unwrap_or(usize::MAX);
            }
            i
        })
        .collect();
    if stripped != orig.body {
        v.push(format!("{name}: stripped body differs from original"));
    }
    let handlers: Vec<Handler> = inst
        .handlers
        .iter()
        .map(|h| Handler {
            start: to_orig.get(h.start).copied().unwrap_or(usize::MAX),
            end: to_orig.get(h.end).copied().unwrap_or(usize::MAX),
            target: to_orig.get(h.target).copied().unwrap_or(usize::MAX),
        })
        .collect();
    if handlers != orig.handlers || orig.nlocals != inst.nlocals {
        v.push(format!("{name}: handlers or locals differ from original"));
    }
    for h in &inst.handlers {
        if inst.body.get(h.target).map(|i| &i.op) != Some(&Op::IncTs) {
            v.push(format!("{name}: handler target {} is not an incts", h.target));
        }
    }

    // (c) increments exactly at the sites
    for (i, (kinds, found)) in plan(orig).iter().zip(&runs).enumerate() {
        if kinds.len() != *found {
            v.push(format!(
                "{name}: {found} incts before original instruction {i}, expected {}",
                kinds.len()
            ));
        }
    }
}
