//! Shared fixtures: a seeded generator of terminating guest programs and
//! brute-force oracles computed from full traces.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsvm_core::instrument::instrument;
use tsvm_core::isa::{assemble, Program};
use tsvm_core::vm::{run, Execution, FaultKind, NamedTarget, RunOptions, Status, TraceEvent};
use tsvm_core::Position;

pub const GLOBALS: [&str; 3] = ["g0", "g1", "g2"];
pub const FIELDS: [&str; 2] = ["fa", "fb"];

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn corpus(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(name)).expect("corpus file")
}

/// Input tape handed to generated programs.
pub fn tape(seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a9e);
    (0..256).map(|_| rng.random_range(-9..=30)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Loops, recursion, throws, heap writes and input in roughly equal
    /// measure.
    Mixed,
    /// Mostly global writes, for watchpoint checks.
    WriteHeavy,
    /// `c` is only ever increased; every other statement is noise.
    Monotone,
}

/// Seeded `.tsasm` generator. Every generated program terminates: loops are
/// counted, the call graph is acyclic apart from `rec`, whose argument is
/// reduced modulo 5.
pub struct Generator {
    rng: ChaCha8Rng,
    shape: Shape,
    out: String,
    line: u32,
    labels: u32,
    /// Index of the function being emitted; helpers may only call later ones.
    current: usize,
    helpers: usize,
    try_depth: u32,
}

impl Generator {
    pub fn new(seed: u64, shape: Shape) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            shape,
            out: String::new(),
            line: 0,
            labels: 0,
            current: 0,
            helpers: 0,
            try_depth: 0,
        }
    }

    pub fn source(mut self) -> String {
        for g in GLOBALS {
            let init = self.rng.random_range(-3..=5);
            writeln!(self.out, ".global {g} {init}").unwrap();
        }
        if self.shape == Shape::Monotone {
            writeln!(self.out, ".global c 0").unwrap();
        }
        self.helpers = self.rng.random_range(0..=2);
        let main_stmts = self.rng.random_range(3..=8);
        self.function("main", 0, main_stmts);
        for i in 1..=self.helpers {
            let n = self.rng.random_range(1..=4);
            self.function(&format!("f{i}"), i, n);
        }
        self.rec();
        self.out
    }

    fn next_line(&mut self) -> u32 {
        self.line += 1;
        writeln!(self.out, ".line {}", self.line).unwrap();
        self.line
    }

    fn same_line(&mut self, line: u32) {
        writeln!(self.out, ".line {line}").unwrap();
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn emit(&mut self, ins: &str) {
        writeln!(self.out, "    {ins}").unwrap();
    }

    fn place(&mut self, label: &str) {
        writeln!(self.out, "{label}:").unwrap();
    }

    fn function(&mut self, name: &str, index: usize, statements: usize) {
        self.current = index;
        self.line = self.line.next_multiple_of(100);
        writeln!(self.out, "\n.func {name} 5").unwrap();
        self.next_line();
        self.emit("new");
        self.emit("store 1");
        for _ in 0..statements {
            self.statement(0);
        }
        self.next_line();
        if name == "main" && self.rng.random_bool(0.15) {
            self.emit("halt");
        } else {
            self.expr(1);
            self.emit("ret");
        }
    }

    fn rec(&mut self) {
        self.line = self.line.next_multiple_of(100);
        writeln!(self.out, "\n.func rec 1").unwrap();
        self.next_line();
        self.emit("load 0");
        self.emit("const 1");
        self.emit("lt");
        self.emit("brz recurse");
        self.emit("const 0");
        self.emit("ret");
        self.next_line();
        self.place("recurse");
        self.emit("load 0");
        self.emit("const 1");
        self.emit("sub");
        self.emit("call rec 1");
        self.emit("load 0");
        self.emit("add");
        self.emit("ret");
    }

    fn callee(&mut self) -> String {
        let later = self.helpers.saturating_sub(self.current);
        if later > 0 && self.rng.random_bool(0.6) {
            format!("f{}", self.current + self.rng.random_range(1..=later))
        } else {
            "rec".into()
        }
    }

    fn statement(&mut self, depth: u32) {
        let nested = depth < 2;
        let weights: &[(u32, u8)] = match self.shape {
            Shape::Mixed => &[(6, 0), (3, 1), (3, 2), (3, 3), (3, 4), (3, 5), (3, 6), (2, 7), (2, 8), (2, 9), (1, 10), (2, 11)],
            Shape::WriteHeavy => &[(12, 0), (1, 1), (2, 2), (4, 3), (3, 4), (3, 5), (1, 6), (2, 7), (1, 8), (1, 9), (1, 10), (0, 11)],
            Shape::Monotone => &[(3, 0), (1, 1), (1, 2), (1, 3), (3, 4), (2, 5), (1, 6), (2, 7), (0, 8), (0, 9), (1, 10), (8, 11)],
        };
        let total: u32 = weights.iter().map(|w| w.0).sum();
        let mut pick = self.rng.random_range(0..total);
        let mut kind = 0;
        for &(w, k) in weights {
            if pick < w {
                kind = k;
                break;
            }
            pick -= w;
        }
        let line = self.next_line();
        match kind {
            0 => {
                self.expr(2);
                let g = GLOBALS[self.rng.random_range(0..GLOBALS.len())];
                self.emit(&format!("gstore {g}"));
            }
            1 => {
                self.expr(2);
                self.emit("store 4");
            }
            2 => {
                self.expr(2);
                self.emit("print");
            }
            3 => {
                self.emit("load 1");
                self.expr(2);
                let f = FIELDS[self.rng.random_range(0..FIELDS.len())];
                self.emit(&format!("setf {f}"));
            }
            4 if nested => self.counted_loop(line, depth),
            5 if nested => self.branch(depth),
            6 if nested => self.guarded(line, depth),
            7 => {
                self.expr(1);
                if self.rng.random_bool(0.5) {
                    self.emit("const 5");
                    self.emit("mod");
                }
                let f = self.callee();
                self.emit(&format!("call {f} 1"));
                let g = GLOBALS[self.rng.random_range(0..GLOBALS.len())];
                self.emit(&format!("gstore {g}"));
            }
            8 if self.try_depth > 0 || self.current > 0 => {
                let skip = self.label();
                self.expr(1);
                self.emit(&format!("brz {skip}"));
                let v = self.rng.random_range(1..=9);
                self.emit(&format!("const {v}"));
                self.emit("throw");
                self.place(&skip);
                self.emit("const 0");
                self.emit("store 4");
            }
            9 => {
                self.emit("read");
                self.emit("store 4");
            }
            10 => {
                self.emit("new");
                self.emit("store 1");
            }
            11 if self.shape == Shape::Monotone => {
                self.emit("gload c");
                let k = self.rng.random_range(0..=3);
                self.emit(&format!("const {k}"));
                self.emit("add");
                self.emit("gstore c");
            }
            _ => {
                self.emit("const 1");
                self.emit("store 4");
            }
        }
    }

    fn counted_loop(&mut self, line: u32, depth: u32) {
        let counter = 2 + depth;
        let (head, done) = (self.label(), self.label());
        let n = [0, 1, 2, 3, 4, 5, 6, 8][self.rng.random_range(0..8)];
        self.emit(&format!("const {n}"));
        self.emit(&format!("store {counter}"));
        self.place(&head);
        self.emit(&format!("load {counter}"));
        self.emit(&format!("brz {done}"));
        for _ in 0..self.rng.random_range(1..=3) {
            self.statement(depth + 1);
        }
        self.same_line(line);
        self.emit(&format!("load {counter}"));
        self.emit("const 1");
        self.emit("sub");
        self.emit(&format!("store {counter}"));
        self.emit(&format!("br {head}"));
        self.place(&done);
    }

    fn branch(&mut self, depth: u32) {
        let (other, end) = (self.label(), self.label());
        self.expr(2);
        self.emit(&format!("brz {other}"));
        self.statement(depth + 1);
        self.emit(&format!("br {end}"));
        self.place(&other);
        self.statement(depth + 1);
        self.place(&end);
        self.emit("const 0");
        self.emit("store 4");
    }

    fn guarded(&mut self, line: u32, depth: u32) {
        let (start, end, handler, after) = (self.label(), self.label(), self.label(), self.label());
        self.place(&start);
        self.try_depth += 1;
        for _ in 0..self.rng.random_range(1..=2) {
            self.statement(depth + 1);
        }
        self.try_depth -= 1;
        self.same_line(line);
        self.place(&end);
        self.emit(&format!("br {after}"));
        self.place(&handler);
        self.emit("store 4");
        self.place(&after);
        self.emit("const 0");
        self.emit("store 0");
        writeln!(self.out, ".handler {start} {end} {handler}").unwrap();
    }

    fn expr(&mut self, depth: u32) {
        let leaf = depth == 0 || self.rng.random_bool(0.45);
        if leaf {
            match self.rng.random_range(0..6) {
                0 | 1 => {
                    let k = self.rng.random_range(-5..=20);
                    self.emit(&format!("const {k}"));
                }
                2 => {
                    let g = GLOBALS[self.rng.random_range(0..GLOBALS.len())];
                    self.emit(&format!("gload {g}"));
                }
                3 => {
                    let slot = [0, 2, 4][self.rng.random_range(0..3)];
                    self.emit(&format!("load {slot}"));
                }
                4 => {
                    self.emit("load 1");
                    let f = FIELDS[self.rng.random_range(0..FIELDS.len())];
                    self.emit(&format!("getf {f}"));
                }
                _ => {
                    if self.shape == Shape::Monotone {
                        self.emit("gload c");
                    } else {
                        self.emit("const 2");
                    }
                }
            }
            return;
        }
        self.expr(depth - 1);
        match self.rng.random_range(0..20) {
            0..=13 => {
                self.expr(depth - 1);
                let op = ["add", "sub", "mul", "lt", "eq"][self.rng.random_range(0..5)];
                self.emit(op);
            }
            14..=18 => {
                let k = self.rng.random_range(1..=7);
                self.emit(&format!("const {k}"));
                let op = if self.rng.random_bool(0.5) { "mod" } else { "div" };
                self.emit(op);
            }
            _ => {
                self.expr(depth - 1);
                self.emit("div");
            }
        }
    }
}

pub fn generate(seed: u64, shape: Shape) -> Program {
    let src = Generator::new(seed, shape).source();
    assemble(&src).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{src}"))
}

pub fn instrumented(p: &Program) -> Program {
    instrument(p, None).expect("fresh program").0
}

pub fn traced(p: &Program, input: &[i64]) -> Execution {
    run(p, input, RunOptions { trace: true, ..RunOptions::default() }).expect("generated programs terminate")
}

/// Exit code, or the kind of fault; fault ordinals differ between a
/// program and its instrumented copy.
pub fn outcome(ex: &Execution) -> Result<i64, FaultKind> {
    match ex.status() {
        Status::Exited(code) => Ok(*code),
        Status::Faulted(f) => Err(f.kind),
        other => panic!("unfinished run: {other:?}"),
    }
}

/// Index into the trace of each line entry, with the position it names.
/// A frame enters a line when it executes a non-`incts` instruction whose
/// line or timestamp differs from its previous one.
pub fn line_entries(trace: &[TraceEvent]) -> Vec<(usize, Position)> {
    let mut frames: Vec<Option<(u32, u64)>> = Vec::new();
    let mut out = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        frames.truncate(e.depth);
        frames.resize(e.depth, None);
        if e.incts {
            continue;
        }
        let slot = &mut frames[e.depth - 1];
        if *slot != Some((e.line, e.ts)) {
            out.push((i, Position::new(e.function.clone(), e.line, e.ts)));
        }
        *slot = Some((e.line, e.ts));
    }
    out
}

/// Positions named by their first line entry only.
pub fn canonical_entries(trace: &[TraceEvent]) -> Vec<(usize, Position)> {
    let mut seen = std::collections::HashSet::new();
    line_entries(trace)
        .into_iter()
        .filter(|(_, p)| seen.insert(p.clone()))
        .collect()
}

/// The last write to `target` strictly before trace index `before`.
pub fn last_write_before<'a>(trace: &'a [TraceEvent], target: &NamedTarget, before: usize) -> Option<&'a TraceEvent> {
    trace[..before]
        .iter()
        .rev()
        .find(|e| e.write.as_ref().is_some_and(|w| &w.target == target))
}

/// Value of global `name` at the start of timestamp `t`: the initial value
/// overwritten by every write executed under an earlier timestamp.
pub fn global_at(trace: &[TraceEvent], name: &str, init: i64, t: u64) -> i64 {
    let target = NamedTarget::Global(name.to_string());
    trace
        .iter()
        .take_while(|e| e.ts < t)
        .filter_map(|e| e.write.as_ref().filter(|w| w.target == target))
        .last()
        .map_or(init, |w| w.value)
}

/// Sorted, deduplicated sample of `k` indices below `n`.
pub fn sample(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}
