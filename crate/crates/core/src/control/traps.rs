use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::expr::{self, Expr, Root};
use crate::position::Location;
use crate::vm::{FuncId, Image, Machine, Site, Target, TrapHooks, TrapKind, Write};

use super::ControlError;

/// A write target, resolved to a concrete record when it names a field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchTarget {
    Global(String),
    Field { handle: i64, field: String },
}

impl fmt::Display for WatchTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WatchTarget::Global(g) => f.write_str(g),
            WatchTarget::Field { handle, field } => write!(f, "#{handle}.{field}"),
        }
    }
}

impl WatchTarget {
    /// Resolves `x`, `g.f`, `g.f.h` or `#N.f` against the machine's current
    /// state. All but the last field are followed to find the record.
    pub fn resolve(spec: &str, m: &Machine) -> Result<Self, ControlError> {
        let unknown = || ControlError::UnknownTarget(spec.trim().to_string());
        let Ok(Expr::Path { root, mut fields }) = expr::parse(spec) else {
            return Err(unknown());
        };
        let Some(field) = fields.pop() else {
            return match root {
                Root::Global(g) if m.image().global_id(&g).is_some() => Ok(WatchTarget::Global(g)),
                _ => Err(unknown()),
            };
        };
        if m.image().field_id(&field).is_none() {
            return Err(unknown());
        }
        let base = Expr::Path { root, fields };
        let handle = base.eval(m).map_err(|_| unknown())?;
        m.record(handle).ok_or_else(unknown)?;
        Ok(WatchTarget::Field { handle, field })
    }

    fn dense(&self, image: &Image) -> Option<Target> {
        Some(match self {
            WatchTarget::Global(g) => Target::Global(image.global_id(g)?),
            WatchTarget::Field { handle, field } => Target::Field {
                handle: *handle,
                field: image.field_id(field)?,
            },
        })
    }

    /// Current value, or `None` while the record does not exist yet.
    pub fn value(&self, m: &Machine) -> Option<i64> {
        match self {
            WatchTarget::Global(g) => m.global(g),
            WatchTarget::Field { handle, field } => m.field(*handle, field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Breakpoint {
    Static {
        location: Location,
    },
    Conditional {
        location: Location,
        condition: String,
        #[serde(skip)]
        predicate: Expr,
    },
    Data {
        target: WatchTarget,
    },
}

impl fmt::Display for Breakpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Breakpoint::Static { location } => write!(f, "break {location}"),
            Breakpoint::Conditional { location, condition, .. } => {
                write!(f, "break {location} if {condition}")
            }
            Breakpoint::Data { target } => write!(f, "watch {target}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrapTable {
    entries: BTreeMap<u32, Breakpoint>,
    next_id: u32,
}

impl TrapTable {
    pub fn insert(&mut self, bp: Breakpoint) -> u32 {
        self.next_id += 1;
        self.entries.insert(self.next_id, bp);
        self.next_id
    }

    pub fn remove(&mut self, id: u32) -> Option<Breakpoint> {
        self.entries.remove(&id)
    }

    pub fn get(&self, id: u32) -> Option<&Breakpoint> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Breakpoint)> {
        self.entries.iter().map(|(id, bp)| (*id, bp))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Counters of debugger activity since the last reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    /// Times control passed to the debugger: every brake, every breakpoint
    /// or watchpoint stop, and every predicate evaluation.
    pub trap_activations: u64,
    pub predicate_evals: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Continue,
    StepLine { from_steps: u64 },
}

pub(crate) struct Hooks<'a> {
    by_site: HashMap<(FuncId, u32), Vec<(u32, Option<&'a Expr>)>>,
    watches: Vec<(u32, Target)>,
    mode: Mode,
    stats: &'a mut Stats,
    pause: &'a AtomicBool,
}

impl<'a> Hooks<'a> {
    pub(crate) fn new(
        image: &Image,
        table: &'a TrapTable,
        mode: Mode,
        stats: &'a mut Stats,
        pause: &'a AtomicBool,
    ) -> Self {
        let mut by_site: HashMap<_, Vec<_>> = HashMap::new();
        let mut watches = Vec::new();
        for (id, bp) in table.iter() {
            let (location, predicate) = match bp {
                Breakpoint::Static { location } => (location, None),
                Breakpoint::Conditional { location, predicate, .. } => (location, Some(predicate)),
                Breakpoint::Data { target } => {
                    if let Some(t) = target.dense(image) {
                        watches.push((id, t));
                    }
                    continue;
                }
            };
            if let Some(func) = image.function_id(&location.function) {
                by_site
                    .entry((func, location.line))
                    .or_default()
                    .push((id, predicate));
            }
        }
        Self {
            by_site,
            watches,
            mode,
            stats,
            pause,
        }
    }
}

impl TrapHooks for Hooks<'_> {
    fn poll(&mut self) -> Option<TrapKind> {
        self.pause.swap(false, Ordering::SeqCst).then_some(TrapKind::Pause)
    }

    fn before(&mut self, m: &Machine, site: &Site) -> Option<TrapKind> {
        if !site.line_entry {
            return None;
        }
        if let Mode::StepLine { from_steps } = self.mode {
            if m.state().steps == from_steps {
                return None;
            }
        }
        for &(id, predicate) in self.by_site.get(&(site.func, site.line)).into_iter().flatten() {
            self.stats.trap_activations += 1;
            let Some(predicate) = predicate else {
                return Some(TrapKind::Breakpoint(id));
            };
            self.stats.predicate_evals += 1;
            match predicate.holds(m) {
                Ok(true) => return Some(TrapKind::ConditionalBreakpoint(id)),
                Ok(false) => {}
                Err(e) => {
                    return Some(TrapKind::PredicateError {
                        id,
                        message: e.to_string(),
                    })
                }
            }
        }
        matches!(self.mode, Mode::StepLine { .. }).then_some(TrapKind::Step)
    }

    fn after_write(&mut self, _m: &Machine, write: &Write) -> Option<TrapKind> {
        let &(id, _) = self.watches.iter().find(|(_, t)| *t == write.target)?;
        self.stats.trap_activations += 1;
        Some(TrapKind::Watchpoint { id, write: *write })
    }
}
