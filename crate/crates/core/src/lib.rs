//! Timestamped mini-VM and position-based execution control.
//!
//! The crate is layered bottom-up:
//!
//! * [`isa`]: program model, `.tsasm` assembler, binary images.
//! * [`vm`]: deterministic interpreter with the `ts`/`ref` runtime.
//! * [`instrument`]: inserts `incts` at function entry, before returns,
//!   before backward branches and at handler entries.
//! * [`control`]: breakpoints, watchpoints, positions, bookmarks.
//! * [`autodebug`]: reverse watchpoint and timestamp bisection.
//! * [`server`]: line protocol, REPL and the overhead bench harness.

pub mod autodebug;
pub mod control;
pub mod expr;
pub mod instrument;
pub mod isa;
pub mod position;
pub mod server;
pub mod vm;

pub use position::{Location, Position};
