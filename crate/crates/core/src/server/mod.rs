//! User-facing plumbing: the JSON-lines protocol, the REPL and the bench
//! harness.

pub mod bench;
pub mod protocol;
pub mod repl;

pub use bench::{run_suite, BenchReport, BenchResult, Suite};
pub use protocol::Server;
pub use repl::Repl;
