//! `tsvm`: assembler, runner, instrumenter and debugger front ends.

use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsvm_core::control::Session;
use tsvm_core::instrument::instrument;
use tsvm_core::isa::{self, disassemble, serialize, Program};
use tsvm_core::server::{bench, Repl, Server};
use tsvm_core::vm::{run, RunOptions, Status};

const EXIT_USAGE: u8 = 1;
const EXIT_FAULT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "tsvm", version, about = "Timestamped VM toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble `.tsasm` text into a binary image.
    Asm { input: PathBuf, output: PathBuf },
    /// Print a program as `.tsasm` text.
    Dis { input: PathBuf },
    /// Insert timestamp increments and report the sites.
    Instrument {
        input: PathBuf,
        output: PathBuf,
        /// Comma-separated list of functions to instrument.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
    },
    /// Run a program to completion.
    Run {
        program: PathBuf,
        #[command(flatten)]
        tape: Tape,
        /// Write one JSON record per executed instruction.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the final timestamp.
        #[arg(long)]
        show_ts: bool,
        /// Instrument before running unless the program already is.
        #[arg(long)]
        instrument: bool,
        #[arg(long, default_value_t = tsvm_core::vm::DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Interactive debugger.
    Debug {
        program: PathBuf,
        #[command(flatten)]
        tape: Tape,
        /// Run the commands in this file and print the transcript.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Speak the JSON-lines debug protocol.
    Serve {
        program: PathBuf,
        #[command(flatten)]
        tape: Tape,
        #[arg(long, conflicts_with = "stdio", required_unless_present = "stdio")]
        port: Option<u16>,
        #[arg(long)]
        stdio: bool,
    },
    /// Measure instrumentation overhead over a suite file.
    Bench {
        suite: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Tape {
    /// Input tape: one integer per line.
    #[arg(long)]
    input: Option<PathBuf>,
}

impl Tape {
    fn load(&self) -> Result<Vec<i64>, Failure> {
        let Some(path) = &self.input else {
            return Ok(Vec::new());
        };
        let text = read_text(path)?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.parse()
                    .map_err(|_| Failure::usage(format!("{}: entry {}: `{l}` is not an integer", path.display(), i + 1)))
            })
            .collect()
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn internal(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::internal(e)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    isa::load(&read_bytes(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("tsvm: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn execute(command: Command) -> Result<u8, Failure> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match command {
        Command::Asm { input, output } => {
            let program = isa::assemble(&read_text(&input)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", input.display())))?;
            write_file(&output, &serialize(&program))?;
        }
        Command::Dis { input } => {
            write!(out, "{}", disassemble(&load_program(&input)?))?;
        }
        Command::Instrument { input, output, only } => {
            let program = load_program(&input)?;
            let (instrumented, report) =
                instrument(&program, only.as_deref()).map_err(|e| Failure::usage(e.to_string()))?;
            write_file(&output, &serialize(&instrumented))?;
            writeln!(out, "{report}")?;
            writeln!(out, "{}", serde_json::to_string(&report).map_err(Failure::internal)?)?;
        }
        Command::Run {
            program,
            tape,
            trace,
            show_ts,
            instrument: add_increments,
            budget,
        } => {
            let mut program = load_program(&program)?;
            if add_increments && !program.contains_incts() {
                program = instrument(&program, None).map_err(Failure::internal)?.0;
            }
            let input = tape.load()?;
            let options = RunOptions {
                budget,
                trace: trace.is_some(),
            };
            let ex = run(&program, &input, options).map_err(Failure::internal)?;
            for v in &ex.machine.state().output {
                writeln!(out, "{v}")?;
            }
            if let (Some(path), Some(events)) = (&trace, &ex.trace) {
                let mut w = BufWriter::new(
                    fs::File::create(path)
                        .map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))?,
                );
                for ev in events {
                    serde_json::to_writer(&mut w, ev).map_err(Failure::internal)?;
                    writeln!(w)?;
                }
                w.flush()?;
            }
            if show_ts {
                writeln!(out, "ts={}", ex.final_ts())?;
            }
            out.flush()?;
            match ex.status() {
                Status::Faulted(f) => return Err(Failure { code: EXIT_FAULT, message: format!("guest fault: {f}") }),
                Status::Exited(code) if *code != 0 => eprintln!("tsvm: exited with code {code}"),
                _ => {}
            }
        }
        Command::Debug { program, tape, script } => {
            let session = Session::instrumented(load_program(&program)?, tape.load()?).map_err(Failure::internal)?;
            let mut repl = Repl::new(session);
            match script {
                Some(path) => write!(out, "{}", repl.run_script(&read_text(&path)?))?,
                None => {
                    drop(out);
                    repl.run(io::stdin().lock(), io::stdout().lock())?;
                    return Ok(0);
                }
            }
        }
        Command::Serve {
            program,
            tape,
            port,
            stdio,
        } => {
            let source = String::from_utf8_lossy(&read_bytes(&program)?).into_owned();
            let prog = load_program(&program)?;
            let source = if prog.contains_incts() || source.starts_with("TSVM") {
                disassemble(&prog)
            } else {
                source
            };
            let session = Session::instrumented(prog, tape.load()?).map_err(Failure::internal)?;
            let mut server = Server::new(session, source);
            drop(out);
            if stdio {
                server.serve(BufReader::new(io::stdin()), io::stdout().lock())?;
            } else if let Some(port) = port {
                let listener = TcpListener::bind(("127.0.0.1", port))?;
                eprintln!("listening on {}", listener.local_addr()?);
                let (stream, _) = listener.accept()?;
                server.serve(BufReader::new(stream.try_clone()?), stream)?;
            }
            return Ok(0);
        }
        Command::Bench { suite, json } => {
            let suite = bench::load_suite(&suite).map_err(|e| Failure::usage(e.to_string()))?;
            let report = bench::run_suite(&suite).map_err(Failure::internal)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(Failure::internal)?)?;
            } else {
                write!(out, "{report}")?;
            }
        }
    }
    out.flush()?;
    Ok(0)
}
