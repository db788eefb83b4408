//! Line-oriented debugger front end with gdb-style verbs.

use std::io::{self, BufRead, Write};

use crate::autodebug::{self, Progress};
use crate::control::{Session, StopReason, StopReport};
use crate::expr;
use crate::position::{Location, Position};

pub const PROMPT: &str = "(tsdb) ";

const HELP: &str = "\
b FUNC:LINE [if COND]   set a breakpoint
watch TARGET            watch writes to a global or field (x, g.f, #3.f)
delete ID               remove a breakpoint or watchpoint
info                    list breakpoints and watchpoints
c                       continue
s                       step to the next line
pos                     show the current position
mark [NOTE]             bookmark the current position
marks                   list bookmarks
goto ID                 return to a bookmark
goto FUNC:LINE@TS [slow]  go to a position
gotots TS               go to the start of a timestamp
rwatch TARGET           go back to the last write of TARGET
bsearch COND LO HI      find the first timestamp where COND fails
p EXPR                  evaluate an expression
restart                 start over (breakpoints and bookmarks are kept)
q                       quit";

pub struct Repl {
    session: Session,
    output_shown: usize,
    last_stop: Option<StopReport>,
}

impl Repl {
    pub fn new(session: Session) -> Self {
        Self {
            session,
            output_shown: 0,
            last_stop: None,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Report of the most recent command that moved the machine.
    pub fn last_stop(&self) -> Option<&StopReport> {
        self.last_stop.as_ref()
    }

    /// Runs one command. Returns the text to print and whether to quit.
    pub fn execute(&mut self, line: &str) -> (String, bool) {
        let line = line.trim();
        let (verb, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let mut out = Vec::new();
        let result = self.dispatch(verb, rest, &mut out);
        if let Err(message) = result {
            out.push(message);
        }
        let quit = matches!(verb, "q" | "quit");
        (out.join("\n"), quit)
    }

    /// Feeds every line of `script` through [`Repl::execute`] and returns a
    /// transcript with prompts and commands echoed.
    pub fn run_script(&mut self, script: &str) -> String {
        let mut transcript = String::new();
        for line in script.lines() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            transcript.push_str(PROMPT);
            transcript.push_str(line.trim());
            transcript.push('\n');
            let (text, quit) = self.execute(line);
            if !text.is_empty() {
                transcript.push_str(&text);
                transcript.push('\n');
            }
            if quit {
                break;
            }
        }
        transcript
    }

    pub fn run<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> io::Result<()> {
        write!(output, "{PROMPT}")?;
        output.flush()?;
        for line in input.lines() {
            let (text, quit) = self.execute(&line?);
            if !text.is_empty() {
                writeln!(output, "{text}")?;
            }
            if quit {
                return Ok(());
            }
            write!(output, "{PROMPT}")?;
            output.flush()?;
        }
        writeln!(output)
    }

    fn moved(&mut self, report: &StopReport, out: &mut Vec<String>) {
        let output = &self.session.machine().state().output;
        for v in output.iter().skip(self.output_shown) {
            out.push(format!("output: {v}"));
        }
        self.output_shown = self.output_shown.max(output.len());
        out.push(show_report(report));
        self.last_stop = Some(report.clone());
    }

    fn dispatch(&mut self, verb: &str, rest: &str, out: &mut Vec<String>) -> Result<(), String> {
        let s = &mut self.session;
        match verb {
            "" => {}
            "help" | "h" => out.push(HELP.to_string()),
            "b" | "break" => {
                let (loc, cond) = match rest.split_once(" if ") {
                    Some((l, c)) => (l.trim(), Some(c.trim())),
                    None => (rest, None),
                };
                let location: Location = loc.parse().map_err(|e| format!("error: {e}"))?;
                let id = s.set_breakpoint(location.clone(), cond).map_err(control)?;
                match cond {
                    Some(c) => out.push(format!("breakpoint {id} at {location} if {c}")),
                    None => out.push(format!("breakpoint {id} at {location}")),
                }
            }
            "watch" => {
                let id = s.set_watchpoint(rest).map_err(control)?;
                let bp = s.breakpoints().get(id).expect("just inserted");
                out.push(format!("watchpoint {id}: {bp}"));
            }
            "delete" | "d" => {
                let id: u32 = rest.parse().map_err(|_| usage("delete ID"))?;
                s.clear(id).map_err(control)?;
                out.push(format!("deleted {id}"));
            }
            "info" => {
                if s.breakpoints().is_empty() {
                    out.push("no breakpoints".into());
                }
                for (id, bp) in s.breakpoints().iter() {
                    out.push(format!("{id}: {bp}"));
                }
            }
            "c" | "continue" => {
                let r = s.cont().map_err(control)?;
                self.moved(&r, out);
            }
            "s" | "step" => {
                let r = s.step_line().map_err(control)?;
                self.moved(&r, out);
            }
            "pos" => out.push(s.position().to_string()),
            "mark" => {
                let m = s.bookmark(rest);
                out.push(format!("bookmark {} at {}: {}", m.id, m.position, m.annotation));
            }
            "marks" => {
                if s.bookmarks().next().is_none() {
                    out.push("no bookmarks".into());
                }
                for m in s.bookmarks() {
                    out.push(format!("{}: {} {}", m.id, m.position, m.annotation));
                }
            }
            "goto" => {
                let mut words = rest.split_whitespace();
                let target = words.next().ok_or_else(|| usage("goto ID | goto FUNC:LINE@TS [slow]"))?;
                let r = if let Ok(id) = target.parse::<u32>() {
                    s.goto_bookmark(id)
                } else {
                    let p: Position = target.parse().map_err(|e| format!("error: {e}"))?;
                    match words.next() {
                        Some("slow") => s.goto_position_slow(&p),
                        _ => s.goto_position_fast(&p),
                    }
                }
                .map_err(control)?;
                self.moved(&r, out);
            }
            "gotots" => {
                let t: u64 = rest.parse().map_err(|_| usage("gotots TS"))?;
                let r = s.goto_timestamp(t).map_err(control)?;
                self.moved(&r, out);
            }
            "rwatch" => {
                let mut log = Vec::new();
                let result = autodebug::reverse_watchpoint(s, rest, &mut |p| log.push(show_progress(&p)));
                out.extend(log);
                match result {
                    Ok(rw) => self.moved(&rw.landing, out),
                    Err(e) => return Err(format!("error[{}]: {e}", e.code())),
                }
            }
            "bsearch" => {
                let words: Vec<&str> = rest.rsplitn(3, char::is_whitespace).collect();
                let [hi, lo, cond] = words[..] else {
                    return Err(usage("bsearch COND LO HI"));
                };
                let (lo, hi) = match (lo.parse(), hi.parse()) {
                    (Ok(lo), Ok(hi)) => (lo, hi),
                    _ => return Err(usage("bsearch COND LO HI")),
                };
                let mut log = Vec::new();
                let result = autodebug::binary_search(s, cond.trim(), lo, hi, &mut |p| {
                    log.push(show_progress(&p))
                });
                out.extend(log);
                match result {
                    Ok(o) => {
                        out.extend(o.diagnostics.iter().map(|d| format!("note: {d}")));
                        out.push(format!(
                            "boundary at ts {} after {} probes",
                            o.boundary_ts,
                            o.probes.len()
                        ));
                        self.moved(&o.landing, out);
                    }
                    Err(e) => return Err(format!("error[{}]: {e}", e.code())),
                }
            }
            "p" | "print" => {
                let e = expr::parse_for(rest, s.image()).map_err(|e| format!("error: {e}"))?;
                let v = e.eval(s.machine()).map_err(|e| format!("error: {e}"))?;
                out.push(format!("{rest} = {v}"));
            }
            "restart" | "r" => {
                let r = s.restart();
                self.moved(&r, out);
            }
            "q" | "quit" => {}
            other => return Err(format!("unknown command `{other}`; try `help`")),
        }
        Ok(())
    }
}

fn control(e: crate::control::ControlError) -> String {
    format!("error[{}]: {e}", e.code())
}

fn usage(form: &str) -> String {
    format!("usage: {form}")
}

fn show_report(r: &StopReport) -> String {
    match &r.reason {
        StopReason::Exited { code } => format!("exited with code {code} at ts {}", r.position.ts),
        StopReason::Faulted { message } => format!("fault at {}: {message}", r.position),
        _ => r.to_string(),
    }
}

fn show_progress(p: &Progress) -> String {
    match p {
        Progress::Pass { pass } => format!("pass {pass}"),
        Progress::Write { record } => format!(
            "  W{}: {} = {} at {}",
            record.ordinal, record.target, record.value, record.position
        ),
        Progress::Endpoint { ts, value } => format!("  check ts {ts}: {value}"),
        Progress::Probe { ts, value, .. } => format!("  probe ts {ts}: {value}"),
    }
}
