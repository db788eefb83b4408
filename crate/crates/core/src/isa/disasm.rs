use std::collections::BTreeSet;
use std::fmt::Write;

use super::{Function, Op, Program};

/// Renders a program back to `.tsasm`.
///
/// Labels are synthesized as `L<index>`, so `assemble(disassemble(p)) == p`
/// for every valid program.
pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    for g in &program.globals {
        writeln!(out, ".global {} {}", g.name, g.init).unwrap();
    }
    for f in program.functions.values() {
        if !out.is_empty() {
            out.push('\n');
        }
        function(&mut out, f);
    }
    out
}

fn function(out: &mut String, f: &Function) {
    let mut labels = BTreeSet::new();
    for ins in &f.body {
        labels.extend(ins.op.branch_target());
    }
    for h in &f.handlers {
        labels.extend([h.start, h.end, h.target]);
    }

    writeln!(out, ".func {} {}", f.name, f.nlocals).unwrap();
    let mut line = None;
    for (pc, ins) in f.body.iter().enumerate() {
        if line != Some(ins.line) {
            writeln!(out, ".line {}", ins.line).unwrap();
            line = Some(ins.line);
        }
        if labels.contains(&pc) {
            writeln!(out, "L{pc}:").unwrap();
        }
        match &ins.op {
            Op::Br(t) => writeln!(out, "    br L{t}"),
            Op::Brz(t) => writeln!(out, "    brz L{t}"),
            op => writeln!(out, "    {op}"),
        }
        .unwrap();
    }
    for h in &f.handlers {
        writeln!(out, ".handler L{} L{} L{}", h.start, h.end, h.target).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::super::assemble;
    use super::*;

    #[test]
    fn round_trips_through_assembler() {
        let src = "\
.global total 0
.func main 2
.line 1
    const 3
    store 0
.line 2
top:
    load 0
    brz out
.line 3
    load 0
    const 1
    sub
    store 0
    br top
.line 4
out:
    call side 0
    ret
.func side 1
.line 9
a: const 1
b: throw
c: store 0
    load 0
    ret
.handler a b c
";
        let p = assemble(src).unwrap();
        let text = disassemble(&p);
        let again = assemble(&text).unwrap();
        assert_eq!(p, again);
        assert_eq!(text, disassemble(&again));
    }
}
