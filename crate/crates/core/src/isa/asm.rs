//! `.tsasm` text assembler.
//!
//! Grammar, one item per line, `#` starts a comment:
//!
//! ```text
//! .global name init
//! .func name nlocals
//! .line n
//! label:            (optionally followed by an instruction)
//! mnemonic operands
//! .handler start_label end_label target_label
//! ```
//!
//! Labels are function-local. `.line` applies to every following instruction
//! until the next `.line`; it resets at each `.func`.

use std::collections::{BTreeMap, HashMap};

use super::{Function, Global, Handler, Instruction, IsaError, Op, Program};

struct PendingFunction {
    name: String,
    nlocals: u32,
    decl_line: usize,
    body: Vec<Instruction>,
    labels: HashMap<String, usize>,
    fixups: Vec<(usize, String)>,
    handlers: Vec<([String; 3], usize)>,
    line: Option<u32>,
}

impl PendingFunction {
    fn finish(self) -> Result<Function, IsaError> {
        let PendingFunction {
            name,
            nlocals,
            decl_line,
            mut body,
            labels,
            fixups,
            handlers,
            ..
        } = self;
        if body.is_empty() {
            return Err(syntax(decl_line, format!("function `{name}` has no instructions")));
        }
        let len = body.len();
        let resolve = |label: &str| -> Result<usize, IsaError> {
            match labels.get(label) {
                Some(&idx) if idx < len => Ok(idx),
                Some(_) => Err(IsaError::UnresolvedLabel(label.to_string())),
                None => Err(IsaError::UnresolvedLabel(label.to_string())),
            }
        };
        for (idx, label) in fixups {
            let target = resolve(&label)?;
            if let Some(t) = body[idx].op.branch_target_mut() {
                *t = target;
            }
        }
        let mut resolved = Vec::with_capacity(handlers.len());
        for ([start, end, target], line) in handlers {
            let h = Handler {
                start: resolve(&start)?,
                end: resolve(&end)?,
                target: resolve(&target)?,
            };
            if h.start > h.end {
                return Err(syntax(line, format!("handler range `{start}`..`{end}` is reversed")));
            }
            resolved.push(h);
        }
        Ok(Function {
            name,
            nlocals,
            body,
            handlers: resolved,
        })
    }
}

fn syntax(line: usize, message: impl Into<String>) -> IsaError {
    IsaError::Syntax {
        line,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ident(tok: &str, line: usize, what: &str) -> Result<String, IsaError> {
    if is_ident(tok) {
        Ok(tok.to_string())
    } else {
        Err(syntax(line, format!("expected {what}, found `{tok}`")))
    }
}

fn number<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, IsaError> {
    tok.parse()
        .map_err(|_| syntax(line, format!("expected {what}, found `{tok}`")))
}

fn expect_args<'a>(
    args: &[&'a str],
    n: usize,
    line: usize,
    what: &str,
) -> Result<(), IsaError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(syntax(
            line,
            format!("`{what}` takes {n} operand(s), found {}", args.len()),
        ))
    }
}

fn close(
    current: &mut Option<PendingFunction>,
    functions: &mut BTreeMap<String, Function>,
) -> Result<(), IsaError> {
    if let Some(pending) = current.take() {
        let f = pending.finish()?;
        functions.insert(f.name.clone(), f);
    }
    Ok(())
}

/// Assembles `.tsasm` source into a validated [`Program`].
pub fn assemble(text: &str) -> Result<Program, IsaError> {
    let mut functions: BTreeMap<String, Function> = BTreeMap::new();
    let mut globals: Vec<Global> = Vec::new();
    let mut current: Option<PendingFunction> = None;


    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }

        if let Some(rest) = line.strip_prefix('.') {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            let (directive, args) = toks.split_first().ok_or_else(|| syntax(lineno, "empty directive"))?;
            match *directive {
                "global" => {
                    expect_args(args, 2, lineno, ".global")?;
                    let name = ident(args[0], lineno, "global name")?;
                    if globals.iter().any(|g| g.name == name) {
                        return Err(IsaError::DuplicateGlobal(name));
                    }
                    let init = number(args[1], lineno, "integer")?;
                    globals.push(Global { name, init });
                }
                "func" => {
                    expect_args(args, 2, lineno, ".func")?;
                    close(&mut current, &mut functions)?;
                    let name = ident(args[0], lineno, "function name")?;
                    if functions.contains_key(&name) {
                        return Err(IsaError::DuplicateFunction(name));
                    }
                    current = Some(PendingFunction {
                        name,
                        nlocals: number(args[1], lineno, "local count")?,
                        decl_line: lineno,
                        body: Vec::new(),
                        labels: HashMap::new(),
                        fixups: Vec::new(),
                        handlers: Vec::new(),
                        line: None,
                    });
                }
                "line" => {
                    expect_args(args, 1, lineno, ".line")?;
                    let f = current
                        .as_mut()
                        .ok_or_else(|| syntax(lineno, "`.line` outside of a function"))?;
                    let n: u32 = number(args[0], lineno, "line number")?;
                    if n == 0 {
                        return Err(syntax(lineno, "line numbers start at 1"));
                    }
                    f.line = Some(n);
                }
                "handler" => {
                    expect_args(args, 3, lineno, ".handler")?;
                    let f = current
                        .as_mut()
                        .ok_or_else(|| syntax(lineno, "`.handler` outside of a function"))?;
                    let labels = [
                        ident(args[0], lineno, "label")?,
                        ident(args[1], lineno, "label")?,
                        ident(args[2], lineno, "label")?,
                    ];
                    f.handlers.push((labels, lineno));
                }
                other => return Err(syntax(lineno, format!("unknown directive `.{other}`"))),
            }
            continue;
        }

        let f = current
            .as_mut()
            .ok_or_else(|| syntax(lineno, "instruction outside of a function"))?;

        if let Some(colon) = line.find(':') {
            let label = line[..colon].trim();
            if !is_ident(label) {
                return Err(syntax(lineno, format!("bad label `{label}`")));
            }
            if f.labels.insert(label.to_string(), f.body.len()).is_some() {
                return Err(IsaError::DuplicateLabel {
                    function: f.name.clone(),
                    label: label.to_string(),
                });
            }
            line = line[colon + 1..].trim();
            if line.is_empty() {
                continue;
            }
        }

        let toks: Vec<&str> = line.split_whitespace().collect();
        let (mnemonic, args) = toks.split_first().expect("non-empty line");
        let src_line = f
            .line
            .ok_or_else(|| syntax(lineno, "instruction before any `.line` directive"))?;
        let nullary = |op: Op| -> Result<Op, IsaError> {
            expect_args(args, 0, lineno, mnemonic)?;
            Ok(op)
        };
        let op = match *mnemonic {
            "const" => {
                expect_args(args, 1, lineno, mnemonic)?;
                Op::Const(number(args[0], lineno, "integer")?)
            }
            "load" | "store" => {
                expect_args(args, 1, lineno, mnemonic)?;
                let slot: u32 = number(args[0], lineno, "local slot")?;
                if slot >= f.nlocals {
                    return Err(syntax(
                        lineno,
                        format!("local {slot} out of range ({} declared)", f.nlocals),
                    ));
                }
                if *mnemonic == "load" {
                    Op::Load(slot)
                } else {
                    Op::Store(slot)
                }
            }
            "gload" | "gstore" | "getf" | "setf" => {
                expect_args(args, 1, lineno, mnemonic)?;
                let name = ident(args[0], lineno, "name")?;
                match *mnemonic {
                    "gload" => Op::GLoad(name),
                    "gstore" => Op::GStore(name),
                    "getf" => Op::GetF(name),
                    _ => Op::SetF(name),
                }
            }
            "br" | "brz" => {
                expect_args(args, 1, lineno, mnemonic)?;
                let label = ident(args[0], lineno, "label")?;
                f.fixups.push((f.body.len(), label));
                if *mnemonic == "br" {
                    Op::Br(0)
                } else {
                    Op::Brz(0)
                }
            }
            "call" => {
                expect_args(args, 2, lineno, mnemonic)?;
                Op::Call {
                    func: ident(args[0], lineno, "function name")?,
                    argc: number(args[1], lineno, "argument count")?,
                }
            }
            "new" => nullary(Op::New)?,
            "add" => nullary(Op::Add)?,
            "sub" => nullary(Op::Sub)?,
            "mul" => nullary(Op::Mul)?,
            "div" => nullary(Op::Div)?,
            "mod" => nullary(Op::Mod)?,
            "lt" => nullary(Op::Lt)?,
            "eq" => nullary(Op::Eq)?,
            "ret" => nullary(Op::Ret)?,
            "throw" => nullary(Op::Throw)?,
            "read" => nullary(Op::Read)?,
            "print" => nullary(Op::Print)?,
            "incts" => nullary(Op::IncTs)?,
            "halt" => nullary(Op::Halt)?,
            other => return Err(syntax(lineno, format!("unknown instruction `{other}`"))),
        };
        f.body.push(Instruction::new(op, src_line));
    }
    close(&mut current, &mut functions)?;

    let program = Program { functions, globals };
    program.validate()?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `while (i < a) i += b;` with i=0, a=5, b=1.
    pub(crate) const FIG_LOOP: &str = "\
.func main 3
.line 1
    const 0
    store 0
    const 5
    store 1
    const 1
    store 2
head:
    load 0
    load 1
    lt
    brz done
.line 2
    load 0
    load 2
    add
    store 0
.line 3
    br head
.line 4
done:
    load 0
    ret
";

    #[test]
    fn minimal_program() {
        let p = assemble(".func main 0\n.line 1\nconst 0\nret\n").unwrap();
        let main = p.function("main").unwrap();
        assert_eq!(
            main.body,
            vec![Instruction::new(Op::Const(0), 1), Instruction::new(Op::Ret, 1)]
        );
        assert!(p.globals.is_empty());
    }

    #[test]
    fn unresolved_label() {
        let err = assemble(".func main 0\n.line 1\nbr L\nconst 0\nret\n").unwrap_err();
        assert_eq!(err, IsaError::UnresolvedLabel("L".into()));
    }

    #[test]
    fn duplicate_function() {
        let src = ".func main 0\n.line 1\nconst 0\nret\n.func main 0\n.line 1\nconst 0\nret\n";
        assert_eq!(assemble(src).unwrap_err(), IsaError::DuplicateFunction("main".into()));
    }

    #[test]
    fn syntax_error_reports_source_line() {
        let err = assemble(".func main 0\n.line 1\nconst zero\nret\n").unwrap_err();
        assert!(matches!(err, IsaError::Syntax { line: 3, .. }), "{err:?}");
        let err = assemble(".func main 0\nconst 0\nret\n").unwrap_err();
        assert!(matches!(err, IsaError::Syntax { line: 2, .. }), "{err:?}");
        let err = assemble(".func main 0\n.line 0\nconst 0\nret\n").unwrap_err();
        assert!(matches!(err, IsaError::Syntax { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn unresolved_call_and_global() {
        let err = assemble(".func main 0\n.line 1\ncall nope 0\nret\n").unwrap_err();
        assert_eq!(err, IsaError::UnresolvedCall("nope".into()));
        let err = assemble(".func main 0\n.line 1\ngload g\nret\n").unwrap_err();
        assert_eq!(err, IsaError::UnresolvedGlobal("g".into()));
    }

    #[test]
    fn label_after_last_instruction_is_unresolved() {
        let err = assemble(".func main 0\n.line 1\nbr end\nconst 0\nret\nend:\n").unwrap_err();
        assert_eq!(err, IsaError::UnresolvedLabel("end".into()));
    }

    #[test]
    fn counting_loop_has_backward_branch() {
        let p = assemble(FIG_LOOP).unwrap();
        let main = p.function("main").unwrap();
        // hand-checked: head = 6, `brz done` at 9 -> 15, `br head` at 14 -> 6
        assert_eq!(main.body[9].op, Op::Brz(15));
        assert_eq!(main.body[14].op, Op::Br(6));
        assert!(main.body[14].is_backward_branch(14));
        assert!(!main.body[9].is_backward_branch(9));
        let lines: Vec<u32> = main.body.iter().map(|i| i.line).collect();
        assert_eq!(lines, [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 3, 4, 4]);
        assert_eq!(main.body.len(), 17);
    }

    #[test]
    fn label_with_inline_instruction_and_handlers() {
        let src = "\
.global g 7
.func main 1
.line 1
try: const 1
end: throw
.line 2
catch: store 0
    load 0
    ret
.handler try end catch
";
        let p = assemble(src).unwrap();
        let main = p.function("main").unwrap();
        assert_eq!(main.handlers, vec![Handler { start: 0, end: 1, target: 2 }]);
        assert_eq!(p.globals, vec![Global { name: "g".into(), init: 7 }]);
    }
}
