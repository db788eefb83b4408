//! Side-effect-free integer expressions over a stopped machine.
//!
//! Grammar: integer literals, `ts`, global names, handle literals `#N`,
//! field chains `g.f.h`, unary `- !`, and the binary operators
//! `* / %`, `+ -`, `< <= > >=`, `== !=`, `&&`, `||` (tightest first).
//! Any nonzero value is true; comparisons and logic yield 0 or 1.

use std::fmt;

use thiserror::Error;

use crate::vm::{Image, Machine};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Mul,
    Div,
    Rem,
    Add,
    Sub,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    fn binding_power(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Ts,
    /// A global or a handle literal followed by zero or more field names.
    Path { root: Root, fields: Vec<String> },
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Root {
    Global(String),
    Handle(i64),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(k) => write!(f, "{k}"),
            Expr::Ts => f.write_str("ts"),
            Expr::Path { root, fields } => {
                match root {
                    Root::Global(g) => f.write_str(g)?,
                    Root::Handle(h) => write!(f, "#{h}")?,
                }
                for field in fields {
                    write!(f, ".{field}")?;
                }
                Ok(())
            }
            Expr::Unary(UnOp::Neg, e) => write!(f, "-{e}"),
            Expr::Unary(UnOp::Not, e) => write!(f, "!{e}"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivideByZero,
    #[error("nil or dangling handle {0}")]
    NilHandle(i64),
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Ident(String),
    Handle(i64),
    Dot,
    LParen,
    RParen,
    Not,
    Op(BinOp),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |column: usize, message: String| ExprError::Syntax { column: column + 1, message };
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '#' {
            let digits_from = if c == '#' { i + 1 } else { i };
            i = digits_from;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n: i64 = src[digits_from..i]
                .parse()
                .map_err(|_| err(start, format!("bad number `{}`", &src[start..i])))?;
            out.push((start, if c == '#' { Tok::Handle(n) } else { Tok::Int(n) }));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
            continue;
        }
        let two = src.get(i..i + 2).unwrap_or("");
        let (tok, len) = match two {
            "==" => (Tok::Op(BinOp::Eq), 2),
            "!=" => (Tok::Op(BinOp::Ne), 2),
            "<=" => (Tok::Op(BinOp::Le), 2),
            ">=" => (Tok::Op(BinOp::Ge), 2),
            "&&" => (Tok::Op(BinOp::And), 2),
            "||" => (Tok::Op(BinOp::Or), 2),
            _ => match c {
                '<' => (Tok::Op(BinOp::Lt), 1),
                '>' => (Tok::Op(BinOp::Gt), 1),
                '+' => (Tok::Op(BinOp::Add), 1),
                '-' => (Tok::Op(BinOp::Sub), 1),
                '*' => (Tok::Op(BinOp::Mul), 1),
                '/' => (Tok::Op(BinOp::Div), 1),
                '%' => (Tok::Op(BinOp::Rem), 1),
                '!' => (Tok::Not, 1),
                '.' => (Tok::Dot, 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                _ => return Err(err(start, format!("unexpected character `{c}`"))),
            },
        };
        out.push((start, tok));
        i += len;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.at).map_or(self.len, |(c, _)| *c) + 1
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            column: self.column(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(_, t)| t.clone());
        self.at += 1;
        t
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.prefix()?;
        while let Some(Tok::Op(op)) = self.peek() {
            let op = *op;
            let bp = op.binding_power();
            if bp < min_bp {
                break;
            }
            self.at += 1;
            let rhs = self.expr(bp + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ExprError> {
        let column = self.column();
        match self.next() {
            Some(Tok::Int(k)) => Ok(Expr::Int(k)),
            Some(Tok::Op(BinOp::Sub)) => Ok(Expr::Unary(UnOp::Neg, Box::new(self.expr(7)?))),
            Some(Tok::Not) => Ok(Expr::Unary(UnOp::Not, Box::new(self.expr(7)?))),
            Some(Tok::LParen) => {
                let e = self.expr(0)?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => {
                        self.at -= 1;
                        self.error("expected `)`")
                    }
                }
            }
            Some(Tok::Ident(name)) if name == "ts" => Ok(Expr::Ts),
            Some(Tok::Ident(name)) => self.path(Root::Global(name)),
            Some(Tok::Handle(h)) => self.path(Root::Handle(h)),
            Some(_) => Err(ExprError::Syntax {
                column,
                message: "expected an operand".into(),
            }),
            None => self.error("unexpected end of expression"),
        }
    }

    fn path(&mut self, root: Root) -> Result<Expr, ExprError> {
        let mut fields = Vec::new();
        while self.peek() == Some(&Tok::Dot) {
            self.at += 1;
            match self.next() {
                Some(Tok::Ident(f)) => fields.push(f),
                _ => {
                    self.at -= 1;
                    return self.error("expected a field name after `.`");
                }
            }
        }
        Ok(Expr::Path { root, fields })
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        at: 0,
        len: src.len(),
    };
    let e = p.expr(0)?;
    if p.peek().is_some() {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

/// Parses `src` and checks that every global it names exists in `image`.
pub fn parse_for(src: &str, image: &Image) -> Result<Expr, ExprError> {
    let e = parse(src)?;
    e.validate(image)?;
    Ok(e)
}

fn truth(b: bool) -> i64 {
    b as i64
}

impl Expr {
    pub fn validate(&self, image: &Image) -> Result<(), ExprError> {
        match self {
            Expr::Int(_) | Expr::Ts => Ok(()),
            Expr::Path { root: Root::Global(g), .. } if image.global_id(g).is_none() => {
                Err(ExprError::UnknownGlobal(g.clone()))
            }
            Expr::Path { .. } => Ok(()),
            Expr::Unary(_, e) => e.validate(image),
            Expr::Binary(_, a, b) => {
                a.validate(image)?;
                b.validate(image)
            }
        }
    }

    pub fn eval(&self, m: &Machine) -> Result<i64, EvalError> {
        Ok(match self {
            Expr::Int(k) => *k,
            Expr::Ts => m.ts() as i64,
            Expr::Path { root, fields } => {
                let mut v = match root {
                    Root::Global(g) => m.global(g).ok_or_else(|| EvalError::UnknownGlobal(g.clone()))?,
                    Root::Handle(h) => *h,
                };
                for f in fields {
                    v = m.field(v, f).ok_or(EvalError::NilHandle(v))?;
                }
                v
            }
            Expr::Unary(UnOp::Neg, e) => e.eval(m)?.wrapping_neg(),
            Expr::Unary(UnOp::Not, e) => truth(e.eval(m)? == 0),
            Expr::Binary(BinOp::And, a, b) => truth(a.eval(m)? != 0 && b.eval(m)? != 0),
            Expr::Binary(BinOp::Or, a, b) => truth(a.eval(m)? != 0 || b.eval(m)? != 0),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(m)?, b.eval(m)?);
                match op {
                    BinOp::Mul => a.wrapping_mul(b),
                    BinOp::Div if b == 0 => return Err(EvalError::DivideByZero),
                    BinOp::Div => a.wrapping_div(b),
                    BinOp::Rem if b == 0 => return Err(EvalError::DivideByZero),
                    BinOp::Rem => a.wrapping_rem(b),
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Lt => truth(a < b),
                    BinOp::Le => truth(a <= b),
                    BinOp::Gt => truth(a > b),
                    BinOp::Ge => truth(a >= b),
                    BinOp::Eq => truth(a == b),
                    BinOp::Ne => truth(a != b),
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
        })
    }

    pub fn holds(&self, m: &Machine) -> Result<bool, EvalError> {
        self.eval(m).map(|v| v != 0)
    }
}
