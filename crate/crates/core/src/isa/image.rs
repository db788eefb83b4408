//! Binary program images.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "TSVM"
//! version    u16      FORMAT_VERSION
//! nglobals   u32
//!   name     str
//!   init     i64
//! nfuncs     u32      (ascending name order)
//!   name     str
//!   nlocals  u32
//!   ninstr   u32
//!     opcode u8
//!     operands        (see below)
//!     line   u32
//!   nhandl   u32
//!     start u32, end u32, target u32
//!
//! str = u32 byte length + UTF-8 bytes
//! ```
//!
//! Operands: `const` i64; `load`/`store` u32 slot; `gload`/`gstore`/`getf`/
//! `setf` str; `br`/`brz` u32 target; `call` str + u32 argc; all other
//! opcodes have none. Every operand is fixed width, so an `incts` always
//! costs exactly [`INCTS_ENCODED_SIZE`] bytes.

use std::collections::BTreeMap;

use super::{Function, Global, Handler, Instruction, IsaError, Op, Program};

pub const MAGIC: &[u8; 4] = b"TSVM";
pub const FORMAT_VERSION: u16 = 1;
/// Opcode byte plus the u32 line number.
pub const INCTS_ENCODED_SIZE: usize = 5;

mod opcode {
    pub const CONST: u8 = 1;
    pub const LOAD: u8 = 2;
    pub const STORE: u8 = 3;
    pub const GLOAD: u8 = 4;
    pub const GSTORE: u8 = 5;
    pub const NEW: u8 = 6;
    pub const GETF: u8 = 7;
    pub const SETF: u8 = 8;
    pub const ADD: u8 = 9;
    pub const SUB: u8 = 10;
    pub const MUL: u8 = 11;
    pub const DIV: u8 = 12;
    pub const MOD: u8 = 13;
    pub const LT: u8 = 14;
    pub const EQ: u8 = 15;
    pub const BR: u8 = 16;
    pub const BRZ: u8 = 17;
    pub const CALL: u8 = 18;
    pub const RET: u8 = 19;
    pub const THROW: u8 = 20;
    pub const READ: u8 = 21;
    pub const PRINT: u8 = 22;
    pub const INCTS: u8 = 23;
    pub const HALT: u8 = 24;
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length exceeds u32"));
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

/// Encodes a program. The encoding is a pure function of the program.
pub fn serialize(program: &Program) -> Vec<u8> {
    use opcode::*;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    w.len(program.globals.len());
    for g in &program.globals {
        w.str(&g.name);
        w.i64(g.init);
    }
    w.len(program.functions.len());
    for f in program.functions.values() {
        w.str(&f.name);
        w.u32(f.nlocals);
        w.len(f.body.len());
        for ins in &f.body {
            match &ins.op {
                Op::Const(k) => {
                    w.u8(CONST);
                    w.i64(*k);
                }
                Op::Load(s) => {
                    w.u8(LOAD);
                    w.u32(*s);
                }
                Op::Store(s) => {
                    w.u8(STORE);
                    w.u32(*s);
                }
                Op::GLoad(n) => {
                    w.u8(GLOAD);
                    w.str(n);
                }
                Op::GStore(n) => {
                    w.u8(GSTORE);
                    w.str(n);
                }
                Op::GetF(n) => {
                    w.u8(GETF);
                    w.str(n);
                }
                Op::SetF(n) => {
                    w.u8(SETF);
                    w.str(n);
                }
                Op::Br(t) => {
                    w.u8(BR);
                    w.len(*t);
                }
                Op::Brz(t) => {
                    w.u8(BRZ);
                    w.len(*t);
                }
                Op::Call { func, argc } => {
                    w.u8(CALL);
                    w.str(func);
                    w.u32(*argc);
                }
                Op::New => w.u8(NEW),
                Op::Add => w.u8(ADD),
                Op::Sub => w.u8(SUB),
                Op::Mul => w.u8(MUL),
                Op::Div => w.u8(DIV),
                Op::Mod => w.u8(MOD),
                Op::Lt => w.u8(LT),
                Op::Eq => w.u8(EQ),
                Op::Ret => w.u8(RET),
                Op::Throw => w.u8(THROW),
                Op::Read => w.u8(READ),
                Op::Print => w.u8(PRINT),
                Op::IncTs => w.u8(INCTS),
                Op::Halt => w.u8(HALT),
            }
            w.u32(ins.line);
        }
        w.len(f.handlers.len());
        for h in &f.handlers {
            w.len(h.start);
            w.len(h.end);
            w.len(h.target);
        }
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> IsaError {
    IsaError::MalformedImage(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IsaError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, IsaError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, IsaError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, IsaError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn idx(&mut self) -> Result<usize, IsaError> {
        Ok(self.u32()? as usize)
    }
    fn i64(&mut self) -> Result<i64, IsaError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, IsaError> {
        let n = self.idx()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }
    /// Element counts are bounded by the remaining bytes so a corrupt count
    /// cannot trigger a huge allocation.
    fn count(&mut self, min_elem: usize) -> Result<usize, IsaError> {
        let n = self.idx()?;
        if n.saturating_mul(min_elem) > self.bytes.len() - self.pos {
            return Err(malformed(format!("count {n} exceeds image size")));
        }
        Ok(n)
    }
}

/// Decodes and validates an image produced by [`serialize`].
pub fn deserialize(bytes: &[u8]) -> Result<Program, IsaError> {
    use opcode::*;
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| malformed("missing magic"))? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(malformed(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let nglobals = r.count(12)?;
    let mut globals = Vec::with_capacity(nglobals);
    for _ in 0..nglobals {
        globals.push(Global {
            name: r.str()?,
            init: r.i64()?,
        });
    }
    let nfuncs = r.count(16)?;
    let mut functions = BTreeMap::new();
    for _ in 0..nfuncs {
        let name = r.str()?;
        let nlocals = r.u32()?;
        let ninstr = r.count(5)?;
        let mut body = Vec::with_capacity(ninstr);
        for _ in 0..ninstr {
            let op = match r.u8()? {
                CONST => Op::Const(r.i64()?),
                LOAD => Op::Load(r.u32()?),
                STORE => Op::Store(r.u32()?),
                GLOAD => Op::GLoad(r.str()?),
                GSTORE => Op::GStore(r.str()?),
                GETF => Op::GetF(r.str()?),
                SETF => Op::SetF(r.str()?),
                BR => Op::Br(r.idx()?),
                BRZ => Op::Brz(r.idx()?),
                CALL => Op::Call {
                    func: r.str()?,
                    argc: r.u32()?,
                },
                NEW => Op::New,
                ADD => Op::Add,
                SUB => Op::Sub,
                MUL => Op::Mul,
                DIV => Op::Div,
                MOD => Op::Mod,
                LT => Op::Lt,
                EQ => Op::Eq,
                RET => Op::Ret,
                THROW => Op::Throw,
                READ => Op::Read,
                PRINT => Op::Print,
                INCTS => Op::IncTs,
                HALT => Op::Halt,
                other => return Err(malformed(format!("unknown opcode {other}"))),
            };
            body.push(Instruction::new(op, r.u32()?));
        }
        let nhandlers = r.count(12)?;
        let mut handlers = Vec::with_capacity(nhandlers);
        for _ in 0..nhandlers {
            handlers.push(Handler {
                start: r.idx()?,
                end: r.idx()?,
                target: r.idx()?,
            });
        }
        let f = Function {
            name: name.clone(),
            nlocals,
            body,
            handlers,
        };
        if functions.insert(name.clone(), f).is_some() {
            return Err(malformed(format!("duplicate function `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let program = Program { functions, globals };
    program
        .validate()
        .map_err(|e| malformed(format!("invalid program: {e}")))?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::super::assemble;
    use super::*;

    fn minimal() -> Program {
        assemble(".func main 0\n.line 1\nconst 0\nret\n").unwrap()
    }

    #[test]
    fn minimal_round_trip() {
        let p = minimal();
        let bytes = serialize(&p);
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(deserialize(&bytes).unwrap(), p);
        assert_eq!(serialize(&p), bytes);
    }

    #[test]
    fn empty_input_is_malformed() {
        assert!(matches!(deserialize(&[]), Err(IsaError::MalformedImage(_))));
    }

    #[test]
    fn truncation_and_version_mismatch() {
        let bytes = serialize(&minimal());
        for cut in 0..bytes.len() {
            assert!(
                matches!(deserialize(&bytes[..cut]), Err(IsaError::MalformedImage(_))),
                "prefix of {cut} bytes accepted"
            );
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(deserialize(&wrong), Err(IsaError::MalformedImage(m)) if m.contains("version")));
    }

    #[test]
    fn incts_costs_fixed_bytes() {
        let mut p = minimal();
        let before = serialize(&p).len();
        p.functions
            .get_mut("main")
            .unwrap()
            .body
            .insert(0, Instruction::new(Op::IncTs, 1));
        assert_eq!(serialize(&p).len() - before, INCTS_ENCODED_SIZE);
    }
}
