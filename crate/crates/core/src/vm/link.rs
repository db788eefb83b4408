use std::collections::HashMap;

use crate::isa::{Handler, IsaError, Op, Program, ENTRY_FUNCTION};

pub type FuncId = usize;
pub type GlobalId = usize;
pub type FieldId = u32;

/// Instruction with every name resolved to a dense index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ins {
    Const(i64),
    Load(usize),
    Store(usize),
    GLoad(GlobalId),
    GStore(GlobalId),
    New,
    GetF(FieldId),
    SetF(FieldId),
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Eq,
    Br(usize),
    Brz(usize),
    Call(FuncId, usize),
    Ret,
    Throw,
    Read,
    Print,
    IncTs,
    Halt,
}

#[derive(Debug)]
pub struct LinkedFunction {
    pub name: String,
    pub nlocals: usize,
    pub(crate) code: Vec<Ins>,
    pub lines: Vec<u32>,
    pub handlers: Vec<Handler>,
}

impl LinkedFunction {
    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn is_incts(&self, pc: usize) -> bool {
        matches!(self.code.get(pc), Some(Ins::IncTs))
    }

    /// First non-`incts` instruction attributed to `line`, falling back to
    /// an `incts` if that is all the line has.
    pub fn first_pc_of_line(&self, line: u32) -> Option<usize> {
        let mut fallback = None;
        for (pc, &l) in self.lines.iter().enumerate() {
            if l == line {
                if !self.is_incts(pc) {
                    return Some(pc);
                }
                fallback.get_or_insert(pc);
            }
        }
        fallback
    }
}

/// A validated program with names resolved, shared by every machine that
/// runs it.
#[derive(Debug)]
pub struct Image {
    program: Program,
    pub(crate) funcs: Vec<LinkedFunction>,
    func_ids: HashMap<String, FuncId>,
    globals: Vec<(String, i64)>,
    global_ids: HashMap<String, GlobalId>,
    fields: Vec<String>,
    field_ids: HashMap<String, FieldId>,
    entry: FuncId,
}

impl Image {
    pub fn new(program: Program) -> Result<Self, IsaError> {
        program.validate()?;
        let func_ids: HashMap<String, FuncId> = program
            .functions
            .keys()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let globals: Vec<(String, i64)> = program
            .globals
            .iter()
            .map(|g| (g.name.clone(), g.init))
            .collect();
        let global_ids = globals
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect::<HashMap<_, _>>();
        let mut fields = Vec::new();
        let mut field_ids = HashMap::new();
        let mut field = |name: &str| -> FieldId {
            *field_ids.entry(name.to_string()).or_insert_with(|| {
                fields.push(name.to_string());
                (fields.len() - 1) as FieldId
            })
        };

        let mut funcs = Vec::with_capacity(program.functions.len());
        for f in program.functions.values() {
            let code = f
                .body
                .iter()
                .map(|ins| match &ins.op {
                    Op::Const(k) => Ins::Const(*k),
                    Op::Load(s) => Ins::Load(*s as usize),
                    Op::Store(s) => Ins::Store(*s as usize),
                    Op::GLoad(g) => Ins::GLoad(global_ids[g]),
                    Op::GStore(g) => Ins::GStore(global_ids[g]),
                    Op::New => Ins::New,
                    Op::GetF(name) => Ins::GetF(field(name)),
                    Op::SetF(name) => Ins::SetF(field(name)),
                    Op::Add => Ins::Add,
                    Op::Sub => Ins::Sub,
                    Op::Mul => Ins::Mul,
                    Op::Div => Ins::Div,
                    Op::Mod => Ins::Mod,
                    Op::Lt => Ins::Lt,
                    Op::Eq => Ins::Eq,
                    Op::Br(t) => Ins::Br(*t),
                    Op::Brz(t) => Ins::Brz(*t),
                    Op::Call { func, argc } => Ins::Call(func_ids[func], *argc as usize),
                    Op::Ret => Ins::Ret,
                    Op::Throw => Ins::Throw,
                    Op::Read => Ins::Read,
                    Op::Print => Ins::Print,
                    Op::IncTs => Ins::IncTs,
                    Op::Halt => Ins::Halt,
                })
                .collect();
            funcs.push(LinkedFunction {
                name: f.name.clone(),
                nlocals: f.nlocals as usize,
                code,
                lines: f.body.iter().map(|i| i.line).collect(),
                handlers: f.handlers.clone(),
            });
        }
        let entry = func_ids[ENTRY_FUNCTION];
        Ok(Self {
            program,
            funcs,
            func_ids,
            globals,
            global_ids,
            fields,
            field_ids,
            entry,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn entry(&self) -> FuncId {
        self.entry
    }

    pub fn function(&self, id: FuncId) -> &LinkedFunction {
        &self.funcs[id]
    }

    pub fn function_id(&self, name: &str) -> Option<FuncId> {
        self.func_ids.get(name).copied()
    }

    pub fn functions(&self) -> impl Iterator<Item = &LinkedFunction> {
        self.funcs.iter()
    }

    pub fn global_id(&self, name: &str) -> Option<GlobalId> {
        self.global_ids.get(name).copied()
    }

    pub fn global_name(&self, id: GlobalId) -> &str {
        &self.globals[id].0
    }

    pub fn global_count(&self) -> usize {
        self.globals.len()
    }

    pub(crate) fn global_inits(&self) -> impl Iterator<Item = i64> + '_ {
        self.globals.iter().map(|(_, v)| *v)
    }

    /// Fields that no instruction mentions have no id; reading them through
    /// an expression always yields 0.
    pub fn field_id(&self, name: &str) -> Option<FieldId> {
        self.field_ids.get(name).copied()
    }

    pub fn field_name(&self, id: FieldId) -> &str {
        &self.fields[id as usize]
    }
}
