//! The simulated instruction set and program representation.
//!
//! Besides ordinary integer, memory and control instructions, the ISA
//! exposes the family-management operations of the core directly:
//! allocation, parameter setup, bulk creation, synchronization, release
//! and inter-context register access.

mod asm;
mod disasm;

pub use asm::{assemble, AsmError, AsmErrorKind};
pub use disasm::disassemble;

use std::fmt;

use crate::sep::SepPolicy;
use crate::sync::ClassCounts;
use crate::Word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegClass {
    Global,
    Shared,
    Local,
    Dependent,
}

impl RegClass {
    pub fn prefix(self) -> char {
        match self {
            RegClass::Global => 'g',
            RegClass::Shared => 's',
            RegClass::Local => 'l',
            RegClass::Dependent => 'd',
        }
    }

    /// Globals and dependents are read-only to the thread that owns them.
    pub fn is_writable(self) -> bool {
        matches!(self, RegClass::Shared | RegClass::Local)
    }

    pub fn declared(self, counts: &ClassCounts) -> u32 {
        match self {
            RegClass::Global => counts.globals,
            RegClass::Shared => counts.shareds,
            RegClass::Local => counts.locals,
            RegClass::Dependent => counts.dependents,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg {
    pub class: RegClass,
    pub index: u16,
}

impl Reg {
    pub fn new(class: RegClass, index: u16) -> Self {
        Self { class, index }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.prefix(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(Word),
}

impl Operand {
    pub fn reg(&self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(*r),
            Operand::Imm(_) => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => r.fmt(f),
            Operand::Imm(v) => write!(f, "#{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    /// Sign of `a - b`: -1, 0 or 1.
    Cmp,
    /// 1 if `a < b`, else 0.
    Slt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FpuOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Cond {
    pub fn holds(self, a: Word, b: Word) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Lt => a < b,
            Cond::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AllocMode {
    /// Fail as soon as one core of the place lacks resources.
    #[default]
    Normal,
    /// Park at the first core lacking resources until they free up.
    Suspend,
    /// Claim each core's exclusive context, waiting while it is occupied.
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AllocStrategy {
    /// Shrink the place by halves on failure, down to one core.
    #[default]
    Normal,
    /// All cores of the place or nothing.
    Exact,
    /// Only the first core of the place.
    Single,
    /// The place core with the fewest live family contexts.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyParam {
    Start,
    Limit,
    Step,
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instruction {
    Alu {
        op: AluOp,
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    Mov {
        dst: Reg,
        src: Operand,
    },
    /// Floating-point on IEEE-754 bit patterns, completed asynchronously.
    Fpu {
        op: FpuOp,
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    Jump {
        target: usize,
    },
    Branch {
        cond: Cond,
        a: Operand,
        b: Operand,
        target: usize,
    },
    /// Split-phase load of `base + offset` into `dst`.
    Ld {
        dst: Reg,
        base: Operand,
        offset: Operand,
    },
    St {
        src: Operand,
        base: Operand,
        offset: Operand,
    },
    GetIdx {
        dst: Reg,
    },
    Allocate {
        dst: Reg,
        place: Operand,
        mode: AllocMode,
        strategy: AllocStrategy,
        forceseq: bool,
    },
    SetParam {
        param: FamilyParam,
        fid: Operand,
        value: Operand,
    },
    Create {
        fid: Operand,
        thread: usize,
    },
    Detach {
        fid: Operand,
        thread: usize,
    },
    Sync {
        fid: Operand,
    },
    Release {
        fid: Operand,
    },
    PutG {
        fid: Operand,
        slot: u16,
        value: Operand,
    },
    PutS {
        fid: Operand,
        slot: u16,
        value: Operand,
    },
    GetS {
        dst: Reg,
        fid: Operand,
        slot: u16,
    },
    Break,
    SepAlloc {
        dst: Reg,
        count: Operand,
        policy: SepPolicy,
    },
    SepFree {
        place: Operand,
    },
    Print {
        value: Operand,
    },
    Nop,
    End,
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        use Instruction::*;
        match self {
            Alu { op, .. } => match op {
                AluOp::Add => "ADD",
                AluOp::Sub => "SUB",
                AluOp::Mul => "MUL",
                AluOp::Div => "DIV",
                AluOp::Rem => "REM",
                AluOp::And => "AND",
                AluOp::Or => "OR",
                AluOp::Xor => "XOR",
                AluOp::Shl => "SHL",
                AluOp::Shr => "SHR",
                AluOp::Cmp => "CMP",
                AluOp::Slt => "SLT",
            },
            Mov { .. } => "MOV",
            Fpu { op, .. } => match op {
                FpuOp::Add => "FADD",
                FpuOp::Mul => "FMUL",
            },
            Jump { .. } => "BR",
            Branch { cond, .. } => match cond {
                Cond::Eq => "BEQ",
                Cond::Ne => "BNE",
                Cond::Lt => "BLT",
                Cond::Ge => "BGE",
            },
            Ld { .. } => "LD",
            St { .. } => "ST",
            GetIdx { .. } => "GETIDX",
            Allocate { .. } => "ALLOCATE",
            SetParam { param, .. } => match param {
                FamilyParam::Start => "SETSTART",
                FamilyParam::Limit => "SETLIMIT",
                FamilyParam::Step => "SETSTEP",
                FamilyParam::Block => "SETBLOCK",
            },
            Create { .. } => "CREI",
            Detach { .. } => "DETACH",
            Sync { .. } => "SYNC",
            Release { .. } => "RELEASE",
            PutG { .. } => "PUTG",
            PutS { .. } => "PUTS",
            GetS { .. } => "GETS",
            Break => "BREAK",
            SepAlloc { .. } => "SEPALLOC",
            SepFree { .. } => "SEPFREE",
            Print { .. } => "PRINT",
            Nop => "NOP",
            End => "END",
        }
    }

    /// Register operands this instruction reads.
    pub fn sources(&self) -> Vec<Reg> {
        use Instruction::*;
        let ops: Vec<Operand> = match self {
            Alu { a, b, .. } | Fpu { a, b, .. } | Branch { a, b, .. } => vec![*a, *b],
            Mov { src, .. } => vec![*src],
            Ld { base, offset, .. } => vec![*base, *offset],
            St { src, base, offset } => vec![*src, *base, *offset],
            Allocate { place, .. } => vec![*place],
            SetParam { fid, value, .. } => vec![*fid, *value],
            Create { fid, .. } | Detach { fid, .. } | Sync { fid } | Release { fid } => {
                vec![*fid]
            }
            PutG { fid, value, .. } | PutS { fid, value, .. } => vec![*fid, *value],
            GetS { fid, .. } => vec![*fid],
            SepAlloc { count, .. } => vec![*count],
            SepFree { place } => vec![*place],
            Print { value } => vec![*value],
            Jump { .. } | GetIdx { .. } | Break | Nop | End => vec![],
        };
        ops.iter().filter_map(Operand::reg).collect()
    }

    /// The register this instruction writes, if any.
    pub fn destination(&self) -> Option<Reg> {
        use Instruction::*;
        match self {
            Alu { dst, .. }
            | Mov { dst, .. }
            | Fpu { dst, .. }
            | Ld { dst, .. }
            | GetIdx { dst }
            | Allocate { dst, .. }
            | GetS { dst, .. }
            | SepAlloc { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    pub fn branch_target(&self) -> Option<usize> {
        match self {
            Instruction::Jump { target } | Instruction::Branch { target, .. } => Some(*target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadDef {
    pub name: String,
    pub counts: ClassCounts,
    pub body: Vec<Instruction>,
}

impl ThreadDef {
    /// Threads with shared channels form a chain and run on one core.
    pub fn is_dependent(&self) -> bool {
        self.counts.shareds > 0 || self.counts.dependents > 0
    }
}

/// Initialized words starting at `addr`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSegment {
    pub addr: Word,
    pub words: Vec<Word>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub threads: Vec<ThreadDef>,
    pub entry: usize,
    pub data: Vec<DataSegment>,
}

impl Program {
    pub fn thread_index(&self, name: &str) -> Option<usize> {
        self.threads.iter().position(|t| t.name == name)
    }

    pub fn entry_thread(&self) -> &ThreadDef {
        &self.threads[self.entry]
    }

    /// Flattened `(address, value)` pairs of the data segment, later
    /// segments overriding earlier ones.
    pub fn initial_memory(&self) -> Vec<(Word, Word)> {
        let mut map = std::collections::BTreeMap::new();
        for seg in &self.data {
            for (i, w) in seg.words.iter().enumerate() {
                map.insert(seg.addr + i as Word, *w);
            }
        }
        map.into_iter().collect()
    }
}
