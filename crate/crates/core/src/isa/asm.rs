//! `.mtasm` assembler.
//!
//! ```text
//! .data 4096 1 2 3        # words at consecutive addresses
//! .entry main
//! .thread main g=0 s=0 l=2 d=0
//! loop:
//!     ADD  l0, l0, #1
//!     BNE  l0, #10, loop
//!     END
//! ```
//!
//! A `#` followed by a digit, sign or `.` starts an immediate; any other
//! `#` starts a comment. Labels are local to their thread.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::{
    AllocMode, AllocStrategy, AluOp, Cond, DataSegment, FamilyParam, FpuOp, Instruction, Operand,
    Program, Reg, RegClass, ThreadDef,
};
use crate::sep::SepPolicy;
use crate::sync::ClassCounts;
use crate::Word;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmError {
    pub line: usize,
    pub col: usize,
    pub kind: AsmErrorKind,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.kind)
    }
}

impl std::error::Error for AsmError {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("label `{0}` defined twice")]
    DuplicateLabel(String),
    #[error("label `{0}` does not precede an instruction")]
    DanglingLabel(String),
    #[error("register class violation: `{reg}` {reason}")]
    RegisterClass { reg: String, reason: String },
    #[error("`{reg}` exceeds the {declared} declared {class} registers")]
    RegisterOutOfRange {
        reg: String,
        declared: u32,
        class: &'static str,
    },
    #[error("bad operand `{0}`")]
    BadOperand(String),
    #[error("`{mnemonic}` takes {expected} operands, found {found}")]
    OperandCount {
        mnemonic: String,
        expected: String,
        found: usize,
    },
    #[error("unknown thread `{0}`")]
    UnknownThread(String),
    #[error("thread `{0}` defined twice")]
    DuplicateThread(String),
    #[error("thread `{0}` does not end with END")]
    MissingEnd(String),
    #[error("instruction outside any .thread")]
    OutsideThread,
    #[error("bad directive: {0}")]
    BadDirective(String),
    #[error("thread `{0}` declares {1} shareds but {2} dependents; they must match")]
    ChannelMismatch(String, u32, u32),
    #[error("program defines no threads")]
    NoThreads,
}

/// A token with the 1-based column where it starts.
#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    text: &'a str,
    col: usize,
}

struct Fixup {
    instr: usize,
    name: String,
    line: usize,
    col: usize,
}

struct ThreadBuilder {
    def: ThreadDef,
    labels: HashMap<String, usize>,
    branch_fixups: Vec<Fixup>,
    pending_labels: Vec<(String, usize, usize)>,
    line: usize,
}

#[derive(Default)]
struct Assembler {
    threads: Vec<ThreadDef>,
    data: Vec<DataSegment>,
    current: Option<ThreadBuilder>,
    /// CREI/DETACH thread names, keyed by (thread, instruction).
    thread_fixups: Vec<(usize, Fixup)>,
    entry: Option<(String, usize, usize)>,
}

const UNRESOLVED: usize = usize::MAX;

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut asm = Assembler::default();
    for (i, raw) in text.lines().enumerate() {
        asm.line(i + 1, raw)?;
    }
    asm.finish()
}

fn err(line: usize, col: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, col, kind }
}

/// Strip a trailing comment, leaving immediates such as `#-3` alone.
fn strip_comment(raw: &str) -> &str {
    let bytes = raw.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' {
            let next = bytes.get(i + 1).copied();
            let immediate = matches!(next, Some(c) if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.');
            if !immediate {
                return &raw[..i];
            }
        }
    }
    raw
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Split on commas, keeping columns.
fn split_operands(rest: &str, base_col: usize) -> Vec<Tok<'_>> {
    if rest.trim().is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in rest.char_indices().chain(std::iter::once((rest.len(), ','))) {
        if c == ',' {
            let piece = &rest[start..i];
            let lead = piece.len() - piece.trim_start().len();
            out.push(Tok {
                text: piece.trim(),
                col: base_col + start + lead,
            });
            start = i + 1;
        }
    }
    out
}

fn split_words(s: &str, base_col: usize) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices().chain(std::iter::once((s.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(st)) => {
                out.push(Tok {
                    text: &s[st..i],
                    col: base_col + st,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn parse_word(text: &str) -> Option<Word> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()? as i128
    } else if body.chars().all(|c| c.is_ascii_digit()) && !body.is_empty() {
        body.parse::<i128>().ok()?
    } else {
        return None;
    };
    let v = if neg { -magnitude } else { magnitude };
    if v < i64::MIN as i128 || v > u64::MAX as i128 {
        return None;
    }
    Some(v as i64)
}

fn parse_immediate(text: &str) -> Option<Word> {
    let body = text.strip_prefix('#')?;
    if let Some(v) = parse_word(body) {
        return Some(v);
    }
    if body.contains(['.', 'e', 'E']) {
        return body.parse::<f64>().ok().map(|f| f.to_bits() as i64);
    }
    None
}

impl Assembler {
    fn line(&mut self, line: usize, raw: &str) -> Result<(), AsmError> {
        let code = strip_comment(raw);
        let trimmed_start = code.len() - code.trim_start().len();
        let mut rest = code.trim();
        let mut col = trimmed_start + 1;
        if rest.is_empty() {
            return Ok(());
        }
        if rest.starts_with('.') {
            return self.directive(line, col, rest);
        }
        // Leading labels.
        loop {
            let Some(colon) = rest.find(':') else { break };
            let name = rest[..colon].trim();
            if !is_ident(name) || name.contains(char::is_whitespace) {
                break;
            }
            let Some(t) = self.current.as_mut() else {
                return Err(err(line, col, AsmErrorKind::OutsideThread));
            };
            if t.labels.contains_key(name) || t.pending_labels.iter().any(|(n, ..)| n == name) {
                return Err(err(line, col, AsmErrorKind::DuplicateLabel(name.to_string())));
            }
            t.pending_labels.push((name.to_string(), line, col));
            let after = &rest[colon + 1..];
            let lead = after.len() - after.trim_start().len();
            col += colon + 1 + lead;
            rest = after.trim();
            if rest.is_empty() {
                return Ok(());
            }
        }
        if self.current.is_none() {
            return Err(err(line, col, AsmErrorKind::OutsideThread));
        }
        let (mnemonic, operand_text, operand_col) = match rest.find(char::is_whitespace) {
            Some(pos) => {
                let after = &rest[pos..];
                let lead = after.len() - after.trim_start().len();
                (&rest[..pos], after.trim_start(), col + pos + lead)
            }
            None => (rest, "", col + rest.len()),
        };
        let ops = split_operands(operand_text, operand_col);
        let mnemonic_tok = Tok {
            text: mnemonic,
            col,
        };
        self.instruction(line, mnemonic_tok, &ops)
    }

    fn directive(&mut self, line: usize, col: usize, text: &str) -> Result<(), AsmError> {
        let words = split_words(text, col);
        let head = words[0];
        match head.text {
            ".data" => {
                if words.len() < 2 {
                    return Err(err(line, col, AsmErrorKind::BadDirective(".data needs an address".into())));
                }
                let mut vals = Vec::new();
                for w in &words[1..] {
                    let v = parse_word(w.text)
                        .ok_or_else(|| err(line, w.col, AsmErrorKind::BadOperand(w.text.to_string())))?;
                    vals.push(v);
                }
                self.data.push(DataSegment {
                    addr: vals[0],
                    words: vals[1..].to_vec(),
                });
                Ok(())
            }
            ".entry" => {
                let [_, name] = words[..] else {
                    return Err(err(line, col, AsmErrorKind::BadDirective(".entry takes one thread name".into())));
                };
                self.entry = Some((name.text.to_string(), line, name.col));
                Ok(())
            }
            ".thread" => {
                self.close_thread()?;
                let Some(name) = words.get(1) else {
                    return Err(err(line, col, AsmErrorKind::BadDirective(".thread needs a name".into())));
                };
                if !is_ident(name.text) {
                    return Err(err(line, name.col, AsmErrorKind::BadDirective(format!("bad thread name `{}`", name.text))));
                }
                if self.threads.iter().any(|t| t.name == name.text) {
                    return Err(err(line, name.col, AsmErrorKind::DuplicateThread(name.text.to_string())));
                }
                let mut counts = ClassCounts::default();
                for w in &words[2..] {
                    let bad = || err(line, w.col, AsmErrorKind::BadDirective(format!("expected g=/s=/l=/d=, found `{}`", w.text)));
                    let (k, v) = w.text.split_once('=').ok_or_else(bad)?;
                    let v: u32 = v.parse().map_err(|_| bad())?;
                    match k {
                        "g" => counts.globals = v,
                        "s" => counts.shareds = v,
                        "l" => counts.locals = v,
                        "d" => counts.dependents = v,
                        _ => return Err(bad()),
                    }
                }
                if counts.shareds != counts.dependents {
                    return Err(err(
                        line,
                        name.col,
                        AsmErrorKind::ChannelMismatch(name.text.to_string(), counts.shareds, counts.dependents),
                    ));
                }
                self.current = Some(ThreadBuilder {
                    def: ThreadDef {
                        name: name.text.to_string(),
                        counts,
                        body: Vec::new(),
                    },
                    labels: HashMap::new(),
                    branch_fixups: Vec::new(),
                    pending_labels: Vec::new(),
                    line,
                });
                Ok(())
            }
            other => Err(err(line, col, AsmErrorKind::BadDirective(format!("unknown directive `{other}`")))),
        }
    }

    fn close_thread(&mut self) -> Result<(), AsmError> {
        let Some(mut t) = self.current.take() else {
            return Ok(());
        };
        if let Some((name, line, col)) = t.pending_labels.first() {
            return Err(err(*line, *col, AsmErrorKind::DanglingLabel(name.clone())));
        }
        if t.def.body.last() != Some(&Instruction::End) {
            return Err(err(t.line, 1, AsmErrorKind::MissingEnd(t.def.name.clone())));
        }
        for fix in &t.branch_fixups {
            let Some(&target) = t.labels.get(&fix.name) else {
                return Err(err(fix.line, fix.col, AsmErrorKind::UndefinedLabel(fix.name.clone())));
            };
            match &mut t.def.body[fix.instr] {
                Instruction::Jump { target: tg } | Instruction::Branch { target: tg, .. } => *tg = target,
                _ => unreachable!("branch fixup on a non-branch"),
            }
        }
        self.threads.push(t.def);
        Ok(())
    }

    fn finish(mut self) -> Result<Program, AsmError> {
        self.close_thread()?;
        if self.threads.is_empty() {
            return Err(err(1, 1, AsmErrorKind::NoThreads));
        }
        let index: HashMap<String, usize> = self
            .threads
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        for (thread, fix) in &self.thread_fixups {
            let Some(&target) = index.get(&fix.name) else {
                return Err(err(fix.line, fix.col, AsmErrorKind::UnknownThread(fix.name.clone())));
            };
            match &mut self.threads[*thread].body[fix.instr] {
                Instruction::Create { thread: t, .. } | Instruction::Detach { thread: t, .. } => *t = target,
                _ => unreachable!("thread fixup on a non-create"),
            }
        }
        let entry = match &self.entry {
            Some((name, line, col)) => *index
                .get(name)
                .ok_or_else(|| err(*line, *col, AsmErrorKind::UnknownThread(name.clone())))?,
            None => index.get("main").copied().unwrap_or(0),
        };
        Ok(Program {
            threads: self.threads,
            entry,
            data: self.data,
        })
    }

    fn instruction(&mut self, line: usize, mnemonic: Tok<'_>, ops: &[Tok<'_>]) -> Result<(), AsmError> {
        let thread_idx = self.threads.len();
        let t = self.current.as_mut().expect("checked by caller");
        let counts = t.def.counts;
        let ctx = OperandCtx { line, counts };
        let upper = mnemonic.text.to_ascii_uppercase();
        let count = |n: usize| -> Result<(), AsmError> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(err(line, mnemonic.col, AsmErrorKind::OperandCount {
                    mnemonic: upper.clone(),
                    expected: n.to_string(),
                    found: ops.len(),
                }))
            }
        };
        let count_range = |lo: usize, hi: usize| -> Result<(), AsmError> {
            if (lo..=hi).contains(&ops.len()) {
                Ok(())
            } else {
                Err(err(line, mnemonic.col, AsmErrorKind::OperandCount {
                    mnemonic: upper.clone(),
                    expected: format!("{lo} to {hi}"),
                    found: ops.len(),
                }))
            }
        };
        let alu = |op| -> Option<AluOp> { Some(op) };
        let alu_op = match upper.as_str() {
            "ADD" => alu(AluOp::Add),
            "SUB" => alu(AluOp::Sub),
            "MUL" => alu(AluOp::Mul),
            "DIV" => alu(AluOp::Div),
            "REM" => alu(AluOp::Rem),
            "AND" => alu(AluOp::And),
            "OR" => alu(AluOp::Or),
            "XOR" => alu(AluOp::Xor),
            "SHL" => alu(AluOp::Shl),
            "SHR" => alu(AluOp::Shr),
            "CMP" => alu(AluOp::Cmp),
            "SLT" => alu(AluOp::Slt),
            _ => None,
        };
        let mut branch_label: Option<Tok<'_>> = None;
        let mut thread_name: Option<Tok<'_>> = None;
        let instr = if let Some(op) = alu_op {
            count(3)?;
            Instruction::Alu {
                op,
                dst: ctx.dst(ops[0])?,
                a: ctx.src(ops[1])?,
                b: ctx.src(ops[2])?,
            }
        } else {
            match upper.as_str() {
                "MOV" => {
                    count(2)?;
                    Instruction::Mov {
                        dst: ctx.dst(ops[0])?,
                        src: ctx.src(ops[1])?,
                    }
                }
                "FADD" | "FMUL" => {
                    count(3)?;
                    Instruction::Fpu {
                        op: if upper == "FADD" { FpuOp::Add } else { FpuOp::Mul },
                        dst: ctx.dst(ops[0])?,
                        a: ctx.src(ops[1])?,
                        b: ctx.src(ops[2])?,
                    }
                }
                "BR" => {
                    count(1)?;
                    branch_label = Some(ctx.label(ops[0])?);
                    Instruction::Jump { target: UNRESOLVED }
                }
                "BEQ" | "BNE" | "BLT" | "BGE" => {
                    count(3)?;
                    let cond = match upper.as_str() {
                        "BEQ" => Cond::Eq,
                        "BNE" => Cond::Ne,
                        "BLT" => Cond::Lt,
                        _ => Cond::Ge,
                    };
                    branch_label = Some(ctx.label(ops[2])?);
                    Instruction::Branch {
                        cond,
                        a: ctx.src(ops[0])?,
                        b: ctx.src(ops[1])?,
                        target: UNRESOLVED,
                    }
                }
                "LD" => {
                    count_range(2, 3)?;
                    Instruction::Ld {
                        dst: ctx.dst(ops[0])?,
                        base: ctx.src(ops[1])?,
                        offset: match ops.get(2) {
                            Some(o) => ctx.src(*o)?,
                            None => Operand::Imm(0),
                        },
                    }
                }
                "ST" => {
                    count_range(2, 3)?;
                    Instruction::St {
                        src: ctx.src(ops[0])?,
                        base: ctx.src(ops[1])?,
                        offset: match ops.get(2) {
                            Some(o) => ctx.src(*o)?,
                            None => Operand::Imm(0),
                        },
                    }
                }
                "GETIDX" => {
                    count(1)?;
                    Instruction::GetIdx { dst: ctx.dst(ops[0])? }
                }
                "ALLOCATE" => {
                    count_range(2, 5)?;
                    let mut mode = AllocMode::Normal;
                    let mut strategy = AllocStrategy::Normal;
                    let mut forceseq = false;
                    for o in &ops[2..] {
                        match o.text.to_ascii_lowercase().as_str() {
                            "mode=normal" => mode = AllocMode::Normal,
                            "suspend" | "mode=suspend" => mode = AllocMode::Suspend,
                            "exclusive" | "mode=exclusive" => mode = AllocMode::Exclusive,
                            "strategy=normal" => strategy = AllocStrategy::Normal,
                            "exact" | "strategy=exact" => strategy = AllocStrategy::Exact,
                            "single" | "strategy=single" => strategy = AllocStrategy::Single,
                            "balanced" | "strategy=balanced" => strategy = AllocStrategy::Balanced,
                            "forceseq" => forceseq = true,
                            _ => return Err(err(line, o.col, AsmErrorKind::BadOperand(o.text.to_string()))),
                        }
                    }
                    Instruction::Allocate {
                        dst: ctx.dst(ops[0])?,
                        place: ctx.src(ops[1])?,
                        mode,
                        strategy,
                        forceseq,
                    }
                }
                "SETSTART" | "SETLIMIT" | "SETSTOP" | "SETSTEP" | "SETBLOCK" => {
                    count(2)?;
                    let param = match upper.as_str() {
                        "SETSTART" => FamilyParam::Start,
                        "SETLIMIT" | "SETSTOP" => FamilyParam::Limit,
                        "SETSTEP" => FamilyParam::Step,
                        _ => FamilyParam::Block,
                    };
                    Instruction::SetParam {
                        param,
                        fid: ctx.src(ops[0])?,
                        value: ctx.src(ops[1])?,
                    }
                }
                "CREI" | "DETACH" => {
                    count(2)?;
                    let fid = ctx.src(ops[0])?;
                    thread_name = Some(ctx.label(ops[1])?);
                    if upper == "CREI" {
                        Instruction::Create { fid, thread: UNRESOLVED }
                    } else {
                        Instruction::Detach { fid, thread: UNRESOLVED }
                    }
                }
                "SYNC" => {
                    count(1)?;
                    Instruction::Sync { fid: ctx.src(ops[0])? }
                }
                "RELEASE" => {
                    count(1)?;
                    Instruction::Release { fid: ctx.src(ops[0])? }
                }
                "PUTG" => {
                    count(3)?;
                    Instruction::PutG {
                        fid: ctx.src(ops[0])?,
                        slot: ctx.slot(ops[1])?,
                        value: ctx.src(ops[2])?,
                    }
                }
                "PUTS" => {
                    count_range(2, 3)?;
                    let (slot, value) = if ops.len() == 3 {
                        (ctx.slot(ops[1])?, ctx.src(ops[2])?)
                    } else {
                        (0, ctx.src(ops[1])?)
                    };
                    Instruction::PutS {
                        fid: ctx.src(ops[0])?,
                        slot,
                        value,
                    }
                }
                "GETS" => {
                    count_range(2, 3)?;
                    Instruction::GetS {
                        dst: ctx.dst(ops[0])?,
                        fid: ctx.src(ops[1])?,
                        slot: match ops.get(2) {
                            Some(o) => ctx.slot(*o)?,
                            None => 0,
                        },
                    }
                }
                "BREAK" => {
                    count(0)?;
                    Instruction::Break
                }
                "SEPALLOC" => {
                    count(3)?;
                    let p = ops[2];
                    let policy = match p.text.to_ascii_lowercase().as_str() {
                        "min" | "minimum" => SepPolicy::Minimum,
                        "max" | "maximum" => SepPolicy::Maximum,
                        "exact" => SepPolicy::Exact,
                        "any" | "anysize" => SepPolicy::AnySize,
                        _ => return Err(err(line, p.col, AsmErrorKind::BadOperand(p.text.to_string()))),
                    };
                    Instruction::SepAlloc {
                        dst: ctx.dst(ops[0])?,
                        count: ctx.src(ops[1])?,
                        policy,
                    }
                }
                "SEPFREE" => {
                    count(1)?;
                    Instruction::SepFree { place: ctx.src(ops[0])? }
                }
                "PRINT" => {
                    count(1)?;
                    Instruction::Print { value: ctx.src(ops[0])? }
                }
                "NOP" => {
                    count(0)?;
                    Instruction::Nop
                }
                "END" => {
                    count(0)?;
                    Instruction::End
                }
                _ => {
                    return Err(err(
                        line,
                        mnemonic.col,
                        AsmErrorKind::UnknownOpcode(mnemonic.text.to_string()),
                    ))
                }
            }
        };
        let at = t.def.body.len();
        for (name, ..) in t.pending_labels.drain(..) {
            t.labels.insert(name, at);
        }
        if let Some(l) = branch_label {
            t.branch_fixups.push(Fixup {
                instr: at,
                name: l.text.to_string(),
                line,
                col: l.col,
            });
        }
        if let Some(n) = thread_name {
            self.thread_fixups.push((
                thread_idx,
                Fixup {
                    instr: at,
                    name: n.text.to_string(),
                    line,
                    col: n.col,
                },
            ));
        }
        t.def.body.push(instr);
        Ok(())
    }
}

struct OperandCtx {
    line: usize,
    counts: ClassCounts,
}

impl OperandCtx {
    fn bad(&self, tok: Tok<'_>) -> AsmError {
        err(self.line, tok.col, AsmErrorKind::BadOperand(tok.text.to_string()))
    }

    fn reg(&self, tok: Tok<'_>) -> Result<Option<Reg>, AsmError> {
        let text = tok.text;
        let mut chars = text.chars();
        let class = match chars.next().map(|c| c.to_ascii_lowercase()) {
            Some('g') => RegClass::Global,
            Some('s') => RegClass::Shared,
            Some('l') => RegClass::Local,
            Some('d') => RegClass::Dependent,
            _ => return Ok(None),
        };
        let digits = chars.as_str();
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
            return Ok(None);
        }
        let index: u16 = digits.parse().map_err(|_| self.bad(tok))?;
        let declared = class.declared(&self.counts);
        if u32::from(index) >= declared {
            let class_name = match class {
                RegClass::Global => "global",
                RegClass::Shared => "shared",
                RegClass::Local => "local",
                RegClass::Dependent => "dependent",
            };
            return Err(err(
                self.line,
                tok.col,
                AsmErrorKind::RegisterOutOfRange {
                    reg: text.to_string(),
                    declared,
                    class: class_name,
                },
            ));
        }
        Ok(Some(Reg::new(class, index)))
    }

    fn src(&self, tok: Tok<'_>) -> Result<Operand, AsmError> {
        if tok.text.starts_with('#') {
            return parse_immediate(tok.text)
                .map(Operand::Imm)
                .ok_or_else(|| self.bad(tok));
        }
        match self.reg(tok)? {
            Some(r) => Ok(Operand::Reg(r)),
            None => Err(self.bad(tok)),
        }
    }

    fn dst(&self, tok: Tok<'_>) -> Result<Reg, AsmError> {
        let Some(r) = self.reg(tok)? else {
            return Err(self.bad(tok));
        };
        if !r.class.is_writable() {
            let what = if r.class == RegClass::Global { "globals" } else { "dependents" };
            return Err(err(
                self.line,
                tok.col,
                AsmErrorKind::RegisterClass {
                    reg: tok.text.to_string(),
                    reason: format!("is not writable ({what} are read-only)"),
                },
            ));
        }
        Ok(r)
    }

    fn slot(&self, tok: Tok<'_>) -> Result<u16, AsmError> {
        let v = parse_immediate(tok.text).ok_or_else(|| self.bad(tok))?;
        u16::try_from(v).map_err(|_| self.bad(tok))
    }

    fn label<'a>(&self, tok: Tok<'a>) -> Result<Tok<'a>, AsmError> {
        if is_ident(tok.text) {
            Ok(tok)
        } else {
            Err(self.bad(tok))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(src: &str) -> AsmErrorKind {
        assemble(src).unwrap_err().kind
    }

    #[test]
    fn minimal_thread() {
        let p = assemble(".thread main\nEND\n").unwrap();
        assert_eq!(p.threads.len(), 1);
        assert_eq!(p.threads[0].body, vec![Instruction::End]);
        let p = assemble(".thread main\nmain: END\n").unwrap();
        assert_eq!(p.threads[0].body, vec![Instruction::End]);
    }

    #[test]
    fn immediates_and_comments() {
        let p = assemble(
            ".thread main l=1 # header\n  ADD l0, l0, #-3 # trailing\n  MOV l0, #0x10\n  MOV l0, #1.5\nEND",
        )
        .unwrap();
        let body = &p.threads[0].body;
        assert!(matches!(body[0], Instruction::Alu { b: Operand::Imm(-3), .. }));
        assert!(matches!(body[1], Instruction::Mov { src: Operand::Imm(16), .. }));
        assert_eq!(
            body[2],
            Instruction::Mov {
                dst: Reg::new(RegClass::Local, 0),
                src: Operand::Imm(1.5f64.to_bits() as i64)
            }
        );
    }

    #[test]
    fn writes_to_read_only_classes_rejected() {
        assert!(matches!(
            kind(".thread t g=1 l=1\nMOV g0, #1\nEND"),
            AsmErrorKind::RegisterClass { .. }
        ));
        assert!(matches!(
            kind(".thread t s=1 d=1\nADD d0, s0, #1\nEND"),
            AsmErrorKind::RegisterClass { .. }
        ));
        assert!(matches!(
            kind(".thread t g=1 l=1\nGETS g0, l0\nEND"),
            AsmErrorKind::RegisterClass { .. }
        ));
    }

    #[test]
    fn undeclared_register() {
        assert!(matches!(
            kind(".thread t l=1\nMOV l1, #1\nEND"),
            AsmErrorKind::RegisterOutOfRange { .. }
        ));
    }

    #[test]
    fn unknown_opcode_has_position() {
        let e = assemble(".thread t\n   FROB\nEND").unwrap_err();
        assert_eq!((e.line, e.col), (2, 4));
        assert_eq!(e.kind, AsmErrorKind::UnknownOpcode("FROB".into()));
    }

    #[test]
    fn undefined_label_has_position() {
        let e = assemble(".thread t l=1\n  BNE l0, #1, nowhere\nEND").unwrap_err();
        assert_eq!((e.line, e.col), (2, 15));
        assert_eq!(e.kind, AsmErrorKind::UndefinedLabel("nowhere".into()));
    }

    #[test]
    fn labels_resolve_forward_and_back() {
        let p = assemble(".thread t l=1\ntop: ADD l0, l0, #1\n BLT l0, #3, top\n BR out\n NOP\nout:\n END").unwrap();
        let body = &p.threads[0].body;
        assert_eq!(body[1].branch_target(), Some(0));
        assert_eq!(body[2].branch_target(), Some(4));
    }

    #[test]
    fn create_targets_resolve() {
        let p = assemble(".thread main l=1\n ALLOCATE l0, #0\n CREI l0, child\n SYNC l0\n END\n.thread child\n END").unwrap();
        assert_eq!(p.entry, 0);
        assert!(matches!(p.threads[0].body[1], Instruction::Create { thread: 1, .. }));
        assert_eq!(
            kind(".thread main l=1\n CREI l0, ghost\n END"),
            AsmErrorKind::UnknownThread("ghost".into())
        );
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(kind(".thread t\nNOP"), AsmErrorKind::MissingEnd(_)));
        assert!(matches!(kind("END"), AsmErrorKind::OutsideThread));
        assert!(matches!(kind(""), AsmErrorKind::NoThreads));
        assert!(matches!(kind(".thread t s=1\nEND"), AsmErrorKind::ChannelMismatch(..)));
        assert!(matches!(kind(".thread t\nEND\n.thread t\nEND"), AsmErrorKind::DuplicateThread(_)));
        assert!(matches!(kind(".thread t\nEND\n.entry x"), AsmErrorKind::UnknownThread(_)));
        assert!(matches!(kind(".thread t\nADD\nEND"), AsmErrorKind::OperandCount { .. }));
    }

    #[test]
    fn allocate_options() {
        let p = assemble(".thread t l=1\n ALLOCATE l0, #1, suspend, exact, forceseq\n ALLOCATE l0, #3, exclusive\n END").unwrap();
        assert_eq!(
            p.threads[0].body[0],
            Instruction::Allocate {
                dst: Reg::new(RegClass::Local, 0),
                place: Operand::Imm(1),
                mode: AllocMode::Suspend,
                strategy: AllocStrategy::Exact,
                forceseq: true
            }
        );
        assert!(matches!(
            p.threads[0].body[1],
            Instruction::Allocate { mode: AllocMode::Exclusive, .. }
        ));
    }

    #[test]
    fn setstop_is_setlimit() {
        let p = assemble(".thread t l=1\n SETSTOP l0, #4\n END").unwrap();
        assert!(matches!(
            p.threads[0].body[0],
            Instruction::SetParam { param: FamilyParam::Limit, .. }
        ));
    }

    #[test]
    fn data_segments() {
        let p = assemble(".data 100 1 2 -3\n.data 0x200 7\n.thread t\nEND").unwrap();
        assert_eq!(p.initial_memory(), vec![(100, 1), (101, 2), (102, -3), (0x200, 7)]);
    }
}
