//! Per-core issue stage and instruction semantics.

use crate::isa::{AluOp, AllocStrategy, FamilyParam, FpuOp, Instruction, Operand, Reg, RegClass};
use crate::kernel::WaitCause;
use crate::machine::{
    FamStatus, FamilyRecord, Frame, Machine, MemOpKind, PendingOp, SeqState, ThreadState,
};
use crate::network::{AllocSweep, Direction, Payload, RegTarget, SepOp, SweepPhase};
use crate::place::{decode_place, CoreBlock, PlaceSpec};
use crate::sync::{ReadOutcome, RegisterWindow, SyncCell, ThreadRef};
use crate::trace::TraceKind;
use crate::{CoreId, Fid, Word};

/// Outcome of trying to issue from one thread.
enum Flow {
    Issued,
    /// The thread suspended without issuing; try another.
    Blocked,
    /// The machine stopped.
    Stop,
}

fn cell_of(win: &RegisterWindow, reg: Reg) -> Option<u32> {
    let range = match reg.class {
        RegClass::Global => win.globals,
        RegClass::Shared => win.shareds,
        RegClass::Local => win.locals,
        RegClass::Dependent => win.dependents,
    };
    range.cell(reg.index as u32)
}

fn alu(op: AluOp, a: Word, b: Word) -> Option<Word> {
    Some(match op {
        AluOp::Add => a.wrapping_add(b),
        AluOp::Sub => a.wrapping_sub(b),
        AluOp::Mul => a.wrapping_mul(b),
        AluOp::Div => a.checked_div(b).or_else(|| (b != 0).then(|| a.wrapping_div(b)))?,
        AluOp::Rem => a.checked_rem(b).or_else(|| (b != 0).then(|| a.wrapping_rem(b)))?,
        AluOp::And => a & b,
        AluOp::Or => a | b,
        AluOp::Xor => a ^ b,
        AluOp::Shl => a.wrapping_shl(b as u32),
        AluOp::Shr => a.wrapping_shr(b as u32),
        AluOp::Cmp => a.cmp(&b) as Word,
        AluOp::Slt => Word::from(a < b),
    })
}

fn fpu(op: FpuOp, a: Word, b: Word) -> Word {
    let (x, y) = (f64::from_bits(a as u64), f64::from_bits(b as u64));
    let r = match op {
        FpuOp::Add => x + y,
        FpuOp::Mul => x * y,
    };
    r.to_bits() as Word
}

impl Machine<'_> {
    pub(crate) fn step_core(&mut self, c: CoreId) {
        self.step_creation(c);
        if self.termination.is_some() {
            return;
        }
        self.step_issue(c);
        let core = &mut self.cores[c];
        if core.active.is_none() {
            if let Some(s) = core.ready.pop_front() {
                core.active = Some(s);
                core.threads[s].as_mut().unwrap().state = ThreadState::Active;
            }
        }
    }

    fn step_issue(&mut self, c: CoreId) {
        let quantum = self.cfg.fairness_quantum;
        let fill = self.cfg.pipeline_fill_cycles;
        let core = &mut self.cores[c];
        if core.fill_left > 0 {
            core.fill_left -= 1;
            return;
        }
        if let Some(r) = core.running {
            let others = core.active.is_some() || !core.ready.is_empty();
            if quantum > 0 && core.run_issued >= quantum && others {
                core.threads[r].as_mut().unwrap().state = ThreadState::Ready;
                core.ready.push_back(r);
                core.running = None;
            }
        }
        let mut attempts = 0;
        loop {
            let core = &mut self.cores[c];
            let slot = match core.running {
                Some(s) => s,
                None => match core.active.take().or_else(|| core.ready.pop_front()) {
                    Some(s) => s,
                    None => {
                        core.warm = false;
                        return;
                    }
                },
            };
            core.running = Some(slot);
            let t = core.threads[slot].as_mut().unwrap();
            t.state = ThreadState::Running;
            let tid = t.tid;
            if core.last_tid != Some(tid) {
                let from = core.last_tid.map_or_else(|| "-".to_string(), |t| t.to_string());
                core.last_tid = Some(tid);
                core.run_issued = 0;
                let r = self.rec(c, TraceKind::Switch).with("from", from).with("to", tid);
                self.emit(r);
            }
            let core = &mut self.cores[c];
            if !core.warm {
                core.warm = true;
                let r = self.rec(c, TraceKind::Fill).with("len", fill);
                self.emit(r);
                if fill > 0 {
                    self.cores[c].fill_left = fill - 1;
                    return;
                }
            }
            match self.execute(c, slot) {
                Flow::Issued => {
                    self.cores[c].run_issued += 1;
                    return;
                }
                Flow::Stop => return,
                Flow::Blocked => {
                    attempts += 1;
                    if attempts > self.cores[c].threads.len() {
                        return;
                    }
                }
            }
        }
    }

    fn tref(&self, c: CoreId, slot: usize) -> ThreadRef {
        ThreadRef {
            core: c,
            slot: slot as u16,
            tid: self.cores[c].threads[slot].as_ref().unwrap().tid,
        }
    }

    fn suspend(&mut self, c: CoreId, slot: usize, cause: WaitCause) -> Flow {
        let core = &mut self.cores[c];
        let t = core.threads[slot].as_mut().unwrap();
        t.state = ThreadState::Suspended;
        t.cause = Some(cause);
        let tid = t.tid;
        if core.running == Some(slot) {
            core.running = None;
        }
        let r = self.rec(c, TraceKind::Suspend).with("tid", tid).with("cause", cause);
        self.emit(r);
        Flow::Blocked
    }

    fn stop(&mut self, c: CoreId, msg: impl Into<String>) -> Flow {
        self.fault(c, msg);
        Flow::Stop
    }

    fn read(&mut self, c: CoreId, slot: usize, win: &RegisterWindow, op: Operand) -> Result<Word, Flow> {
        let reg = match op {
            Operand::Imm(v) => return Ok(v),
            Operand::Reg(r) => r,
        };
        let Some(cell) = cell_of(win, reg) else {
            return Err(self.stop(c, format!("register {reg} outside the thread's window")));
        };
        let who = self.tref(c, slot);
        match self.cores[c].regs.read_cell(cell, who) {
            Ok(ReadOutcome::Value(v)) => Ok(v),
            Ok(ReadOutcome::Suspended) => Err(self.suspend(c, slot, WaitCause::Register(cell))),
            Err(e) => Err(self.stop(c, e.to_string())),
        }
    }

    fn dest(&mut self, c: CoreId, win: &RegisterWindow, reg: Reg) -> Result<u32, Flow> {
        match cell_of(win, reg) {
            Some(cell) => Ok(cell),
            None => Err(self.stop(c, format!("register {reg} outside the thread's window"))),
        }
    }

    fn family(&mut self, c: CoreId, fid: Word) -> Result<Fid, Flow> {
        match Fid::try_from(fid).ok().filter(|f| self.families.contains_key(f)) {
            Some(f) => Ok(f),
            None => Err(self.stop(c, format!("{fid} is not a family handle"))),
        }
    }

    fn issue_rec(&mut self, c: CoreId, tid: u64, pc: usize, ins: &Instruction) {
        let r = self
            .rec(c, TraceKind::Issue)
            .with("tid", tid)
            .with("pc", pc)
            .with("op", ins.mnemonic());
        self.emit(r);
    }

    fn set_pc(&mut self, c: CoreId, slot: usize, pc: usize) {
        let t = self.cores[c].threads[slot].as_mut().unwrap();
        match t.frames.last_mut() {
            Some(f) => f.pc = pc,
            None => t.pc = pc,
        }
    }

    fn execute(&mut self, c: CoreId, slot: usize) -> Flow {
        let program = self.program;
        let t = self.cores[c].threads[slot].as_ref().unwrap();
        let (def, pc, win, tid, fid) = match t.frames.last() {
            Some(f) => (f.def, f.pc, f.window, t.tid, f.fid),
            None => (t.def, t.pc, t.window, t.tid, t.fid),
        };
        let Some(ins) = program.threads[def].body.get(pc) else {
            return self.stop(c, format!("thread {} ran past its last instruction", program.threads[def].name));
        };
        if let Some(inline) = t.pending_inline {
            if !matches!(ins, Instruction::PutG { .. } | Instruction::PutS { .. }) {
                return self.start_inline(c, slot, inline);
            }
        }
        macro_rules! get {
            ($op:expr) => {
                match self.read(c, slot, &win, $op) {
                    Ok(v) => v,
                    Err(f) => return f,
                }
            };
        }
        macro_rules! dst {
            ($reg:expr) => {
                match self.dest(c, &win, $reg) {
                    Ok(v) => v,
                    Err(f) => return f,
                }
            };
        }
        macro_rules! fam {
            ($op:expr) => {{
                let v = get!($op);
                match self.family(c, v) {
                    Ok(f) => f,
                    Err(fl) => return fl,
                }
            }};
        }
        let mut next = pc + 1;
        match ins {
            Instruction::Alu { op, dst, a, b } => {
                let (a, b) = (get!(*a), get!(*b));
                let d = dst!(*dst);
                let Some(v) = alu(*op, a, b) else {
                    return self.stop(c, "division by zero");
                };
                self.issue_rec(c, tid, pc, ins);
                self.write_reg(c, d, v);
            }
            Instruction::Mov { dst, src } => {
                let v = get!(*src);
                let d = dst!(*dst);
                self.issue_rec(c, tid, pc, ins);
                self.write_reg(c, d, v);
            }
            Instruction::Fpu { op, dst, a, b } => {
                let (a, b) = (get!(*a), get!(*b));
                let d = dst!(*dst);
                self.issue_rec(c, tid, pc, ins);
                let due = self.fpu.issue(c, self.now);
                self.cores[c].regs.cell_mut(d).unwrap().clear();
                self.mem_op(c, slot, MemOpKind::Fpu, 0, fpu(*op, a, b), Some(d), due, "fpu");
            }
            Instruction::Jump { target } => {
                self.issue_rec(c, tid, pc, ins);
                next = *target;
            }
            Instruction::Branch { cond, a, b, target } => {
                let (a, b) = (get!(*a), get!(*b));
                self.issue_rec(c, tid, pc, ins);
                if cond.holds(a, b) {
                    next = *target;
                }
            }
            Instruction::Ld { dst, base, offset } => {
                let addr = get!(*base).wrapping_add(get!(*offset));
                let d = dst!(*dst);
                self.issue_rec(c, tid, pc, ins);
                let (class, lat) = self.memory.latency_class(c, addr);
                self.cores[c].regs.cell_mut(d).unwrap().clear();
                self.mem_op(c, slot, MemOpKind::Load, addr, 0, Some(d), self.now + lat, class.name());
            }
            Instruction::St { src, base, offset } => {
                let v = get!(*src);
                let addr = get!(*base).wrapping_add(get!(*offset));
                self.issue_rec(c, tid, pc, ins);
                let (class, lat) = self.memory.latency_class(c, addr);
                self.mem_op(c, slot, MemOpKind::Store, addr, v, None, self.now + lat, class.name());
            }
            Instruction::GetIdx { dst } => {
                let d = dst!(*dst);
                let t = self.cores[c].threads[slot].as_ref().unwrap();
                let idx = match t.frames.last() {
                    Some(f) => f.start.wrapping_add((f.ordinal as Word).wrapping_mul(f.step)),
                    None => t.index,
                };
                self.issue_rec(c, tid, pc, ins);
                self.write_reg(c, d, idx);
            }
            Instruction::Allocate {
                dst,
                place,
                mode,
                strategy,
                forceseq,
            } => {
                let p = get!(*place);
                let d = dst!(*dst);
                let default = self.families.get(&fid).map_or(CoreBlock::new(0, self.cfg.num_cores), |r| r.default_place);
                let mut block = match u64::try_from(p).map_err(|_| ()).and_then(|p| decode_place(p, &self.cfg).map_err(|_| ())) {
                    Ok(PlaceSpec::Local) => CoreBlock::new(c, 1),
                    Ok(PlaceSpec::Default) => default,
                    Ok(PlaceSpec::Explicit(b)) => b,
                    Err(()) => return self.stop(c, format!("{p} is not a valid place")),
                };
                if *strategy == AllocStrategy::Single {
                    block = CoreBlock::new(block.start, 1);
                }
                self.issue_rec(c, tid, pc, ins);
                let new = self.next_fid;
                self.next_fid += 1;
                self.families.insert(
                    new,
                    FamilyRecord {
                        place: block,
                        default_place: if *forceseq { default } else { block },
                        params: Default::default(),
                        status: if *forceseq { FamStatus::Allocated } else { FamStatus::Allocating },
                        sequential: *forceseq,
                        detached: false,
                        root: false,
                        thread: None,
                        completion: SyncCell::empty(),
                        ack: SyncCell::empty(),
                        alloc_dst: Some((c, d)),
                        seq: SeqState::default(),
                    },
                );
                if *forceseq {
                    let r = self.rec(c, TraceKind::FSeq).with("fid", new).with("tid", tid);
                    self.emit(r);
                    self.write_reg(c, d, new as Word);
                } else {
                    self.cores[c].regs.cell_mut(d).unwrap().clear();
                    let r = self
                        .rec(c, TraceKind::FAlloc)
                        .with("fid", new)
                        .with("tid", tid)
                        .with("place", block)
                        .with("mode", format!("{mode:?}").to_lowercase())
                        .with("strategy", format!("{strategy:?}").to_lowercase());
                    self.emit(r);
                    let sweep = AllocSweep {
                        fid: new,
                        parent_core: c,
                        mode: *mode,
                        place: block,
                        strategy: *strategy,
                        phase: SweepPhase::Forward,
                        loads: Vec::new(),
                        chosen: None,
                        failed: false,
                    };
                    self.send_delegation(c, block.start, new, Payload::AllocReq(Box::new(sweep)));
                }
            }
            Instruction::SetParam { param, fid: f, value } => {
                let f = fam!(*f);
                let v = get!(*value);
                if *param == FamilyParam::Step && v == 0 {
                    return self.stop(c, format!("family {f} given step 0"));
                }
                let rec = self.families.get_mut(&f).unwrap();
                if rec.status != FamStatus::Allocated {
                    return self.stop(c, format!("family {f} configured outside the allocated state"));
                }
                rec.params.set(*param, v);
                let (seq, start) = (rec.sequential, rec.place.start);
                self.issue_rec(c, tid, pc, ins);
                if !seq {
                    self.send_delegation(c, start, f, Payload::Configure { param: *param, value: v });
                }
            }
            Instruction::Create { fid: f, thread } | Instruction::Detach { fid: f, thread } => {
                let detach = matches!(ins, Instruction::Detach { .. });
                let f = fam!(*f);
                let rec = &self.families[&f];
                if rec.status != FamStatus::Allocated {
                    return self.stop(c, format!("create on family {f} which is not freshly allocated"));
                }
                if rec.sequential {
                    if detach {
                        return self.stop(c, format!("sequential family {f} cannot be detached"));
                    }
                    self.issue_rec(c, tid, pc, ins);
                    let rec = self.families.get_mut(&f).unwrap();
                    rec.status = FamStatus::Created;
                    rec.thread = Some(*thread);
                    self.cores[c].threads[slot].as_mut().unwrap().pending_inline = Some(f);
                    let r = self
                        .rec(c, TraceKind::FCrei)
                        .with("fid", f)
                        .with("tid", tid)
                        .with("thread", &program.threads[*thread].name)
                        .with("seq", 1);
                    self.emit(r);
                } else {
                    if self.cores[c].threads[slot].as_ref().unwrap().pending_stores > 0 {
                        return self.suspend(c, slot, WaitCause::Stores);
                    }
                    self.issue_rec(c, tid, pc, ins);
                    let rec = self.families.get_mut(&f).unwrap();
                    rec.status = FamStatus::Created;
                    rec.thread = Some(*thread);
                    rec.detached = detach;
                    let place = rec.place;
                    let r = self
                        .rec(c, TraceKind::FCrei)
                        .with("fid", f)
                        .with("tid", tid)
                        .with("thread", &program.threads[*thread].name)
                        .with("place", place);
                    self.emit(r);
                    self.send_delegation(
                        c,
                        place.start,
                        f,
                        Payload::Create {
                            thread: *thread,
                            place,
                            parent_core: c,
                        },
                    );
                }
            }
            Instruction::Sync { fid: f } => {
                let f = fam!(*f);
                let who = self.tref(c, slot);
                let rec = self.families.get_mut(&f).unwrap();
                if rec.detached {
                    return self.stop(c, format!("sync on detached family {f}"));
                }
                if rec.status != FamStatus::Created {
                    return self.stop(c, format!("sync on family {f} which was not created"));
                }
                if let ReadOutcome::Suspended = rec.completion.read(who) {
                    return self.suspend(c, slot, WaitCause::Completion(f));
                }
                self.issue_rec(c, tid, pc, ins);
                let r = self.rec(c, TraceKind::FSync).with("fid", f).with("tid", tid);
                self.emit(r);
            }
            Instruction::Release { fid: f } => {
                let f = fam!(*f);
                let rec = self.families.get_mut(&f).unwrap();
                if !rec.completion.is_full() || rec.detached || rec.status == FamStatus::Released {
                    if rec.status == FamStatus::Failed {
                        return self.stop(c, format!("release of failed family {f}"));
                    }
                    return self.stop(c, format!("release of family {f} before it synchronized"));
                }
                rec.status = FamStatus::Released;
                let (seq, start) = (rec.sequential, rec.place.start);
                self.issue_rec(c, tid, pc, ins);
                let r = self.rec(c, TraceKind::FRelease).with("fid", f).with("tid", tid);
                self.emit(r);
                if !seq {
                    self.send_delegation(c, start, f, Payload::Release);
                }
            }
            Instruction::PutG { fid: f, slot: s, value } | Instruction::PutS { fid: f, slot: s, value } => {
                let global = matches!(ins, Instruction::PutG { .. });
                let f = fam!(*f);
                let v = get!(*value);
                let who = self.tref(c, slot);
                let rec = self.families.get_mut(&f).unwrap();
                if rec.sequential {
                    let map = if global { &mut rec.seq.globals } else { &mut rec.seq.shareds };
                    map.insert(*s, v);
                } else {
                    if rec.status != FamStatus::Created {
                        return self.stop(c, format!("register channel of family {f} used before create"));
                    }
                    if let ReadOutcome::Suspended = rec.ack.read(who) {
                        return self.suspend(c, slot, WaitCause::CreateAck(f));
                    }
                    let start = rec.place.start;
                    let target = if global { RegTarget::Global } else { RegTarget::Dependent };
                    self.send_delegation(
                        c,
                        start,
                        f,
                        Payload::RegWrite {
                            target,
                            slot: *s,
                            value: v,
                        },
                    );
                }
                self.issue_rec(c, tid, pc, ins);
            }
            Instruction::GetS { dst, fid: f, slot: s } => {
                let f = fam!(*f);
                let d = dst!(*dst);
                let who = self.tref(c, slot);
                let rec = self.families.get_mut(&f).unwrap();
                if rec.status != FamStatus::Created && rec.status != FamStatus::Released {
                    return self.stop(c, format!("shared read of family {f} which was not created"));
                }
                if let ReadOutcome::Suspended = rec.completion.read(who) {
                    return self.suspend(c, slot, WaitCause::Completion(f));
                }
                if rec.sequential {
                    let Some(v) = rec.seq.shareds.get(s).copied() else {
                        return self.stop(c, format!("final shared {s} of family {f} was never written"));
                    };
                    self.issue_rec(c, tid, pc, ins);
                    self.write_reg(c, d, v);
                } else {
                    let start = rec.place.start;
                    self.issue_rec(c, tid, pc, ins);
                    self.cores[c].regs.cell_mut(d).unwrap().clear();
                    self.send_delegation(
                        c,
                        start,
                        f,
                        Payload::RegRead {
                            slot: *s,
                            reply_core: c,
                            cell: d,
                        },
                    );
                }
            }
            Instruction::Break => {
                self.issue_rec(c, tid, pc, ins);
                let r = self.rec(c, TraceKind::FBreak).with("fid", fid).with("tid", tid);
                self.emit(r);
                let t = self.cores[c].threads[slot].as_ref().unwrap();
                if t.frames.is_empty() {
                    let fam_slot = t.fam_slot;
                    self.break_local(c, fam_slot, Direction::Loop);
                } else if let Some(rec) = self.families.get_mut(&fid) {
                    rec.seq.broken = true;
                }
            }
            Instruction::SepAlloc { dst, count, policy } => {
                let n = get!(*count);
                let d = dst!(*dst);
                self.issue_rec(c, tid, pc, ins);
                self.cores[c].regs.cell_mut(d).unwrap().clear();
                self.sep_call(c, slot, SepOp::Alloc { count: n, policy: *policy }, Some(d));
                self.set_pc(c, slot, next);
                self.suspend(c, slot, WaitCause::Sep);
                return Flow::Issued;
            }
            Instruction::SepFree { place } => {
                let p = get!(*place);
                self.issue_rec(c, tid, pc, ins);
                self.sep_call(c, slot, SepOp::Free { placeid: p }, None);
                self.set_pc(c, slot, next);
                self.suspend(c, slot, WaitCause::Sep);
                return Flow::Issued;
            }
            Instruction::Print { value } => {
                let v = get!(*value);
                self.issue_rec(c, tid, pc, ins);
                self.outputs.push(v);
                let r = self.rec(c, TraceKind::Print).with("tid", tid).with("value", v);
                self.emit(r);
            }
            Instruction::Nop => self.issue_rec(c, tid, pc, ins),
            Instruction::End => return self.end(c, slot, pc, ins),
        }
        if self.termination.is_some() {
            return Flow::Stop;
        }
        self.set_pc(c, slot, next);
        Flow::Issued
    }

    #[allow(clippy::too_many_arguments)]
    fn mem_op(
        &mut self,
        c: CoreId,
        slot: usize,
        kind: MemOpKind,
        addr: Word,
        value: Word,
        dst: Option<u32>,
        due: u64,
        class: &str,
    ) {
        let order = self.mem_order;
        self.mem_order += 1;
        let t = self.cores[c].threads[slot].as_mut().unwrap();
        let due = if kind == MemOpKind::Fpu { due } else { due.max(t.last_mem_done) };
        if kind != MemOpKind::Fpu {
            t.last_mem_done = due;
        }
        t.pending_ops += 1;
        if kind == MemOpKind::Store {
            t.pending_stores += 1;
        }
        let (tid, fid) = (t.tid, t.frames.last().map_or(t.fid, |f| f.fid));
        let op_name = match kind {
            MemOpKind::Load => "ld",
            MemOpKind::Store => "st",
            MemOpKind::Fpu => "fp",
        };
        let mut r = self
            .rec(c, TraceKind::MemIssue)
            .with("tid", tid)
            .with("fid", fid)
            .with("op", op_name)
            .with("addr", addr)
            .with("order", order)
            .with("class", class)
            .with("due", due);
        if kind == MemOpKind::Store {
            r = r.with("value", value);
        }
        self.emit(r);
        self.schedule_mem(
            due,
            PendingOp {
                core: c,
                slot,
                tid,
                fid,
                order,
                kind,
                addr,
                value,
                dst,
            },
        );
    }

    fn sep_call(&mut self, c: CoreId, slot: usize, op: SepOp, cell: Option<u32>) {
        let requester = self.tref(c, slot);
        let r = self.rec(c, TraceKind::SepReq).with("tid", requester.tid).with(
            "op",
            match op {
                SepOp::Alloc { .. } => "alloc",
                SepOp::Free { .. } => "free",
            },
        );
        self.emit(r);
        self.send_delegation(c, 0, 0, Payload::SepCall { op, requester, cell });
    }

    fn end(&mut self, c: CoreId, slot: usize, pc: usize, ins: &Instruction) -> Flow {
        let t = self.cores[c].threads[slot].as_ref().unwrap();
        let tid = t.tid;
        if t.pending_ops > 0 {
            return self.suspend(c, slot, WaitCause::Drain);
        }
        if !t.frames.is_empty() {
            self.issue_rec(c, tid, pc, ins);
            self.end_iteration(c, slot);
            return if self.termination.is_some() { Flow::Stop } else { Flow::Issued };
        }
        let e = self.cores[c].fams[t.fam_slot].as_ref().unwrap();
        if e.dependent && t.ordinal != e.next_retire {
            return self.suspend(c, slot, WaitCause::Predecessor);
        }
        self.issue_rec(c, tid, pc, ins);
        let core = &mut self.cores[c];
        if core.running == Some(slot) {
            core.running = None;
        }
        self.retire_thread(c, slot);
        if self.termination.is_some() {
            Flow::Stop
        } else {
            Flow::Issued
        }
    }

    /// Begin running a sequential family inside the current thread.
    fn start_inline(&mut self, c: CoreId, slot: usize, fid: Fid) -> Flow {
        let program = self.program;
        self.cores[c].threads[slot].as_mut().unwrap().pending_inline = None;
        let rec = &self.families[&fid];
        let def = rec.thread.expect("created family has a thread");
        let Some(count) = rec.params.thread_count() else {
            return self.stop(c, format!("family {fid} has step 0"));
        };
        let (start, step) = (rec.params.start, rec.params.step);
        let counts = program.threads[def].counts;
        if count == 0 {
            let rec = self.families.get_mut(&fid).unwrap();
            let woken = rec.completion.write(0);
            for w in woken {
                self.wake(w);
            }
            let r = self.rec(c, TraceKind::FSyncDone).with("fid", fid).with("seq", 1);
            self.emit(r);
            return self.execute(c, slot);
        }
        let Ok(mut all) = self.cores[c].regs.alloc_range(counts.total()) else {
            return self.stop(c, format!("no registers to run family {fid} inline"));
        };
        let window = RegisterWindow {
            globals: all.take_front(counts.globals).unwrap(),
            dependents: all.take_front(counts.dependents).unwrap(),
            shareds: all.take_front(counts.shareds).unwrap(),
            locals: all,
        };
        let seq = self.families[&fid].seq.clone();
        for (&k, &v) in &seq.globals {
            if let Some(cell) = window.globals.cell(k as u32) {
                self.cores[c].regs.write_cell(cell, v).unwrap();
            }
        }
        for (&k, &v) in &seq.shareds {
            if let Some(cell) = window.dependents.cell(k as u32) {
                self.cores[c].regs.write_cell(cell, v).unwrap();
            }
        }
        self.cores[c].threads[slot].as_mut().unwrap().frames.push(Frame {
            fid,
            def,
            pc: 0,
            window,
            ordinal: 0,
            count,
            start,
            step,
        });
        self.execute(c, slot)
    }

    /// END inside an inline frame: hand shareds on and loop, or finish.
    fn end_iteration(&mut self, c: CoreId, slot: usize) {
        let f = self.cores[c].threads[slot].as_ref().unwrap().frames.last().unwrap();
        let (win, fid) = (f.window, f.fid);
        let regs = &mut self.cores[c].regs;
        for k in 0..win.shareds.count {
            let v = regs.cell(win.shareds.base + k).unwrap().value();
            let d = regs.cell_mut(win.dependents.base + k).unwrap();
            d.reset();
            if let Some(v) = v {
                d.write(v);
            }
        }
        for i in win.shareds.base..win.shareds.end() {
            regs.cell_mut(i).unwrap().reset();
        }
        for i in win.locals.base..win.locals.end() {
            regs.cell_mut(i).unwrap().reset();
        }
        let broken = self.families.get(&fid).is_some_and(|r| r.seq.broken);
        let t = self.cores[c].threads[slot].as_mut().unwrap();
        let f = t.frames.last_mut().unwrap();
        f.ordinal += 1;
        if f.ordinal < f.count && !broken {
            f.pc = 0;
            return;
        }
        let f = t.frames.pop().unwrap();
        let regs = &mut self.cores[c].regs;
        let finals: Vec<(u16, Word)> = (0..f.window.dependents.count)
            .filter_map(|k| {
                regs.cell(f.window.dependents.base + k)
                    .unwrap()
                    .value()
                    .map(|v| (k as u16, v))
            })
            .collect();
        let total = crate::sync::RegRange::new(
            f.window.globals.base,
            f.window.globals.count + f.window.dependents.count + f.window.shareds.count + f.window.locals.count,
        );
        regs.free_range(total);
        let rec = self.families.get_mut(&fid).unwrap();
        rec.seq.shareds = finals.into_iter().collect();
        let woken = rec.completion.write(0);
        for w in woken {
            self.wake(w);
        }
        let r = self.rec(c, TraceKind::FSyncDone).with("fid", fid).with("seq", 1);
        self.emit(r);
        self.cores[c].freed = true;
    }
}
