//! Machine state and the cycle loop.
//!
//! Every cycle each core steps in index order (creation unit, then the
//! issue stage), then all events due that cycle are delivered. When no
//! core has anything to do the clock jumps to the next event.

use std::collections::{BTreeMap, VecDeque};

use crate::config::ChipConfig;
use crate::family::FamilyParams;
use crate::isa::{AllocMode, AllocStrategy, Program};
use crate::kernel::{
    DeadlockReport, EventClass, EventQueue, SimError, Termination, WaitCause, WaitingThread,
};
use crate::memory::{FpuPorts, MemoryState};
use crate::network::{AllocSweep, Direction, Message, Network, Payload};
use crate::place::CoreBlock;
use crate::sep::{BuddyState, SepPolicy};
use crate::stats::RunStats;
use crate::sync::{ClassCounts, RegRange, RegisterFile, RegisterWindow, SyncCell, ThreadRef};
use crate::trace::{render_trace, TraceKind, TraceRecord};
use crate::{CoreId, Cycle, Fid, Tid, Word};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub max_cycles: Cycle,
    /// Run a family as a loop in its parent when allocation fails.
    pub seq_fallback: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_cycles: 100_000_000,
            seq_fallback: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub cycles: Cycle,
    pub termination: Termination,
    pub trace: Vec<TraceRecord>,
    /// Values printed by PRINT, in order.
    pub outputs: Vec<Word>,
    pub memory: MemoryState,
    pub num_cores: usize,
}

impl RunResult {
    pub fn read(&self, addr: Word) -> Word {
        self.memory.read(addr)
    }

    pub fn trace_text(&self) -> String {
        render_trace(&self.trace)
    }

    pub fn stats(&self) -> RunStats {
        RunStats::from_trace(&self.trace)
    }
}

/// Assemble nothing, just run: boot the root family on core 0 and go.
pub fn run_program(cfg: &ChipConfig, program: &Program, opts: &RunOptions) -> RunResult {
    Machine::new(cfg, program, opts).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ThreadState {
    /// Instruction fetch outstanding.
    Waiting,
    Ready,
    /// Staged next in line.
    Active,
    Running,
    Suspended,
}

/// A sequential family being executed inline by its parent.
#[derive(Debug, Clone)]
pub(crate) struct Frame {
    pub fid: Fid,
    pub def: usize,
    pub pc: usize,
    pub window: RegisterWindow,
    pub ordinal: u64,
    pub count: u64,
    pub start: Word,
    pub step: Word,
}

#[derive(Debug, Clone)]
pub(crate) struct ThreadCtx {
    pub tid: Tid,
    pub fid: Fid,
    pub fam_slot: usize,
    pub ordinal: u64,
    pub index: Word,
    pub def: usize,
    pub pc: usize,
    pub window: RegisterWindow,
    pub state: ThreadState,
    pub cause: Option<WaitCause>,
    pub pending_ops: u32,
    pub pending_stores: u32,
    pub last_mem_done: Cycle,
    pub frames: Vec<Frame>,
    pub pending_inline: Option<Fid>,
}

/// A family-table entry on one core.
#[derive(Debug, Clone)]
pub(crate) struct FamEntry {
    pub fid: Fid,
    pub exclusive: bool,
    pub committed: bool,
    pub reservation: RegRange,
    pub reserved_thread: bool,
    pub trimmed: bool,
    pub params: FamilyParams,
    pub place: CoreBlock,
    pub parent_core: CoreId,
    pub created: bool,
    pub thread: usize,
    pub counts: ClassCounts,
    pub dependent: bool,
    pub lo: u64,
    pub hi: u64,
    pub cursor: u64,
    pub live: usize,
    pub block: usize,
    pub globals: RegRange,
    pub d0: RegRange,
    pub d0_live: bool,
    pub chain_tail: RegRange,
    pub next_retire: u64,
    pub broken: bool,
    pub job_done: bool,
    pub ack_sent: bool,
    pub sync_in: bool,
    pub sync_sent: bool,
}

impl FamEntry {
    pub fn all_created(&self) -> bool {
        self.cursor >= self.hi || self.broken
    }
}

pub(crate) struct Core {
    pub regs: RegisterFile,
    pub threads: Vec<Option<ThreadCtx>>,
    /// Regular thread slots neither occupied nor reserved.
    pub thread_free: usize,
    pub fams: Vec<Option<FamEntry>>,
    pub fam_by_fid: BTreeMap<Fid, usize>,
    pub ready: VecDeque<usize>,
    pub active: Option<usize>,
    pub running: Option<usize>,
    pub last_tid: Option<Tid>,
    pub run_issued: u32,
    pub fill_left: Cycle,
    pub warm: bool,
    pub jobs: VecDeque<usize>,
    pub current_job: Option<(usize, Cycle)>,
    pub job_blocked: bool,
    pub refill: Vec<usize>,
    pub parked: VecDeque<Box<AllocSweep>>,
    pub parked_excl: VecDeque<Box<AllocSweep>>,
    pub freed: bool,
}

impl Core {
    fn new(cfg: &ChipConfig) -> Self {
        Self {
            regs: RegisterFile::new(cfg.int_registers_per_core),
            threads: vec![None; cfg.thread_entries_per_core + 1],
            thread_free: cfg.thread_entries_per_core,
            fams: vec![None; cfg.family_entries_per_core + 1],
            fam_by_fid: BTreeMap::new(),
            ready: VecDeque::new(),
            active: None,
            running: None,
            last_tid: None,
            run_issued: 0,
            fill_left: 0,
            warm: false,
            jobs: VecDeque::new(),
            current_job: None,
            job_blocked: false,
            refill: Vec::new(),
            parked: VecDeque::new(),
            parked_excl: VecDeque::new(),
            freed: false,
        }
    }

    pub fn fam(&self, fid: Fid) -> Option<usize> {
        self.fam_by_fid.get(&fid).copied()
    }

    /// Regular family contexts in use.
    pub fn family_load(&self, regular: usize) -> usize {
        self.fams[..regular].iter().filter(|f| f.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FamStatus {
    Allocating,
    Allocated,
    Failed,
    Created,
    Released,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SeqState {
    pub globals: BTreeMap<u16, Word>,
    pub shareds: BTreeMap<u16, Word>,
    pub broken: bool,
}

/// Parent-side view of a family.
#[derive(Debug, Clone)]
pub(crate) struct FamilyRecord {
    pub place: CoreBlock,
    /// Where children of this family's threads go for the default place.
    pub default_place: CoreBlock,
    pub params: FamilyParams,
    pub status: FamStatus,
    pub sequential: bool,
    pub detached: bool,
    pub root: bool,
    pub thread: Option<usize>,
    pub completion: SyncCell,
    pub ack: SyncCell,
    pub alloc_dst: Option<(CoreId, u32)>,
    pub seq: SeqState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MemOpKind {
    Load,
    Store,
    Fpu,
}

#[derive(Debug, Clone)]
pub(crate) struct PendingOp {
    pub core: CoreId,
    pub slot: usize,
    pub tid: Tid,
    pub fid: Fid,
    pub order: u64,
    pub kind: MemOpKind,
    pub addr: Word,
    pub value: Word,
    pub dst: Option<u32>,
}

#[derive(Debug, Clone)]
pub(crate) enum Event {
    Deliver(Message),
    MemDone(PendingOp),
    FetchDone { core: CoreId, slot: usize, tid: Tid },
    SepService(Message),
}

pub(crate) struct Machine<'p> {
    pub cfg: ChipConfig,
    pub program: &'p Program,
    pub opts: RunOptions,
    pub now: Cycle,
    pub cores: Vec<Core>,
    pub events: EventQueue<Event>,
    pub net: Network,
    pub memory: MemoryState,
    pub fpu: FpuPorts,
    pub families: BTreeMap<Fid, FamilyRecord>,
    pub next_fid: Fid,
    pub next_tid: Tid,
    pub mem_order: u64,
    pub sep: BuddyState,
    pub sep_busy_until: Cycle,
    pub trace: Vec<TraceRecord>,
    pub outputs: Vec<Word>,
    pub termination: Option<Termination>,
}

impl<'p> Machine<'p> {
    pub fn new(cfg: &ChipConfig, program: &'p Program, opts: &RunOptions) -> Self {
        let mut sep = BuddyState::new(cfg.num_cores);
        if cfg.sep_reserved {
            sep.alloc(1, SepPolicy::Exact).expect("fresh allocator has core 0");
        }
        let mut memory = MemoryState::new(cfg);
        for (addr, w) in program.initial_memory() {
            memory.write(addr, w);
        }
        Self {
            cfg: cfg.clone(),
            program,
            opts: opts.clone(),
            now: 0,
            cores: (0..cfg.num_cores).map(|_| Core::new(cfg)).collect(),
            events: EventQueue::new(),
            net: Network::new(cfg),
            memory,
            fpu: FpuPorts::new(cfg),
            families: BTreeMap::new(),
            next_fid: 1,
            next_tid: 0,
            mem_order: 0,
            sep,
            sep_busy_until: 0,
            trace: Vec::new(),
            outputs: Vec::new(),
            termination: None,
        }
    }

    pub fn emit(&mut self, rec: TraceRecord) {
        self.trace.push(rec);
    }

    pub fn rec(&self, core: CoreId, kind: TraceKind) -> TraceRecord {
        TraceRecord::new(self.now, core, kind)
    }

    pub fn fault(&mut self, core: CoreId, message: impl Into<String>) {
        if self.termination.is_some() {
            return;
        }
        let message = message.into();
        let r = self.rec(core, TraceKind::Fault).with("msg", message.replace(' ', "_"));
        self.emit(r);
        self.termination = Some(Termination::Fault(SimError {
            cycle: self.now,
            core,
            message,
        }));
    }

    fn boot(&mut self) {
        let fid = self.next_fid;
        self.next_fid += 1;
        let chip = CoreBlock::new(0, self.cfg.num_cores);
        let place = CoreBlock::new(0, 1);
        self.families.insert(
            fid,
            FamilyRecord {
                place,
                default_place: chip,
                params: FamilyParams::default(),
                status: FamStatus::Created,
                sequential: false,
                detached: false,
                root: true,
                thread: Some(self.program.entry),
                completion: SyncCell::empty(),
                ack: SyncCell::empty(),
                alloc_dst: None,
                seq: SeqState::default(),
            },
        );
        let sweep = AllocSweep {
            fid,
            parent_core: 0,
            place,
            mode: AllocMode::Normal,
            strategy: AllocStrategy::Single,
            phase: crate::network::SweepPhase::Forward,
            loads: Vec::new(),
            chosen: None,
            failed: false,
        };
        if !self.try_reserve(0, &sweep) {
            self.fault(0, "no resources for the root family");
            return;
        }
        self.commit(0, fid, place);
        let r = self
            .rec(0, TraceKind::FCrei)
            .with("fid", fid)
            .with("thread", &self.program.entry_thread().name)
            .with("root", 1);
        self.emit(r);
        self.create_arrival(0, fid, self.program.entry, place, 0);
    }

    pub fn run(mut self) -> RunResult {
        self.boot();
        while self.termination.is_none() {
            if self.now >= self.opts.max_cycles {
                self.termination = Some(Termination::Limit);
                break;
            }
            for c in 0..self.cores.len() {
                self.step_core(c);
                if self.termination.is_some() {
                    break;
                }
            }
            if self.termination.is_some() {
                break;
            }
            while let Some((_, ev)) = self.events.pop_due(self.now) {
                self.handle_event(ev);
                if self.termination.is_some() {
                    break;
                }
            }
            self.retry_parked_all();
            if self.termination.is_some() {
                break;
            }
            let next = self.now + 1;
            if self.any_core_busy() {
                self.now = next;
                continue;
            }
            let wake = self
                .cores
                .iter()
                .filter_map(|c| c.current_job.filter(|_| !c.job_blocked).map(|(_, at)| at))
                .chain(self.events.next_due())
                .min();
            match wake {
                Some(at) => self.now = at.max(next).min(self.opts.max_cycles),
                None => {
                    self.now = next;
                    let report = self.deadlock_report();
                    self.termination = Some(Termination::Deadlock(report));
                }
            }
        }
        let termination = self.termination.clone().unwrap();
        let r = self
            .rec(0, TraceKind::Halt)
            .with("reason", termination.label())
            .with("cores", self.cfg.num_cores);
        self.emit(r);
        RunResult {
            cycles: self.now,
            termination,
            trace: self.trace,
            outputs: self.outputs,
            memory: self.memory,
            num_cores: self.cfg.num_cores,
        }
    }

    /// Whether some core can make progress next cycle without an event.
    fn any_core_busy(&self) -> bool {
        (0..self.cores.len()).any(|c| {
            let core = &self.cores[c];
            core.running.is_some()
                || core.active.is_some()
                || !core.ready.is_empty()
                || core.fill_left > 0
                || (core.current_job.is_none() && !core.jobs.is_empty())
                || (core.current_job.is_none() && self.refill_candidate(c).is_some())
        })
    }

    fn deadlock_report(&self) -> DeadlockReport {
        let mut threads = Vec::new();
        for (c, core) in self.cores.iter().enumerate() {
            for t in core.threads.iter().flatten() {
                let def = t.frames.last().map_or(t.def, |f| f.def);
                threads.push(WaitingThread {
                    core: c,
                    tid: t.tid,
                    fid: t.fid,
                    thread: self.program.threads[def].name.clone(),
                    pc: t.frames.last().map_or(t.pc, |f| f.pc),
                    cause: t.cause,
                });
            }
        }
        DeadlockReport { threads }
    }

    fn handle_event(&mut self, ev: Event) {
        match ev {
            Event::Deliver(msg) => self.deliver(msg),
            Event::MemDone(op) => self.mem_done(op),
            Event::FetchDone { core, slot, tid } => {
                let Some(t) = self.cores[core].threads[slot].as_mut() else { return };
                if t.tid != tid || t.state != ThreadState::Waiting {
                    return;
                }
                t.state = ThreadState::Ready;
                self.cores[core].ready.push_back(slot);
                let r = self.rec(core, TraceKind::Ready).with("tid", tid);
                self.emit(r);
            }
            Event::SepService(msg) => self.sep_service(msg),
        }
    }

    fn mem_done(&mut self, op: PendingOp) {
        let (kind_name, value) = match op.kind {
            MemOpKind::Load => ("ld", self.memory.read(op.addr)),
            MemOpKind::Store => {
                self.memory.write(op.addr, op.value);
                ("st", op.value)
            }
            MemOpKind::Fpu => ("fp", op.value),
        };
        let r = self
            .rec(op.core, TraceKind::MemDone)
            .with("tid", op.tid)
            .with("fid", op.fid)
            .with("op", kind_name)
            .with("addr", op.addr)
            .with("value", value)
            .with("order", op.order);
        self.emit(r);
        if let Some(cell) = op.dst {
            self.write_reg(op.core, cell, value);
        }
        let Some(t) = self.cores[op.core].threads[op.slot].as_mut() else { return };
        if t.tid != op.tid {
            return;
        }
        t.pending_ops -= 1;
        if op.kind == MemOpKind::Store {
            t.pending_stores -= 1;
        }
        let wake = t.state == ThreadState::Suspended
            && match t.cause {
                Some(WaitCause::Drain) => t.pending_ops == 0,
                Some(WaitCause::Stores) => t.pending_stores == 0,
                _ => false,
            };
        if wake {
            let tref = ThreadRef {
                core: op.core,
                slot: op.slot as u16,
                tid: op.tid,
            };
            self.wake(tref);
        }
    }

    /// Write a register cell and wake everything queued on it.
    pub fn write_reg(&mut self, core: CoreId, cell: u32, value: Word) {
        match self.cores[core].regs.write_cell(cell, value) {
            Ok(woken) => {
                for w in woken {
                    self.wake(w);
                }
            }
            Err(e) => self.fault(core, e.to_string()),
        }
    }

    pub fn wake(&mut self, who: ThreadRef) {
        let core = &mut self.cores[who.core];
        let slot = who.slot as usize;
        let Some(t) = core.threads[slot].as_mut() else { return };
        if t.tid != who.tid || t.state != ThreadState::Suspended {
            return;
        }
        let cause = t.cause.take();
        t.state = ThreadState::Ready;
        core.ready.push_back(slot);
        let mut r = self.rec(who.core, TraceKind::Wake).with("tid", who.tid);
        if let Some(c) = cause {
            r = r.with("cell", c);
        }
        self.emit(r);
    }

    pub fn send_delegation(&mut self, src: CoreId, dst: CoreId, fid: Fid, payload: Payload) {
        let msg = Message {
            src,
            dst,
            fid,
            payload,
        };
        match self.net.delegation(self.now, &msg) {
            Ok(due) => self.post(msg, "deleg", due),
            Err(e) => self.fault(src, e.to_string()),
        }
    }

    pub fn send_distribution(
        &mut self,
        src: CoreId,
        dir: Direction,
        place: CoreBlock,
        fid: Fid,
        payload: Payload,
    ) {
        match self.net.distribution(self.now, src, dir, place) {
            Ok((dst, due)) => {
                let msg = Message {
                    src,
                    dst,
                    fid,
                    payload,
                };
                self.post(msg, dir.name(), due)
            }
            Err(e) => self.fault(src, e.to_string()),
        }
    }

    fn post(&mut self, msg: Message, via: &str, due: Cycle) {
        let r = self
            .rec(msg.src, TraceKind::Send)
            .with("kind", msg.kind())
            .with("dst", msg.dst)
            .with("fid", msg.fid)
            .with("via", via)
            .with("due", due);
        self.emit(r);
        self.events.schedule_at(due, EventClass::Network, Event::Deliver(msg));
    }

    pub fn schedule_mem(&mut self, due: Cycle, op: PendingOp) {
        self.events.schedule_at(due, EventClass::Memory, Event::MemDone(op));
    }

    pub fn schedule_fetch(&mut self, core: CoreId, slot: usize, tid: Tid) {
        let due = self.now + self.cfg.latency.l1_hit;
        self.events
            .schedule_at(due, EventClass::Fetch, Event::FetchDone { core, slot, tid });
    }

    fn retry_parked_all(&mut self) {
        for c in 0..self.cores.len() {
            if std::mem::take(&mut self.cores[c].freed) {
                self.retry_parked(c);
            }
        }
    }
}
