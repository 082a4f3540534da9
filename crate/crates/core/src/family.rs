//! Family lifecycle: allocation sweeps, configuration, bulk creation,
//! the synchronization chain, break and release.

use std::ops::Range;

use crate::isa::{AllocMode, AllocStrategy, FamilyParam};
use crate::machine::{FamEntry, FamStatus, Machine, ThreadCtx, ThreadState};
use crate::network::{AllocSweep, Direction, Message, Payload, RegTarget, SepOp, SweepPhase};
use crate::place::CoreBlock;
use crate::sync::{ClassCounts, RegRange, RegisterWindow, ThreadRef};
use crate::trace::TraceKind;
use crate::{CoreId, Fid, Word};

/// Index-space parameters of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilyParams {
    pub start: Word,
    pub limit: Word,
    pub step: Word,
    /// Per-core bound on live threads; 0 selects the thread-table size.
    pub block: Word,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            start: 0,
            limit: 1,
            step: 1,
            block: 0,
        }
    }
}

impl FamilyParams {
    pub fn set(&mut self, param: FamilyParam, value: Word) {
        match param {
            FamilyParam::Start => self.start = value,
            FamilyParam::Limit => self.limit = value,
            FamilyParam::Step => self.step = value,
            FamilyParam::Block => self.block = value,
        }
    }

    /// Number of indices `start, start+step, ...` short of `limit`.
    /// `None` when the step is zero.
    pub fn thread_count(&self) -> Option<u64> {
        let (start, limit, step) = (self.start as i128, self.limit as i128, self.step as i128);
        let span = match step.signum() {
            0 => return None,
            1 => limit - start,
            _ => start - limit,
        };
        if span <= 0 {
            return Some(0);
        }
        let step = step.abs();
        Some(((span + step - 1) / step) as u64)
    }

    pub fn index(&self, ordinal: u64) -> Word {
        self.start.wrapping_add((ordinal as Word).wrapping_mul(self.step))
    }
}

/// Contiguous ordinal ranges per core. Dependent families stay on the
/// first core; otherwise the first `total % cores` cores get one extra.
pub fn distribute_threads(total: u64, cores: usize, dependent: bool) -> Vec<Range<u64>> {
    assert!(cores >= 1, "a place has at least one core");
    if dependent {
        let mut v = vec![0..total];
        v.extend((1..cores).map(|_| total..total));
        return v;
    }
    let n = cores as u64;
    let (base, extra) = (total / n, total % n);
    let mut lo = 0;
    (0..n)
        .map(|k| {
            let len = base + u64::from(k < extra);
            let r = lo..lo + len;
            lo += len;
            r
        })
        .collect()
}

/// Index of the least loaded core, lowest index on ties.
pub fn balanced_choice(loads: &[usize]) -> usize {
    loads
        .iter()
        .enumerate()
        .min_by_key(|&(i, &l)| (l, i))
        .map(|(i, _)| i)
        .expect("non-empty place")
}

/// Largest power of two not above `n`.
pub fn shrink_size(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

impl Machine<'_> {
    /// Take one family context, one thread context and a minimal register
    /// run on `core` for the sweep's family.
    pub(crate) fn try_reserve(&mut self, core: CoreId, sweep: &AllocSweep) -> bool {
        let exclusive = sweep.mode == AllocMode::Exclusive;
        let fam_n = self.cfg.family_entries_per_core;
        let thr_n = self.cfg.thread_entries_per_core;
        let min_regs = self.cfg.min_alloc_registers as u32;
        let c = &mut self.cores[core];
        let slot = if exclusive {
            (c.fams[fam_n].is_none() && c.threads[thr_n].is_none()).then_some(fam_n)
        } else if c.thread_free == 0 {
            None
        } else {
            c.fams[..fam_n].iter().position(Option::is_none)
        };
        let Some(slot) = slot else { return false };
        let Ok(reservation) = c.regs.alloc_range(min_regs) else { return false };
        if !exclusive {
            c.thread_free -= 1;
        }
        c.fams[slot] = Some(FamEntry {
            fid: sweep.fid,
            exclusive,
            committed: false,
            reservation,
            reserved_thread: !exclusive,
            trimmed: false,
            params: FamilyParams::default(),
            place: sweep.place,
            parent_core: sweep.parent_core,
            created: false,
            thread: 0,
            counts: ClassCounts::default(),
            dependent: false,
            lo: 0,
            hi: 0,
            cursor: 0,
            live: 0,
            block: 1,
            globals: RegRange::default(),
            d0: RegRange::default(),
            d0_live: false,
            chain_tail: RegRange::default(),
            next_retire: 0,
            broken: false,
            job_done: false,
            ack_sent: false,
            sync_in: false,
            sync_sent: false,
        });
        c.fam_by_fid.insert(sweep.fid, slot);
        true
    }

    pub(crate) fn commit(&mut self, core: CoreId, fid: Fid, place: CoreBlock) {
        let c = &mut self.cores[core];
        let slot = c.fam(fid).expect("committing a reserved family");
        let e = c.fams[slot].as_mut().unwrap();
        e.committed = true;
        e.place = place;
    }

    /// Free an entry and everything it still holds.
    fn drop_entry(&mut self, core: CoreId, fid: Fid) {
        let c = &mut self.cores[core];
        let Some(slot) = c.fam_by_fid.remove(&fid) else { return };
        let e = c.fams[slot].take().unwrap();
        if !e.trimmed {
            c.regs.free_range(e.reservation);
        }
        if e.reserved_thread {
            c.thread_free += 1;
        }
        c.regs.free_range(e.globals);
        c.regs.free_range(e.chain_tail);
        c.refill.retain(|&s| s != slot);
        c.freed = true;
    }

    fn park(&mut self, core: CoreId, sweep: Box<AllocSweep>) {
        let c = &mut self.cores[core];
        if sweep.mode == AllocMode::Exclusive {
            c.parked_excl.push_back(sweep);
        } else {
            c.parked.push_back(sweep);
        }
    }

    fn place_index(sweep: &AllocSweep, core: CoreId) -> usize {
        core - sweep.place.start
    }

    fn effective_place(sweep: &AllocSweep) -> CoreBlock {
        match (sweep.strategy, sweep.phase) {
            (AllocStrategy::Balanced, _) => {
                CoreBlock::new(sweep.place.start + sweep.chosen.unwrap_or(0), 1)
            }
            (_, SweepPhase::Return { keep }) => CoreBlock::new(sweep.place.start, keep),
            _ => sweep.place,
        }
    }

    fn alloc_visit(&mut self, core: CoreId, mut sweep: Box<AllocSweep>) {
        let idx = Self::place_index(&sweep, core);
        match sweep.phase {
            SweepPhase::Forward => {
                if sweep.strategy == AllocStrategy::Balanced {
                    let load = self.cores[core].family_load(self.cfg.family_entries_per_core);
                    sweep.loads.push(load);
                    return self.forward_next(core, sweep);
                }
                if self.try_reserve(core, &sweep) {
                    return self.forward_next(core, sweep);
                }
                match sweep.mode {
                    AllocMode::Normal => {
                        if idx == 0 {
                            sweep.phase = SweepPhase::Abort;
                            self.alloc_result(core, sweep);
                        } else {
                            sweep.phase = if sweep.strategy == AllocStrategy::Normal {
                                SweepPhase::Return {
                                    keep: shrink_size(idx),
                                }
                            } else {
                                SweepPhase::Abort
                            };
                            let place = sweep.place;
                            let fid = sweep.fid;
                            self.send_distribution(core, Direction::Prev, place, fid, Payload::AllocForward(sweep));
                        }
                    }
                    AllocMode::Suspend | AllocMode::Exclusive => self.park(core, sweep),
                }
            }
            SweepPhase::Return { keep } => {
                if sweep.strategy == AllocStrategy::Balanced {
                    if sweep.chosen == Some(idx) && !sweep.failed {
                        if self.try_reserve(core, &sweep) {
                            self.commit(core, sweep.fid, Self::effective_place(&sweep));
                        } else if sweep.mode == AllocMode::Normal {
                            sweep.failed = true;
                        } else {
                            return self.park(core, sweep);
                        }
                    }
                } else if idx < keep {
                    self.commit(core, sweep.fid, Self::effective_place(&sweep));
                } else {
                    self.drop_entry(core, sweep.fid);
                }
                self.return_next(core, sweep);
            }
            SweepPhase::Abort => {
                self.drop_entry(core, sweep.fid);
                self.return_next(core, sweep);
            }
        }
    }

    fn forward_next(&mut self, core: CoreId, mut sweep: Box<AllocSweep>) {
        let idx = Self::place_index(&sweep, core);
        let (place, fid) = (sweep.place, sweep.fid);
        if idx + 1 == place.size {
            if sweep.strategy == AllocStrategy::Balanced {
                sweep.chosen = Some(balanced_choice(&sweep.loads));
            }
            sweep.phase = SweepPhase::Return { keep: place.size };
            self.send_distribution(core, Direction::Loop, place, fid, Payload::AllocForward(sweep));
        } else {
            self.send_distribution(core, Direction::Next, place, fid, Payload::AllocForward(sweep));
        }
    }

    fn return_next(&mut self, core: CoreId, sweep: Box<AllocSweep>) {
        if Self::place_index(&sweep, core) == 0 {
            self.alloc_result(core, sweep);
        } else {
            let (place, fid) = (sweep.place, sweep.fid);
            self.send_distribution(core, Direction::Prev, place, fid, Payload::AllocForward(sweep));
        }
    }

    fn alloc_result(&mut self, core: CoreId, sweep: Box<AllocSweep>) {
        let ok = matches!(sweep.phase, SweepPhase::Return { .. }) && !sweep.failed;
        let payload = if ok {
            Payload::AllocAck {
                place: Self::effective_place(&sweep),
            }
        } else {
            Payload::AllocFail
        };
        self.send_delegation(core, sweep.parent_core, sweep.fid, payload);
    }

    /// Resume parked sweeps, oldest first, while resources allow.
    pub(crate) fn retry_parked(&mut self, core: CoreId) {
        for exclusive in [false, true] {
            loop {
                let c = &mut self.cores[core];
                let queue = if exclusive { &mut c.parked_excl } else { &mut c.parked };
                let Some(sweep) = queue.front() else { break };
                let sweep = sweep.clone();
                if !self.try_reserve(core, &sweep) {
                    break;
                }
                let c = &mut self.cores[core];
                let queue = if exclusive { &mut c.parked_excl } else { &mut c.parked };
                queue.pop_front();
                match sweep.phase {
                    SweepPhase::Forward => self.forward_next(core, sweep),
                    _ => {
                        self.commit(core, sweep.fid, Self::effective_place(&sweep));
                        self.return_next(core, sweep);
                    }
                }
            }
        }
    }

    pub(crate) fn deliver(&mut self, msg: Message) {
        let r = self
            .rec(msg.dst, TraceKind::Recv)
            .with("kind", msg.kind())
            .with("src", msg.src)
            .with("fid", msg.fid);
        self.emit(r);
        let core = msg.dst;
        let fid = msg.fid;
        match msg.payload {
            Payload::AllocReq(sweep) => {
                let place = sweep.place;
                self.send_distribution(core, Direction::Loop, place, fid, Payload::AllocForward(sweep));
            }
            Payload::AllocForward(sweep) => self.alloc_visit(core, sweep),
            Payload::AllocAck { place } => {
                let Some(rec) = self.families.get_mut(&fid) else { return };
                rec.place = place;
                rec.default_place = place;
                rec.status = FamStatus::Allocated;
                let dst = rec.alloc_dst;
                let r = self.rec(core, TraceKind::FAck).with("fid", fid).with("place", place);
                self.emit(r);
                if let Some((c, cell)) = dst {
                    self.write_reg(c, cell, fid as Word);
                }
            }
            Payload::AllocFail => {
                let fallback = self.opts.seq_fallback;
                let Some(rec) = self.families.get_mut(&fid) else { return };
                let dst = rec.alloc_dst;
                let value = if fallback {
                    rec.sequential = true;
                    rec.status = FamStatus::Allocated;
                    fid as Word
                } else {
                    rec.status = FamStatus::Failed;
                    0
                };
                let r = self.rec(core, TraceKind::FFail).with("fid", fid).with("seq", u8::from(fallback));
                self.emit(r);
                if let Some((c, cell)) = dst {
                    self.write_reg(c, cell, value);
                }
            }
            Payload::Configure { param, value } => {
                let Some(slot) = self.cores[core].fam(fid) else { return };
                let e = self.cores[core].fams[slot].as_mut().unwrap();
                e.params.set(param, value);
                let place = e.place;
                if core < place.last() {
                    self.send_distribution(core, Direction::Next, place, fid, Payload::Configure { param, value });
                }
            }
            Payload::Create {
                thread,
                place,
                parent_core,
            } => self.create_arrival(core, fid, thread, place, parent_core),
            Payload::CreateAck => {
                let Some(rec) = self.families.get_mut(&fid) else { return };
                let woken = rec.ack.write(fid as Word);
                for w in woken {
                    self.wake(w);
                }
            }
            Payload::RegWrite { target, slot, value } => self.remote_write(core, fid, target, slot, value),
            Payload::RegRead {
                slot,
                reply_core,
                cell,
            } => {
                let Some(fslot) = self.cores[core].fam(fid) else {
                    return self.fault(core, format!("read from family {fid} with no context here"));
                };
                let e = self.cores[core].fams[fslot].as_ref().unwrap();
                let Some(idx) = e.chain_tail.cell(slot as u32) else {
                    return self.fault(core, format!("shared slot {slot} out of range for family {fid}"));
                };
                match self.cores[core].regs.cell(idx).ok().and_then(|c| c.value()) {
                    Some(value) => {
                        self.send_delegation(core, reply_core, fid, Payload::RegReadReply { cell, value })
                    }
                    None => self.fault(core, format!("final shared {slot} of family {fid} was never written")),
                }
            }
            Payload::RegReadReply { cell, value } => self.write_reg(core, cell, value),
            Payload::SyncDone { to_parent: true } => self.family_completed(core, fid),
            Payload::SyncDone { to_parent: false } => {
                let Some(slot) = self.cores[core].fam(fid) else { return };
                self.cores[core].fams[slot].as_mut().unwrap().sync_in = true;
                self.check_done(core, slot);
            }
            Payload::Release => {
                let Some(slot) = self.cores[core].fam(fid) else { return };
                let place = self.cores[core].fams[slot].as_ref().unwrap().place;
                if core < place.last() {
                    self.send_distribution(core, Direction::Next, place, fid, Payload::Release);
                }
                self.drop_entry(core, fid);
            }
            Payload::Break { dir } => {
                let Some(slot) = self.cores[core].fam(fid) else { return };
                self.break_local(core, slot, dir);
            }
            Payload::SepCall { .. } => {
                let start = self.now.max(self.sep_busy_until);
                let done = start + self.cfg.sep_cycles_per_request;
                self.sep_busy_until = done;
                self.events.schedule_at(
                    done,
                    crate::kernel::EventClass::Service,
                    crate::machine::Event::SepService(Message {
                        src: msg.src,
                        dst: core,
                        fid,
                        payload: msg.payload,
                    }),
                );
            }
            Payload::SepReply {
                requester,
                cell,
                value,
                ok,
            } => {
                let r = self
                    .rec(core, TraceKind::SepReply)
                    .with("tid", requester.tid)
                    .with("value", value)
                    .with("ok", u8::from(ok));
                self.emit(r);
                if let Some(cell) = cell {
                    self.write_reg(core, cell, value);
                }
                self.wake(requester);
            }
        }
    }

    pub(crate) fn sep_service(&mut self, msg: Message) {
        let Payload::SepCall { op, requester, cell } = msg.payload else {
            unreachable!("only calls are serviced")
        };
        let (value, ok) = match op {
            SepOp::Alloc { count, policy } => {
                let got = usize::try_from(count)
                    .ok()
                    .filter(|&n| n >= 1)
                    .and_then(|n| self.sep.alloc_placeid(n, policy).ok());
                match got {
                    Some(id) => (id as Word, true),
                    None => (-1, false),
                }
            }
            SepOp::Free { placeid } => {
                let ok = u64::try_from(placeid)
                    .ok()
                    .is_some_and(|p| self.sep.free_placeid(p).is_ok());
                (0, ok)
            }
        };
        self.send_delegation(
            msg.dst,
            requester.core,
            msg.fid,
            Payload::SepReply {
                requester,
                cell,
                value,
                ok,
            },
        );
    }

    fn remote_write(&mut self, core: CoreId, fid: Fid, target: RegTarget, slot: u16, value: Word) {
        let Some(fslot) = self.cores[core].fam(fid) else {
            return self.fault(core, format!("register write to family {fid} with no context here"));
        };
        let e = self.cores[core].fams[fslot].as_ref().unwrap();
        let place = e.place;
        let cell = match target {
            RegTarget::Global => e.globals.cell(slot as u32),
            RegTarget::Dependent => {
                if !e.d0_live {
                    // The first thread has already consumed and retired.
                    return;
                }
                e.d0.cell(slot as u32)
            }
        };
        let Some(cell) = cell else {
            return self.fault(core, format!("channel slot {slot} out of range for family {fid}"));
        };
        self.write_reg(core, cell, value);
        if target == RegTarget::Global && core < place.last() {
            self.send_distribution(
                core,
                Direction::Next,
                place,
                fid,
                Payload::RegWrite { target, slot, value },
            );
        }
    }

    fn family_completed(&mut self, core: CoreId, fid: Fid) {
        let Some(rec) = self.families.get_mut(&fid) else { return };
        let woken = rec.completion.write(0);
        let (root, detached, place) = (rec.root, rec.detached, rec.place);
        if detached {
            rec.status = FamStatus::Released;
        }
        let r = self.rec(core, TraceKind::FSyncDone).with("fid", fid);
        self.emit(r);
        for w in woken {
            self.wake(w);
        }
        if root {
            self.termination = Some(crate::kernel::Termination::Completed);
        } else if detached {
            let r = self.rec(core, TraceKind::FRelease).with("fid", fid).with("auto", 1);
            self.emit(r);
            self.send_delegation(core, place.start, fid, Payload::Release);
        }
    }

    pub(crate) fn create_arrival(
        &mut self,
        core: CoreId,
        fid: Fid,
        thread: usize,
        place: CoreBlock,
        parent_core: CoreId,
    ) {
        let Some(slot) = self.cores[core].fam(fid) else {
            return self.fault(core, format!("create for family {fid} with no context here"));
        };
        if core < place.last() {
            self.send_distribution(
                core,
                Direction::Next,
                place,
                fid,
                Payload::Create {
                    thread,
                    place,
                    parent_core,
                },
            );
        }
        let def = &self.program.threads[thread];
        let counts = def.counts;
        let dependent = def.is_dependent();
        let idx = core - place.start;
        let thread_entries = self.cfg.thread_entries_per_core;
        let c = &mut self.cores[core];
        let e = c.fams[slot].as_mut().unwrap();
        let Some(total) = e.params.thread_count() else {
            return self.fault(core, format!("family {fid} has step 0"));
        };
        let range = distribute_threads(total, place.size, dependent)[idx].clone();
        let block = if e.exclusive {
            1
        } else if e.params.block <= 0 {
            thread_entries
        } else {
            (e.params.block as usize).min(thread_entries)
        };
        let head = counts.globals + if dependent && idx == 0 { counts.dependents } else { 0 };
        let carved = match e.reservation.take_front(head) {
            Some(r) => Some(r),
            None => c.regs.alloc_range(head).ok(),
        };
        let Some(mut carved) = carved else {
            return self.fault(core, format!("no registers for the globals of family {fid}"));
        };
        for i in carved.base..carved.end() {
            c.regs.cell_mut(i).unwrap().reset();
        }
        let globals = carved.take_front(counts.globals).unwrap();
        e.created = true;
        e.thread = thread;
        e.counts = counts;
        e.dependent = dependent;
        e.place = place;
        e.parent_core = parent_core;
        e.lo = range.start;
        e.hi = range.end;
        e.cursor = range.start;
        e.next_retire = range.start;
        e.block = block.max(1);
        e.globals = globals;
        e.d0 = carved;
        e.d0_live = !carved.is_empty();
        e.chain_tail = carved;
        e.sync_in = idx == 0;
        let n = range.end - range.start;
        if c.current_job.is_none() {
            c.current_job = Some((slot, self.now + self.cfg.creation_setup_cycles));
            c.job_blocked = false;
        } else {
            c.jobs.push_back(slot);
        }
        let r = self
            .rec(core, TraceKind::FCreate)
            .with("fid", fid)
            .with("thread", &def.name)
            .with("n", n)
            .with("block", block);
        self.emit(r);
    }

    /// One cycle of the creation unit.
    pub(crate) fn step_creation(&mut self, core: CoreId) {
        if let Some((slot, at)) = self.cores[core].current_job {
            if self.now < at {
                return;
            }
            let e = self.cores[core].fams[slot].as_ref().unwrap();
            if e.all_created() || e.live >= e.block {
                return self.finish_job(core, slot);
            }
            match self.create_thread(core, slot) {
                Ok(()) => {
                    let c = &mut self.cores[core];
                    c.current_job = Some((slot, self.now + 1));
                    c.job_blocked = false;
                    let e = c.fams[slot].as_ref().unwrap();
                    if e.all_created() || e.live >= e.block {
                        self.finish_job(core, slot);
                    }
                }
                Err(()) => {
                    let live = self.cores[core].fams[slot].as_ref().unwrap().live;
                    if live >= 1 {
                        self.finish_job(core, slot);
                    } else {
                        self.cores[core].job_blocked = true;
                    }
                }
            }
            return;
        }
        if let Some(slot) = self.refill_candidate(core) {
            let _ = self.create_thread(core, slot);
        }
        let c = &mut self.cores[core];
        let fams = &c.fams;
        c.refill.retain(|&s| fams[s].as_ref().is_some_and(|e| !e.all_created()));
    }

    /// A family on `core` past its initial job that may create a thread now.
    pub(crate) fn refill_candidate(&self, core: CoreId) -> Option<usize> {
        let c = &self.cores[core];
        c.refill.iter().copied().find(|&s| {
            let Some(e) = c.fams[s].as_ref() else { return false };
            if e.all_created() || e.live >= e.block {
                return false;
            }
            let need = e.counts.shareds + e.counts.locals;
            let slot_ok = if e.exclusive {
                c.threads[self.cfg.thread_entries_per_core].is_none()
            } else {
                e.reserved_thread || c.thread_free > 0
            };
            slot_ok && (e.reservation.count >= need || c.regs.largest_free_run() >= need)
        })
    }

    fn finish_job(&mut self, core: CoreId, slot: usize) {
        let setup = self.cfg.creation_setup_cycles;
        let now = self.now;
        let c = &mut self.cores[core];
        c.current_job = c.jobs.pop_front().map(|next| (next, now + 1 + setup));
        c.job_blocked = false;
        let e = c.fams[slot].as_mut().unwrap();
        e.job_done = true;
        let first = core == e.place.start;
        let send_ack = first && !e.ack_sent;
        e.ack_sent = true;
        let (fid, parent, all) = (e.fid, e.parent_core, e.all_created());
        if all {
            self.trim(core, slot);
        } else {
            self.cores[core].refill.push(slot);
        }
        if send_ack {
            self.send_delegation(core, parent, fid, Payload::CreateAck);
        }
        self.check_done(core, slot);
    }

    /// Return what the creation no longer needs: the spare reserved
    /// registers and the reserved thread context.
    fn trim(&mut self, core: CoreId, slot: usize) {
        let c = &mut self.cores[core];
        let e = c.fams[slot].as_mut().unwrap();
        if e.trimmed {
            return;
        }
        e.trimmed = true;
        c.regs.free_range(e.reservation);
        e.reservation = RegRange::default();
        if e.reserved_thread {
            e.reserved_thread = false;
            c.thread_free += 1;
        }
        c.freed = true;
    }

    fn create_thread(&mut self, core: CoreId, slot: usize) -> Result<(), ()> {
        let thr_n = self.cfg.thread_entries_per_core;
        let c = &mut self.cores[core];
        let e = c.fams[slot].as_mut().unwrap();
        let need = e.counts.shareds + e.counts.locals;
        let tslot = if e.exclusive {
            if c.threads[thr_n].is_some() {
                return Err(());
            }
            thr_n
        } else {
            if !e.reserved_thread && c.thread_free == 0 {
                return Err(());
            }
            c.threads[..thr_n].iter().position(Option::is_none).expect("slot accounting")
        };
        let own = match e.reservation.take_front(need) {
            Some(r) => r,
            None => match c.regs.alloc_range(need) {
                Ok(r) => r,
                Err(_) => return Err(()),
            },
        };
        if !e.exclusive {
            if e.reserved_thread {
                e.reserved_thread = false;
            } else {
                c.thread_free -= 1;
            }
        }
        for i in own.base..own.end() {
            c.regs.cell_mut(i).unwrap().reset();
        }
        let mut own = own;
        let shareds = own.take_front(e.counts.shareds).unwrap();
        let window = RegisterWindow {
            globals: e.globals,
            shareds,
            locals: own,
            dependents: e.chain_tail,
        };
        e.chain_tail = shareds;
        let ordinal = e.cursor;
        e.cursor += 1;
        e.live += 1;
        let index = e.params.index(ordinal);
        let (fid, def) = (e.fid, e.thread);
        let all = e.all_created();
        let tid = self.next_tid;
        self.next_tid += 1;
        c.threads[tslot] = Some(ThreadCtx {
            tid,
            fid,
            fam_slot: slot,
            ordinal,
            index,
            def,
            pc: 0,
            window,
            state: ThreadState::Waiting,
            cause: None,
            pending_ops: 0,
            pending_stores: 0,
            last_mem_done: 0,
            frames: Vec::new(),
            pending_inline: None,
        });
        let r = self
            .rec(core, TraceKind::TCreate)
            .with("fid", fid)
            .with("tid", tid)
            .with("idx", index)
            .with("ord", ordinal);
        self.emit(r);
        self.schedule_fetch(core, tslot, tid);
        if all {
            self.trim(core, slot);
        }
        Ok(())
    }

    /// Thread at END with nothing outstanding: free its context.
    pub(crate) fn retire_thread(&mut self, core: CoreId, tslot: usize) {
        let thr_n = self.cfg.thread_entries_per_core;
        let c = &mut self.cores[core];
        let t = c.threads[tslot].take().expect("retiring a live thread");
        let e = c.fams[t.fam_slot].as_mut().unwrap();
        c.regs.free_range(t.window.locals);
        if !t.window.dependents.is_empty() {
            if t.window.dependents == e.d0 {
                e.d0_live = false;
            }
            c.regs.free_range(t.window.dependents);
        }
        if tslot < thr_n {
            c.thread_free += 1;
        }
        e.live -= 1;
        e.next_retire += 1;
        let next = e.next_retire;
        let fam_slot = t.fam_slot;
        c.freed = true;
        let r = self.rec(core, TraceKind::TEnd).with("fid", t.fid).with("tid", t.tid);
        self.emit(r);
        let succ = self.cores[core].threads.iter().enumerate().find_map(|(s, th)| {
            th.as_ref()
                .filter(|th| {
                    th.fam_slot == fam_slot
                        && th.ordinal == next
                        && th.cause == Some(crate::kernel::WaitCause::Predecessor)
                })
                .map(|th| ThreadRef {
                    core,
                    slot: s as u16,
                    tid: th.tid,
                })
        });
        if let Some(s) = succ {
            self.wake(s);
        }
        self.check_done(core, fam_slot);
    }

    /// Pass the synchronization token on once this core's share is done.
    pub(crate) fn check_done(&mut self, core: CoreId, slot: usize) {
        let Some(e) = self.cores[core].fams[slot].as_mut() else { return };
        if !(e.created && e.job_done && e.all_created() && e.live == 0 && e.sync_in && !e.sync_sent) {
            return;
        }
        e.sync_sent = true;
        let (fid, place, parent) = (e.fid, e.place, e.parent_core);
        if core == place.last() {
            self.send_delegation(core, parent, fid, Payload::SyncDone { to_parent: true });
        } else {
            self.send_distribution(core, Direction::Next, place, fid, Payload::SyncDone { to_parent: false });
        }
    }

    /// Stop creation on this core and pass the break along `dir`.
    pub(crate) fn break_local(&mut self, core: CoreId, slot: usize, dir: Direction) {
        let e = self.cores[core].fams[slot].as_mut().unwrap();
        if e.broken {
            return;
        }
        e.broken = true;
        let (fid, place) = (e.fid, e.place);
        if e.created {
            self.trim(core, slot);
        }
        let dirs: &[Direction] = match dir {
            Direction::Loop => &[Direction::Next, Direction::Prev],
            Direction::Next => &[Direction::Next],
            Direction::Prev => &[Direction::Prev],
        };
        for &d in dirs {
            let has_neighbour = match d {
                Direction::Next => core < place.last(),
                _ => core > place.start,
            };
            if has_neighbour {
                self.send_distribution(core, d, place, fid, Payload::Break { dir: d });
            }
        }
        self.check_done(core, slot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(start: Word, limit: Word, step: Word) -> FamilyParams {
        FamilyParams {
            start,
            limit,
            step,
            block: 0,
        }
    }

    #[test]
    fn thread_counts() {
        assert_eq!(params(0, 1000, 1).thread_count(), Some(1000));
        assert_eq!(params(0, 0, 1).thread_count(), Some(0));
        let p = params(10, 0, -2);
        assert_eq!(p.thread_count(), Some(5));
        let idx: Vec<Word> = (0..5).map(|i| p.index(i)).collect();
        assert_eq!(idx, vec![10, 8, 6, 4, 2]);
        assert_eq!(params(0, 10, 3).thread_count(), Some(4));
        assert_eq!(params(0, 10, 0).thread_count(), None);
        assert_eq!(params(5, 1, 1).thread_count(), Some(0));
    }

    #[test]
    fn distribution_examples() {
        let sizes = |v: Vec<Range<u64>>| v.iter().map(|r| r.end - r.start).collect::<Vec<_>>();
        assert_eq!(sizes(distribute_threads(40, 4, false)), vec![10, 10, 10, 10]);
        assert_eq!(sizes(distribute_threads(5, 4, false)), vec![2, 1, 1, 1]);
        assert_eq!(sizes(distribute_threads(100, 4, true)), vec![100, 0, 0, 0]);
        assert_eq!(distribute_threads(5, 4, false)[1], 2..3);
    }

    #[test]
    fn balanced_examples() {
        assert_eq!(balanced_choice(&[3, 1, 2, 1]), 1);
        assert_eq!(balanced_choice(&[0]), 0);
        assert_eq!(balanced_choice(&[2, 2, 2, 0]), 3);
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink_size(0), 0);
        assert_eq!(shrink_size(1), 1);
        assert_eq!(shrink_size(3), 2);
        assert_eq!(shrink_size(7), 4);
        assert_eq!(shrink_size(8), 8);
    }

    proptest::proptest! {
        #[test]
        fn distribution_tiles(total in 0u64..5000, order in 0u32..8) {
            let cores = 1usize << order;
            let v = distribute_threads(total, cores, false);
            proptest::prop_assert_eq!(v.len(), cores);
            let mut next = 0;
            for r in &v {
                proptest::prop_assert_eq!(r.start, next);
                next = r.end;
            }
            proptest::prop_assert_eq!(next, total);
            let max = v.iter().map(|r| r.end - r.start).max().unwrap();
            let min = v.iter().map(|r| r.end - r.start).min().unwrap();
            proptest::prop_assert!(max - min <= 1);
        }
    }
}
