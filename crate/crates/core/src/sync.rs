//! Synchronizing register storage.
//!
//! Every register is an I-structure cell: empty or full. Reading an empty
//! cell queues the reader and reports a suspension; writing fills the cell
//! and hands back every queued reader in arrival order. A core's register
//! file is carved into windows, one per thread, split into the four
//! classes (globals, shareds, locals, dependents).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::{CoreId, Tid, Word};

/// A reference to a thread-table slot and the thread incarnation in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadRef {
    pub core: CoreId,
    pub slot: u16,
    pub tid: Tid,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncCell {
    value: Option<Word>,
    waiters: VecDeque<ThreadRef>,
}

impl SyncCell {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full(value: Word) -> Self {
        Self {
            value: Some(value),
            waiters: VecDeque::new(),
        }
    }

    pub fn is_full(&self) -> bool {
        self.value.is_some()
    }

    pub fn value(&self) -> Option<Word> {
        self.value
    }

    pub fn waiters(&self) -> impl Iterator<Item = &ThreadRef> {
        self.waiters.iter()
    }

    /// Full: the value. Empty: queue `reader` and report suspension.
    pub fn read(&mut self, reader: ThreadRef) -> ReadOutcome {
        match self.value {
            Some(v) => ReadOutcome::Value(v),
            None => {
                self.waiters.push_back(reader);
                ReadOutcome::Suspended
            }
        }
    }

    /// Fill the cell and release every waiter, oldest first.
    pub fn write(&mut self, value: Word) -> Vec<ThreadRef> {
        self.value = Some(value);
        self.waiters.drain(..).collect()
    }

    /// Return the cell to the empty state, e.g. ahead of a split-phase
    /// completion. Waiters stay queued.
    pub fn clear(&mut self) {
        self.value = None;
    }

    pub fn reset(&mut self) {
        self.value = None;
        self.waiters.clear();
    }

    pub fn remove_waiter(&mut self, who: &ThreadRef) {
        self.waiters.retain(|w| w != who);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    Value(Word),
    Suspended,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("register index {index} outside a file of {len}")]
    OutOfRange { index: u32, len: u32 },
    #[error("register file exhausted: {requested} cells requested, largest free run is {available}")]
    Insufficient { requested: u32, available: u32 },
    #[error("trim asks to keep {used} {class} registers but only {allocated} are allocated")]
    TrimExceedsAllocation {
        class: &'static str,
        used: u32,
        allocated: u32,
    },
}

/// Contiguous run of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct RegRange {
    pub base: u32,
    pub count: u32,
}

impl RegRange {
    pub fn new(base: u32, count: u32) -> Self {
        Self { base, count }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn end(&self) -> u32 {
        self.base + self.count
    }

    pub fn cell(&self, i: u32) -> Option<u32> {
        (i < self.count).then(|| self.base + i)
    }

    /// Split `n` cells off the front.
    pub fn take_front(&mut self, n: u32) -> Option<RegRange> {
        if n > self.count {
            return None;
        }
        let head = RegRange::new(self.base, n);
        self.base += n;
        self.count -= n;
        Some(head)
    }

    pub fn overlaps(&self, other: &RegRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.base < other.end() && other.base < self.end()
    }
}

/// Register counts per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ClassCounts {
    pub globals: u32,
    pub shareds: u32,
    pub locals: u32,
    pub dependents: u32,
}

impl ClassCounts {
    pub fn new(globals: u32, shareds: u32, locals: u32, dependents: u32) -> Self {
        Self {
            globals,
            shareds,
            locals,
            dependents,
        }
    }

    pub fn total(&self) -> u32 {
        self.globals + self.shareds + self.locals + self.dependents
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegisterWindow {
    pub globals: RegRange,
    pub shareds: RegRange,
    pub locals: RegRange,
    pub dependents: RegRange,
}

impl RegisterWindow {
    pub fn counts(&self) -> ClassCounts {
        ClassCounts::new(
            self.globals.count,
            self.shareds.count,
            self.locals.count,
            self.dependents.count,
        )
    }
}

/// One core's register file with a first-fit range allocator.
#[derive(Debug, Clone)]
pub struct RegisterFile {
    cells: Vec<SyncCell>,
    /// Free runs keyed by base, always coalesced.
    free: BTreeMap<u32, u32>,
    free_count: u32,
}

impl RegisterFile {
    pub fn new(len: usize) -> Self {
        let len = u32::try_from(len).expect("register file too large");
        let mut free = BTreeMap::new();
        if len > 0 {
            free.insert(0, len);
        }
        Self {
            cells: vec![SyncCell::empty(); len as usize],
            free,
            free_count: len,
        }
    }

    pub fn len(&self) -> u32 {
        self.cells.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn free_count(&self) -> u32 {
        self.free_count
    }

    pub fn allocated_count(&self) -> u32 {
        self.len() - self.free_count
    }

    pub fn largest_free_run(&self) -> u32 {
        self.free.values().copied().max().unwrap_or(0)
    }

    fn check(&self, index: u32) -> Result<usize, SyncError> {
        if index < self.len() {
            Ok(index as usize)
        } else {
            Err(SyncError::OutOfRange {
                index,
                len: self.len(),
            })
        }
    }

    pub fn cell(&self, index: u32) -> Result<&SyncCell, SyncError> {
        let i = self.check(index)?;
        Ok(&self.cells[i])
    }

    pub fn cell_mut(&mut self, index: u32) -> Result<&mut SyncCell, SyncError> {
        let i = self.check(index)?;
        Ok(&mut self.cells[i])
    }

    pub fn read_cell(&mut self, index: u32, reader: ThreadRef) -> Result<ReadOutcome, SyncError> {
        Ok(self.cell_mut(index)?.read(reader))
    }

    pub fn write_cell(&mut self, index: u32, value: Word) -> Result<Vec<ThreadRef>, SyncError> {
        Ok(self.cell_mut(index)?.write(value))
    }

    /// Reserve `len` contiguous cells, lowest address first. The cells are
    /// reset to empty.
    pub fn alloc_range(&mut self, len: u32) -> Result<RegRange, SyncError> {
        if len == 0 {
            return Ok(RegRange::default());
        }
        let found = self
            .free
            .iter()
            .find(|(_, &run)| run >= len)
            .map(|(&base, &run)| (base, run));
        let Some((base, run)) = found else {
            return Err(SyncError::Insufficient {
                requested: len,
                available: self.largest_free_run(),
            });
        };
        self.free.remove(&base);
        if run > len {
            self.free.insert(base + len, run - len);
        }
        self.free_count -= len;
        let range = RegRange::new(base, len);
        self.reset_range(range);
        Ok(range)
    }

    /// Return a run to the pool, merging with free neighbours.
    pub fn free_range(&mut self, range: RegRange) {
        if range.is_empty() {
            return;
        }
        debug_assert!(range.end() <= self.len());
        debug_assert!(
            !self.free.iter().any(|(&b, &l)| range.overlaps(&RegRange::new(b, l))),
            "double free of registers {range:?}"
        );
        self.reset_range(range);
        let mut base = range.base;
        let mut len = range.count;
        if let Some((&prev, &prev_len)) = self.free.range(..base).next_back() {
            if prev + prev_len == base {
                self.free.remove(&prev);
                base = prev;
                len += prev_len;
            }
        }
        if let Some(&next_len) = self.free.get(&(base + len)) {
            self.free.remove(&(base + len));
            len += next_len;
        }
        self.free.insert(base, len);
        self.free_count += range.count;
    }

    fn reset_range(&mut self, range: RegRange) {
        for i in range.base..range.end() {
            self.cells[i as usize].reset();
        }
    }

    /// Allocate a thread window. Without a predecessor all four classes
    /// are fresh and laid out `[G][D][S][L]`; with one, only shareds and
    /// locals are fresh, globals are inherited and dependents alias the
    /// predecessor's shareds.
    pub fn alloc_window(
        &mut self,
        counts: ClassCounts,
        predecessor: Option<&RegisterWindow>,
    ) -> Result<RegisterWindow, SyncError> {
        match predecessor {
            None => {
                let mut all = self.alloc_range(counts.total())?;
                let globals = all.take_front(counts.globals).unwrap();
                let dependents = all.take_front(counts.dependents).unwrap();
                let shareds = all.take_front(counts.shareds).unwrap();
                let locals = all.take_front(counts.locals).unwrap();
                Ok(RegisterWindow {
                    globals,
                    shareds,
                    locals,
                    dependents,
                })
            }
            Some(pred) => {
                let mut own = self.alloc_range(counts.shareds + counts.locals)?;
                let shareds = own.take_front(counts.shareds).unwrap();
                let locals = own.take_front(counts.locals).unwrap();
                Ok(RegisterWindow {
                    globals: pred.globals,
                    shareds,
                    locals,
                    dependents: pred.shareds,
                })
            }
        }
    }

    /// Shrink every class of `window` to `used` and return the surplus
    /// cells to the pool. Callers pass the full count for aliased classes.
    pub fn trim_window(
        &mut self,
        window: &mut RegisterWindow,
        used: ClassCounts,
    ) -> Result<u32, SyncError> {
        let plan = [
            ("globals", window.globals, used.globals),
            ("shareds", window.shareds, used.shareds),
            ("locals", window.locals, used.locals),
            ("dependents", window.dependents, used.dependents),
        ];
        for (class, range, keep) in plan {
            if keep > range.count {
                return Err(SyncError::TrimExceedsAllocation {
                    class,
                    used: keep,
                    allocated: range.count,
                });
            }
        }
        let mut freed = 0;
        for (range, keep) in [
            (&mut window.globals, used.globals),
            (&mut window.shareds, used.shareds),
            (&mut window.locals, used.locals),
            (&mut window.dependents, used.dependents),
        ] {
            let surplus = RegRange::new(range.base + keep, range.count - keep);
            self.free_range(surplus);
            freed += surplus.count;
            range.count = keep;
        }
        Ok(freed)
    }
}

impl fmt::Display for RegRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}..r{}", self.base, self.end())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(tid: Tid) -> ThreadRef {
        ThreadRef {
            core: 0,
            slot: tid as u16,
            tid,
        }
    }

    #[test]
    fn full_read_keeps_state() {
        let mut rf = RegisterFile::new(4);
        rf.write_cell(0, 7).unwrap();
        assert_eq!(rf.read_cell(0, t(1)).unwrap(), ReadOutcome::Value(7));
        assert_eq!(rf.cell(0).unwrap().value(), Some(7));
        assert_eq!(rf.cell(0).unwrap().waiters().count(), 0);
    }

    #[test]
    fn empty_read_suspends_in_arrival_order() {
        let mut rf = RegisterFile::new(4);
        assert_eq!(rf.read_cell(1, t(3)).unwrap(), ReadOutcome::Suspended);
        assert_eq!(rf.read_cell(1, t(8)).unwrap(), ReadOutcome::Suspended);
        let q: Vec<_> = rf.cell(1).unwrap().waiters().map(|w| w.tid).collect();
        assert_eq!(q, vec![3, 8]);
        assert_eq!(rf.write_cell(1, 5).unwrap(), vec![t(3), t(8)]);
        assert_eq!(rf.cell(1).unwrap().value(), Some(5));
        assert_eq!(rf.cell(1).unwrap().waiters().count(), 0);
    }

    #[test]
    fn writes_without_waiters_and_overwrites() {
        let mut rf = RegisterFile::new(2);
        assert!(rf.write_cell(0, 5).unwrap().is_empty());
        assert!(rf.write_cell(0, 9).unwrap().is_empty());
        assert_eq!(rf.cell(0).unwrap().value(), Some(9));
    }

    #[test]
    fn out_of_range_index() {
        let mut rf = RegisterFile::new(2);
        assert!(matches!(rf.read_cell(2, t(0)), Err(SyncError::OutOfRange { .. })));
        assert!(matches!(rf.write_cell(9, 1), Err(SyncError::OutOfRange { .. })));
    }

    #[test]
    fn first_and_successor_windows() {
        let mut rf = RegisterFile::new(64);
        let counts = ClassCounts::new(2, 1, 4, 1);
        let first = rf.alloc_window(counts, None).unwrap();
        assert_eq!(rf.allocated_count(), 8);
        let second = rf.alloc_window(counts, Some(&first)).unwrap();
        assert_eq!(rf.allocated_count(), 13);
        assert_eq!(second.dependents, first.shareds);
        assert_eq!(second.globals, first.globals);
        assert!(!second.shareds.overlaps(&first.shareds));
        assert!(!second.locals.overlaps(&first.locals));
    }

    #[test]
    fn window_cells_start_empty() {
        let mut rf = RegisterFile::new(8);
        for i in 0..8 {
            rf.write_cell(i, 1).unwrap();
        }
        let r = rf.alloc_range(8).unwrap();
        rf.free_range(r);
        let w = rf.alloc_window(ClassCounts::new(1, 1, 1, 1), None).unwrap();
        for range in [w.globals, w.shareds, w.locals, w.dependents] {
            assert!(!rf.cell(range.base).unwrap().is_full());
        }
    }

    #[test]
    fn insufficient_registers() {
        let mut rf = RegisterFile::new(6);
        let err = rf.alloc_window(ClassCounts::new(2, 1, 4, 1), None).unwrap_err();
        assert!(matches!(err, SyncError::Insufficient { requested: 8, .. }));
    }

    #[test]
    fn trim_examples() {
        let mut rf = RegisterFile::new(64);
        let mut w = RegisterWindow {
            locals: rf.alloc_range(31).unwrap(),
            ..Default::default()
        };
        assert_eq!(rf.trim_window(&mut w, ClassCounts::new(0, 0, 15, 0)), Ok(16));
        assert_eq!(rf.allocated_count(), 15);
        assert_eq!(rf.trim_window(&mut w, ClassCounts::new(0, 0, 15, 0)), Ok(0));

        let mut w = RegisterWindow {
            locals: rf.alloc_range(31).unwrap(),
            ..Default::default()
        };
        assert_eq!(rf.trim_window(&mut w, ClassCounts::new(0, 0, 30, 0)), Ok(1));
        assert!(matches!(
            rf.trim_window(&mut w, ClassCounts::new(0, 0, 31, 0)),
            Err(SyncError::TrimExceedsAllocation { .. })
        ));
    }

    #[test]
    fn frees_coalesce() {
        let mut rf = RegisterFile::new(12);
        let a = rf.alloc_range(4).unwrap();
        let b = rf.alloc_range(4).unwrap();
        let c = rf.alloc_range(4).unwrap();
        rf.free_range(a);
        rf.free_range(c);
        assert_eq!(rf.largest_free_run(), 4);
        rf.free_range(b);
        assert_eq!(rf.largest_free_run(), 12);
        assert_eq!(rf.free_count(), 12);
    }

    proptest! {
        /// Free plus allocated always tiles the file, and live runs never overlap.
        #[test]
        fn conservation(ops in proptest::collection::vec((any::<bool>(), 1u32..9, any::<prop::sample::Index>()), 1..200)) {
            let mut rf = RegisterFile::new(48);
            let mut live: Vec<RegRange> = Vec::new();
            for (alloc, len, pick) in ops {
                if alloc || live.is_empty() {
                    if let Ok(r) = rf.alloc_range(len) {
                        for other in &live {
                            prop_assert!(!r.overlaps(other));
                        }
                        live.push(r);
                    }
                } else {
                    let r = live.swap_remove(pick.index(live.len()));
                    rf.free_range(r);
                }
                let used: u32 = live.iter().map(|r| r.count).sum();
                prop_assert_eq!(used + rf.free_count(), rf.len());
            }
        }
    }
}
