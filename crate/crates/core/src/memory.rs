//! Flat shared memory with latency classes.
//!
//! There is one memory image. Each core keeps a bounded set of recently
//! touched addresses standing in for its L1, and each group of four cores
//! shares a larger one standing in for the L2. Both evict oldest first.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use crate::config::ChipConfig;
use crate::{CoreId, Cycle, Fid, Tid, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatClass {
    L1,
    L2,
    Offchip,
    Fpu,
}

impl LatClass {
    pub fn name(self) -> &'static str {
        match self {
            LatClass::L1 => "l1",
            LatClass::L2 => "l2",
            LatClass::Offchip => "off",
            LatClass::Fpu => "fpu",
        }
    }

    pub fn from_name(s: &str) -> Option<LatClass> {
        [LatClass::L1, LatClass::L2, LatClass::Offchip, LatClass::Fpu]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemKind {
    Load,
    Store,
}

impl fmt::Display for MemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemKind::Load => "ld",
            MemKind::Store => "st",
        })
    }
}

/// One memory operation as seen by the consistency checker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemOpRecord {
    /// Global issue order.
    pub order: u64,
    pub issue: Cycle,
    pub complete: Cycle,
    pub core: CoreId,
    pub tid: Tid,
    pub fid: Fid,
    pub kind: MemKind,
    pub addr: Word,
    pub value: Word,
}

#[derive(Debug, Clone)]
struct RecentSet {
    capacity: usize,
    order: VecDeque<Word>,
    members: HashSet<Word>,
}

impl RecentSet {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            order: VecDeque::new(),
            members: HashSet::new(),
        }
    }

    fn contains(&self, addr: Word) -> bool {
        self.members.contains(&addr)
    }

    fn insert(&mut self, addr: Word) {
        if self.members.insert(addr) {
            self.order.push_back(addr);
            if self.order.len() > self.capacity {
                let old = self.order.pop_front().unwrap();
                self.members.remove(&old);
            }
        }
    }

    fn len(&self) -> usize {
        self.order.len()
    }
}

#[derive(Debug, Clone)]
pub struct MemoryState {
    words: HashMap<Word, Word>,
    l1: Vec<RecentSet>,
    l2: Vec<RecentSet>,
    l1_lat: Cycle,
    l2_lat: Cycle,
    offchip_lat: Cycle,
}

impl MemoryState {
    pub fn new(cfg: &ChipConfig) -> Self {
        let groups = cfg.num_cores.div_ceil(4);
        Self {
            words: HashMap::new(),
            l1: (0..cfg.num_cores).map(|_| RecentSet::new(cfg.l1_capacity)).collect(),
            l2: (0..groups).map(|_| RecentSet::new(cfg.l2_capacity)).collect(),
            l1_lat: cfg.latency.l1_hit,
            l2_lat: cfg.latency.l2_hit,
            offchip_lat: cfg.latency.offchip,
        }
    }

    /// Unwritten addresses read as zero.
    pub fn read(&self, addr: Word) -> Word {
        self.words.get(&addr).copied().unwrap_or(0)
    }

    pub fn write(&mut self, addr: Word, value: Word) {
        self.words.insert(addr, value);
    }

    /// Classify an access from `core` and record it in the recent sets.
    pub fn latency_class(&mut self, core: CoreId, addr: Word) -> (LatClass, Cycle) {
        let group = core / 4;
        let class = if self.l1[core].contains(addr) {
            LatClass::L1
        } else if self.l2[group].contains(addr) {
            LatClass::L2
        } else {
            LatClass::Offchip
        };
        self.l1[core].insert(addr);
        self.l2[group].insert(addr);
        let lat = match class {
            LatClass::L1 => self.l1_lat,
            LatClass::L2 => self.l2_lat,
            _ => self.offchip_lat,
        };
        (class, lat)
    }

    pub fn l1_len(&self, core: CoreId) -> usize {
        self.l1[core].len()
    }

    pub fn l2_len(&self, group: usize) -> usize {
        self.l2[group].len()
    }

    /// Snapshot of every written word, sorted by address.
    pub fn snapshot(&self) -> Vec<(Word, Word)> {
        let mut v: Vec<_> = self.words.iter().map(|(&a, &w)| (a, w)).collect();
        v.sort_unstable();
        v
    }
}

/// One FPU per pair of cores, accepting one operation per cycle.
#[derive(Debug, Clone)]
pub struct FpuPorts {
    next_free: Vec<Cycle>,
    latency: Cycle,
}

impl FpuPorts {
    pub fn new(cfg: &ChipConfig) -> Self {
        Self {
            next_free: vec![0; cfg.num_cores.div_ceil(2)],
            latency: cfg.latency.fpu_op,
        }
    }

    /// Queue an operation from `core` at `now`; returns its completion cycle.
    pub fn issue(&mut self, core: CoreId, now: Cycle) -> Cycle {
        let port = &mut self.next_free[core / 2];
        let start = now.max(*port);
        *port = start + 1;
        start + self.latency
    }
}
