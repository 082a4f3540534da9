//! Resource manager: binary buddy allocation of core groups.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::place::{encode_place, CoreBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SepPolicy {
    /// At least the requested count, rounded up to a power of two.
    Minimum,
    /// The requested count, or the largest smaller group available.
    Maximum,
    /// Exactly the requested count rounded up.
    Exact,
    /// Whatever free group is smallest.
    AnySize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SepError {
    #[error("requested zero cores")]
    ZeroRequest,
    #[error("no free group satisfies {requested} cores under {policy:?}")]
    NoBlock { requested: usize, policy: SepPolicy },
    #[error("group {0} is not allocated")]
    NotAllocated(CoreBlock),
    #[error("placeid {0} does not name a group")]
    BadPlace(u64),
}

#[derive(Debug, Clone)]
pub struct BuddyState {
    num_cores: usize,
    /// Free block starts, indexed by log2(size).
    free: Vec<BTreeSet<usize>>,
    allocated: BTreeMap<usize, CoreBlock>,
}

impl BuddyState {
    pub fn new(num_cores: usize) -> Self {
        assert!(num_cores.is_power_of_two(), "core count must be a power of two");
        let orders = num_cores.trailing_zeros() as usize + 1;
        let mut free = vec![BTreeSet::new(); orders];
        free[orders - 1].insert(0);
        Self {
            num_cores,
            free,
            allocated: BTreeMap::new(),
        }
    }

    pub fn num_cores(&self) -> usize {
        self.num_cores
    }

    pub fn allocated(&self) -> impl Iterator<Item = &CoreBlock> {
        self.allocated.values()
    }

    /// Free blocks in address order.
    pub fn free_blocks(&self) -> Vec<CoreBlock> {
        let mut v: Vec<CoreBlock> = self
            .free
            .iter()
            .enumerate()
            .flat_map(|(order, set)| set.iter().map(move |&s| CoreBlock::new(s, 1 << order)))
            .collect();
        v.sort();
        v
    }

    /// Carve a block of exactly `size` out of the smallest sufficient free
    /// block, always keeping the lower half.
    fn take(&mut self, size: usize) -> Option<CoreBlock> {
        let want = size.trailing_zeros() as usize;
        let order = (want..self.free.len()).find(|&o| !self.free[o].is_empty())?;
        let start = *self.free[order].iter().next().unwrap();
        self.free[order].remove(&start);
        for o in (want..order).rev() {
            self.free[o].insert(start + (1 << o));
        }
        let block = CoreBlock::new(start, size);
        self.allocated.insert(start, block);
        Some(block)
    }

    pub fn alloc(&mut self, requested: usize, policy: SepPolicy) -> Result<CoreBlock, SepError> {
        if requested == 0 {
            return Err(SepError::ZeroRequest);
        }
        let fail = SepError::NoBlock { requested, policy };
        let r = requested.checked_next_power_of_two().ok_or(fail.clone())?;
        let got = match policy {
            SepPolicy::Exact | SepPolicy::Minimum => {
                if r > self.num_cores {
                    None
                } else {
                    self.take(r)
                }
            }
            SepPolicy::Maximum => {
                let mut size = r.min(self.num_cores);
                loop {
                    if let Some(b) = self.take(size) {
                        break Some(b);
                    }
                    if size == 1 {
                        break None;
                    }
                    size /= 2;
                }
            }
            SepPolicy::AnySize => {
                let order = (0..self.free.len()).find(|&o| !self.free[o].is_empty());
                order.and_then(|o| self.take(1 << o))
            }
        };
        got.ok_or(fail)
    }

    /// Like [`alloc`](Self::alloc) but returns the encoded placeid.
    /// A single core 0 cannot be encoded, so it goes back to the pool.
    pub fn alloc_placeid(&mut self, requested: usize, policy: SepPolicy) -> Result<u64, SepError> {
        let block = self.alloc(requested, policy)?;
        match encode_place(block.start, block.size) {
            Ok(id) => Ok(id),
            Err(_) => {
                self.free(block).expect("just allocated");
                Err(SepError::NoBlock { requested, policy })
            }
        }
    }

    pub fn free(&mut self, block: CoreBlock) -> Result<(), SepError> {
        match self.allocated.get(&block.start) {
            Some(b) if *b == block => {}
            _ => return Err(SepError::NotAllocated(block)),
        }
        self.allocated.remove(&block.start);
        let mut start = block.start;
        let mut order = block.size.trailing_zeros() as usize;
        while order + 1 < self.free.len() {
            let buddy = start ^ (1 << order);
            if !self.free[order].remove(&buddy) {
                break;
            }
            start = start.min(buddy);
            order += 1;
        }
        self.free[order].insert(start);
        Ok(())
    }

    pub fn free_placeid(&mut self, placeid: u64) -> Result<(), SepError> {
        if placeid < 2 {
            return Err(SepError::BadPlace(placeid));
        }
        let start = ((placeid & (placeid - 1)) >> 1) as usize;
        let size = (placeid & placeid.wrapping_neg()) as usize;
        self.free(CoreBlock::new(start, size))
    }

    /// Blocks aligned, disjoint, and together tiling every core.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut all: Vec<CoreBlock> = self.free_blocks();
        all.extend(self.allocated.values().copied());
        all.sort();
        let mut next = 0;
        for b in &all {
            if !b.is_aligned() {
                return Err(format!("block {b} is misaligned"));
            }
            if b.start != next {
                return Err(format!("block {b} does not start at {next}"));
            }
            next = b.end();
        }
        if next != self.num_cores {
            return Err(format!("blocks cover {next} of {} cores", self.num_cores));
        }
        for (order, set) in self.free.iter().enumerate() {
            for &s in set {
                let buddy = s ^ (1 << order);
                if order + 1 < self.free.len() && set.contains(&buddy) {
                    return Err(format!("free buddies {s} and {buddy} were not merged"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(start: usize, size: usize) -> CoreBlock {
        CoreBlock::new(start, size)
    }

    #[test]
    fn exact_one_on_eight_splits_down() {
        let mut s = BuddyState::new(8);
        assert_eq!(s.alloc(1, SepPolicy::Exact), Ok(b(0, 1)));
        assert_eq!(s.free_blocks(), vec![b(1, 1), b(2, 2), b(4, 4)]);
        s.check_invariants().unwrap();
    }

    #[test]
    fn minimum_rounds_up() {
        let mut s = BuddyState::new(8);
        assert_eq!(s.alloc(3, SepPolicy::Minimum), Ok(b(0, 4)));
        assert_eq!(s.alloc(5, SepPolicy::Minimum), Err(SepError::NoBlock { requested: 5, policy: SepPolicy::Minimum }));
    }

    #[test]
    fn maximum_descends_and_fails_when_full() {
        let mut s = BuddyState::new(8);
        s.alloc(4, SepPolicy::Exact).unwrap();
        assert_eq!(s.alloc(8, SepPolicy::Maximum), Ok(b(4, 4)));
        assert!(s.alloc(1, SepPolicy::Maximum).is_err());
    }

    #[test]
    fn anysize_takes_smallest_free() {
        let mut s = BuddyState::new(8);
        s.alloc(1, SepPolicy::Exact).unwrap();
        assert_eq!(s.alloc(4, SepPolicy::AnySize), Ok(b(1, 1)));
        assert_eq!(s.alloc(1, SepPolicy::AnySize), Ok(b(2, 2)));
    }

    #[test]
    fn free_coalesces_and_reuses_lowest() {
        let mut s = BuddyState::new(8);
        let a = s.alloc(4, SepPolicy::Exact).unwrap();
        let c = s.alloc(4, SepPolicy::Exact).unwrap();
        s.free(a).unwrap();
        assert_eq!(s.alloc(4, SepPolicy::Exact), Ok(a));
        s.free(a).unwrap();
        s.free(c).unwrap();
        assert_eq!(s.free_blocks(), vec![b(0, 8)]);
        assert_eq!(s.free(c), Err(SepError::NotAllocated(c)));
    }

    #[test]
    fn placeid_interface() {
        let mut s = BuddyState::new(8);
        assert!(s.alloc_placeid(1, SepPolicy::Exact).is_err());
        assert_eq!(s.free_blocks(), vec![b(0, 8)]);
        s.alloc(1, SepPolicy::Exact).unwrap();
        assert_eq!(s.alloc_placeid(1, SepPolicy::Exact), Ok(3));
        assert_eq!(s.alloc_placeid(4, SepPolicy::Exact), Ok(12));
        s.free_placeid(12).unwrap();
        assert_eq!(s.free_placeid(12), Err(SepError::NotAllocated(b(4, 4))));
        assert_eq!(s.free_placeid(1), Err(SepError::BadPlace(1)));
    }

    /// Exhaustive oracle: an exact request fits iff some free block is large enough.
    fn oracle_fits(s: &BuddyState, n: usize) -> bool {
        let r = n.next_power_of_two();
        s.free_blocks().iter().any(|blk| blk.size >= r)
    }

    proptest! {
        #[test]
        fn exact_matches_oracle(ops in proptest::collection::vec((any::<bool>(), 1usize..17, any::<prop::sample::Index>()), 1..60)) {
            let mut s = BuddyState::new(16);
            let mut live = Vec::new();
            for (alloc, n, pick) in ops {
                if alloc || live.is_empty() {
                    let expect = oracle_fits(&s, n);
                    let got = s.alloc(n, SepPolicy::Exact);
                    prop_assert_eq!(got.is_ok(), expect);
                    if let Ok(blk) = got { live.push(blk); }
                } else {
                    let blk = live.swap_remove(pick.index(live.len()));
                    s.free(blk).unwrap();
                }
                s.check_invariants().unwrap();
            }
        }
    }
}
