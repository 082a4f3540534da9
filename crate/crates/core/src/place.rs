//! Place identifiers and distribution-network delay arithmetic.
//!
//! An explicit place is a power-of-two group of adjacent cores whose first
//! core is a multiple of the group size. Both facts are packed into one
//! integer: `placeid = (start << 1) | size`. The lowest set bit is the
//! size and the remaining bits, shifted right once, are the start.
//! Identifiers 0 and 1 are reserved for the local and default places.

use thiserror::Error;

use crate::config::ChipConfig;
use crate::Cycle;

pub const LOCAL_PLACE: u64 = 0;
pub const DEFAULT_PLACE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlaceSpec {
    /// The core of the creating thread.
    Local,
    /// The place the creating thread's family runs on.
    Default,
    Explicit(CoreBlock),
}

/// A contiguous, size-aligned group of cores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoreBlock {
    pub start: usize,
    pub size: usize,
}

impl CoreBlock {
    pub fn new(start: usize, size: usize) -> Self {
        Self { start, size }
    }

    pub fn end(&self) -> usize {
        self.start + self.size
    }

    pub fn contains(&self, core: usize) -> bool {
        core >= self.start && core < self.end()
    }

    pub fn last(&self) -> usize {
        self.end() - 1
    }

    pub fn is_aligned(&self) -> bool {
        self.size.is_power_of_two() && self.start % self.size == 0
    }

    pub fn cores(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

impl std::fmt::Display for CoreBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}+{}", self.start, self.size)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlaceError {
    #[error("place {placeid} ({block}) exceeds the {num_cores}-core chip")]
    OutOfRange {
        placeid: u64,
        block: CoreBlock,
        num_cores: usize,
    },
    #[error("place size {0} is not a power of two")]
    SizeNotPowerOfTwo(usize),
    #[error("start core {start} is not a multiple of the place size {size}")]
    Misaligned { start: usize, size: usize },
    #[error("core 0 with size 1 encodes to 1, which is reserved for the default place")]
    Reserved,
    #[error("core count must be at least 1")]
    EmptyChain,
}

pub fn decode_place(placeid: u64, cfg: &ChipConfig) -> Result<PlaceSpec, PlaceError> {
    match placeid {
        LOCAL_PLACE => Ok(PlaceSpec::Local),
        DEFAULT_PLACE => Ok(PlaceSpec::Default),
        p => {
            let start = ((p & (p - 1)) >> 1) as usize;
            let size = (p & p.wrapping_neg()) as usize;
            let block = CoreBlock { start, size };
            if block.start.saturating_add(block.size) > cfg.num_cores {
                return Err(PlaceError::OutOfRange {
                    placeid,
                    block,
                    num_cores: cfg.num_cores,
                });
            }
            Ok(PlaceSpec::Explicit(block))
        }
    }
}

pub fn encode_place(start: usize, size: usize) -> Result<u64, PlaceError> {
    if !size.is_power_of_two() {
        return Err(PlaceError::SizeNotPowerOfTwo(size));
    }
    if start % size != 0 {
        return Err(PlaceError::Misaligned { start, size });
    }
    let id = ((start as u64) << 1) | size as u64;
    if id == DEFAULT_PLACE {
        return Err(PlaceError::Reserved);
    }
    Ok(id)
}

/// Cycles for a message to sweep `core_count` cores of the distribution
/// chain and return.
pub fn round_trip_delay(core_count: usize, cfg: &ChipConfig) -> Result<Cycle, PlaceError> {
    if core_count < 1 {
        return Err(PlaceError::EmptyChain);
    }
    Ok(2 * cfg.distribution_hop_cycles * core_count as Cycle)
}
