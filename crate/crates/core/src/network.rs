//! On-chip messages and the two networks that carry them.
//!
//! The delegation network connects every pair of cores with a fixed hop
//! cost. The distribution network links each core to its neighbours in
//! index order; a message may only step within the place it belongs to.

use std::fmt;

use thiserror::Error;

use crate::config::ChipConfig;
use crate::isa::{AllocMode, AllocStrategy, FamilyParam};
use crate::place::CoreBlock;
use crate::sep::SepPolicy;
use crate::sync::ThreadRef;
use crate::{CoreId, Cycle, Fid, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgKind {
    AllocReq,
    AllocForward,
    AllocAck,
    AllocFail,
    Configure,
    Create,
    CreateAck,
    RegWrite,
    RegRead,
    RegReadReply,
    SyncDone,
    Release,
    Break,
    SepCall,
    SepReply,
}

impl MsgKind {
    pub const ALL: [MsgKind; 15] = [
        MsgKind::AllocReq,
        MsgKind::AllocForward,
        MsgKind::AllocAck,
        MsgKind::AllocFail,
        MsgKind::Configure,
        MsgKind::Create,
        MsgKind::CreateAck,
        MsgKind::RegWrite,
        MsgKind::RegRead,
        MsgKind::RegReadReply,
        MsgKind::SyncDone,
        MsgKind::Release,
        MsgKind::Break,
        MsgKind::SepCall,
        MsgKind::SepReply,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::AllocReq => "AllocReq",
            MsgKind::AllocForward => "AllocForward",
            MsgKind::AllocAck => "AllocAck",
            MsgKind::AllocFail => "AllocFail",
            MsgKind::Configure => "Configure",
            MsgKind::Create => "Create",
            MsgKind::CreateAck => "CreateAck",
            MsgKind::RegWrite => "RegWrite",
            MsgKind::RegRead => "RegRead",
            MsgKind::RegReadReply => "RegReadReply",
            MsgKind::SyncDone => "SyncDone",
            MsgKind::Release => "Release",
            MsgKind::Break => "Break",
            MsgKind::SepCall => "SepCall",
            MsgKind::SepReply => "SepReply",
        }
    }

    pub fn from_name(s: &str) -> Option<MsgKind> {
        MsgKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepPhase {
    /// Checking and tentatively reserving, first core to last.
    Forward,
    /// Heading back; cores below `keep` commit, the rest release.
    Return { keep: usize },
    /// Heading back releasing everything.
    Abort,
}

/// State carried by an allocation request as it walks the place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocSweep {
    pub fid: Fid,
    pub parent_core: CoreId,
    pub place: CoreBlock,
    pub mode: AllocMode,
    pub strategy: AllocStrategy,
    pub phase: SweepPhase,
    /// Live family contexts per visited core (balanced strategy).
    pub loads: Vec<usize>,
    /// Place index picked by the balanced strategy.
    pub chosen: Option<usize>,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegTarget {
    Global,
    Dependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepOp {
    Alloc { count: Word, policy: SepPolicy },
    Free { placeid: Word },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    AllocReq(Box<AllocSweep>),
    AllocForward(Box<AllocSweep>),
    AllocAck { place: CoreBlock },
    AllocFail,
    Configure { param: FamilyParam, value: Word },
    Create { thread: usize, place: CoreBlock, parent_core: CoreId },
    CreateAck,
    RegWrite { target: RegTarget, slot: u16, value: Word },
    RegRead { slot: u16, reply_core: CoreId, cell: u32 },
    RegReadReply { cell: u32, value: Word },
    SyncDone { to_parent: bool },
    Release,
    Break { dir: Direction },
    SepCall { op: SepOp, requester: ThreadRef, cell: Option<u32> },
    SepReply { requester: ThreadRef, cell: Option<u32>, value: Word, ok: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub src: CoreId,
    pub dst: CoreId,
    pub fid: Fid,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match &self.payload {
            Payload::AllocReq(_) => MsgKind::AllocReq,
            Payload::AllocForward(_) => MsgKind::AllocForward,
            Payload::AllocAck { .. } => MsgKind::AllocAck,
            Payload::AllocFail => MsgKind::AllocFail,
            Payload::Configure { .. } => MsgKind::Configure,
            Payload::Create { .. } => MsgKind::Create,
            Payload::CreateAck => MsgKind::CreateAck,
            Payload::RegWrite { .. } => MsgKind::RegWrite,
            Payload::RegRead { .. } => MsgKind::RegRead,
            Payload::RegReadReply { .. } => MsgKind::RegReadReply,
            Payload::SyncDone { .. } => MsgKind::SyncDone,
            Payload::Release => MsgKind::Release,
            Payload::Break { .. } => MsgKind::Break,
            Payload::SepCall { .. } => MsgKind::SepCall,
            Payload::SepReply { .. } => MsgKind::SepReply,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Next,
    Prev,
    /// Through the core's own port and back.
    Loop,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Next => "next",
            Direction::Prev => "prev",
            Direction::Loop => "loop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("core {0} does not exist")]
    NoSuchCore(CoreId),
    #[error("core {core} has no {dir} neighbour inside place {place}")]
    PastPlace {
        core: CoreId,
        dir: &'static str,
        place: CoreBlock,
    },
}

/// Hop latencies and addressing rules.
#[derive(Debug, Clone, Copy)]
pub struct Network {
    pub num_cores: usize,
    pub delegation_hop: Cycle,
    pub distribution_hop: Cycle,
}

impl Network {
    pub fn new(cfg: &ChipConfig) -> Self {
        Self {
            num_cores: cfg.num_cores,
            delegation_hop: cfg.delegation_hop_cycles,
            distribution_hop: cfg.distribution_hop_cycles,
        }
    }

    /// Delivery cycle of a delegation message sent at `now`.
    pub fn delegation(&self, now: Cycle, msg: &Message) -> Result<Cycle, NetError> {
        if msg.dst >= self.num_cores {
            return Err(NetError::NoSuchCore(msg.dst));
        }
        Ok(now + self.delegation_hop)
    }

    /// Destination and delivery cycle of one distribution hop from `src`.
    pub fn distribution(
        &self,
        now: Cycle,
        src: CoreId,
        dir: Direction,
        place: CoreBlock,
    ) -> Result<(CoreId, Cycle), NetError> {
        if !place.contains(src) {
            return Err(NetError::PastPlace {
                core: src,
                dir: dir.name(),
                place,
            });
        }
        let dst = match dir {
            Direction::Next if src + 1 < place.end() => src + 1,
            Direction::Prev if src > place.start => src - 1,
            Direction::Loop => src,
            _ => {
                return Err(NetError::PastPlace {
                    core: src,
                    dir: dir.name(),
                    place,
                })
            }
        };
        Ok((dst, now + self.distribution_hop))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::new(&ChipConfig::with_cores(8))
    }

    fn msg(dst: CoreId) -> Message {
        Message {
            src: 0,
            dst,
            fid: 1,
            payload: Payload::CreateAck,
        }
    }

    #[test]
    fn delegation_one_hop() {
        assert_eq!(net().delegation(10, &msg(3)), Ok(11));
        assert_eq!(net().delegation(10, &msg(0)), Ok(11));
        assert_eq!(net().delegation(0, &msg(8)), Err(NetError::NoSuchCore(8)));
    }

    #[test]
    fn distribution_hops() {
        let place = CoreBlock::new(4, 4);
        assert_eq!(net().distribution(5, 4, Direction::Next, place), Ok((5, 7)));
        assert_eq!(net().distribution(5, 6, Direction::Prev, place), Ok((5, 7)));
        assert_eq!(net().distribution(5, 6, Direction::Loop, place), Ok((6, 7)));
        assert!(net().distribution(5, 4, Direction::Prev, place).is_err());
        assert!(net().distribution(5, 7, Direction::Next, place).is_err());
        assert!(net().distribution(5, 2, Direction::Next, place).is_err());
    }

    #[test]
    fn four_core_round_trip() {
        // Entry loopback, three forward hops, turnaround loopback, three back.
        let n = net();
        let place = CoreBlock::new(0, 4);
        let (mut core, mut t) = n.distribution(0, 0, Direction::Loop, place).unwrap();
        for _ in 0..3 {
            (core, t) = n.distribution(t, core, Direction::Next, place).unwrap();
        }
        (core, t) = n.distribution(t, core, Direction::Loop, place).unwrap();
        for _ in 0..3 {
            (core, t) = n.distribution(t, core, Direction::Prev, place).unwrap();
        }
        assert_eq!((core, t), (0, 16));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MsgKind::ALL {
            assert_eq!(MsgKind::from_name(k.name()), Some(k));
        }
    }
}
