//! Event queue and run termination.
//!
//! Events are ordered by `(due cycle, class, sequence)`. The class puts
//! network deliveries ahead of memory completions within a cycle and the
//! sequence number keeps everything else in scheduling order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::{CoreId, Cycle, Fid, Tid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventClass {
    Network = 0,
    Memory = 1,
    Fetch = 2,
    Service = 3,
}

struct Entry<T> {
    due: Cycle,
    class: EventClass,
    seq: u64,
    payload: T,
}

impl<T> Entry<T> {
    fn key(&self) -> (Cycle, EventClass, u64) {
        (self.due, self.class, self.seq)
    }
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

pub struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, now: Cycle, delay: Cycle, class: EventClass, payload: T) {
        self.schedule_at(now + delay, class, payload);
    }

    pub fn schedule_at(&mut self, due: Cycle, class: EventClass, payload: T) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            due,
            class,
            seq,
            payload,
        });
    }

    /// The next event due at or before `now`.
    pub fn pop_due(&mut self, now: Cycle) -> Option<(Cycle, T)> {
        if self.heap.peek()?.due > now {
            return None;
        }
        self.heap.pop().map(|e| (e.due, e.payload))
    }

    pub fn next_due(&self) -> Option<Cycle> {
        self.heap.peek().map(|e| e.due)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// What a suspended thread is waiting for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaitCause {
    /// A register cell of the thread's core.
    Register(u32),
    /// A family's completion cell.
    Completion(Fid),
    /// A family's creation acknowledgement.
    CreateAck(Fid),
    /// Outstanding stores before a create.
    Stores,
    /// Outstanding memory or FPU operations before END.
    Drain,
    /// The preceding thread of a dependent family has not retired.
    Predecessor,
    /// A resource-manager reply.
    Sep,
}

impl fmt::Display for WaitCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaitCause::Register(i) => write!(f, "r{i}"),
            WaitCause::Completion(fid) => write!(f, "sync{fid}"),
            WaitCause::CreateAck(fid) => write!(f, "ack{fid}"),
            WaitCause::Stores => f.write_str("stores"),
            WaitCause::Drain => f.write_str("drain"),
            WaitCause::Predecessor => f.write_str("pred"),
            WaitCause::Sep => f.write_str("sep"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitingThread {
    pub core: CoreId,
    pub tid: Tid,
    pub fid: Fid,
    pub thread: String,
    pub pc: usize,
    pub cause: Option<WaitCause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeadlockReport {
    pub threads: Vec<WaitingThread>,
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "deadlock: {} thread(s) waiting", self.threads.len())?;
        for t in &self.threads {
            let cause = t.cause.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "  core {} tid {} ({} of family {}) pc {} waits on {}",
                t.core, t.tid, t.thread, t.fid, t.pc, cause
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cycle {cycle}, core {core}: {message}")]
pub struct SimError {
    pub cycle: Cycle,
    pub core: CoreId,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    /// The root family synchronized.
    Completed,
    /// Nothing left to run or deliver, yet threads remain.
    Deadlock(DeadlockReport),
    /// The cycle budget ran out.
    Limit,
    /// A program error stopped the machine.
    Fault(SimError),
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Deadlock(_) => "deadlock",
            Termination::Limit => "limit",
            Termination::Fault(_) => "fault",
        }
    }
}
