//! Trace checker for the memory ordering discipline.
//!
//! Per thread, memory operations complete in issue order. Per family:
//! the children issue nothing before the parent's stores issued ahead of
//! the create have completed; every child store completes before the
//! family's completion; the parent issues nothing after its SYNC before
//! that completion. Positions in the trace give the order of events that
//! share a cycle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::memory::{MemKind, MemOpRecord};
use crate::trace::{TraceKind, TraceRecord};
use crate::{Fid, Tid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Clause {
    /// Completions of one thread follow its issue order.
    ThreadOrder,
    /// Parent stores before a create complete before any child access.
    PreCreateWrites,
    /// Child stores complete before the family completes.
    ChildWritesBeforeSync,
    /// Parent accesses after SYNC follow the completion.
    PostSync,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub clause: Clause,
    /// Issue order of the offending operation.
    pub order: u64,
    pub tid: Tid,
    pub fid: Fid,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}: op {} (tid {}, fid {}): {}",
            self.clause, self.order, self.tid, self.fid, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed trace at record {index}: {message}")]
pub struct CheckError {
    pub index: usize,
    pub message: String,
}

/// A memory operation with the trace positions of its two halves.
#[derive(Debug, Clone)]
struct Op {
    rec: MemOpRecord,
    issue_pos: usize,
    done_pos: Option<usize>,
}

fn field<'a>(r: &'a TraceRecord, i: usize, key: &str) -> Result<&'a str, CheckError> {
    r.get(key).ok_or_else(|| CheckError {
        index: i,
        message: format!("{} record lacks `{key}`", r.kind),
    })
}

fn num<T: std::str::FromStr>(r: &TraceRecord, i: usize, key: &str) -> Result<T, CheckError> {
    field(r, i, key)?.parse().map_err(|_| CheckError {
        index: i,
        message: format!("`{key}` of {} record is not a number", r.kind),
    })
}

/// Memory operations of a trace, by issue order.
pub fn memory_ops(trace: &[TraceRecord]) -> Result<Vec<MemOpRecord>, CheckError> {
    Ok(collect_ops(trace)?.into_values().map(|o| o.rec).collect())
}

fn collect_ops(trace: &[TraceRecord]) -> Result<BTreeMap<u64, Op>, CheckError> {
    let mut ops: BTreeMap<u64, Op> = BTreeMap::new();
    for (i, r) in trace.iter().enumerate() {
        match r.kind {
            TraceKind::MemIssue | TraceKind::MemDone => {}
            _ => continue,
        }
        let kind = match field(r, i, "op")? {
            "ld" => MemKind::Load,
            "st" => MemKind::Store,
            _ => continue,
        };
        let order: u64 = num(r, i, "order")?;
        if r.kind == TraceKind::MemIssue {
            let rec = MemOpRecord {
                order,
                issue: r.cycle,
                complete: 0,
                core: r.core,
                tid: num(r, i, "tid")?,
                fid: num(r, i, "fid")?,
                kind,
                addr: num(r, i, "addr")?,
                value: if kind == MemKind::Store { num(r, i, "value")? } else { 0 },
            };
            let dup = ops.insert(
                order,
                Op {
                    rec,
                    issue_pos: i,
                    done_pos: None,
                },
            );
            if dup.is_some() {
                return Err(CheckError {
                    index: i,
                    message: format!("operation {order} issued twice"),
                });
            }
        } else {
            let op = ops.get_mut(&order).ok_or_else(|| CheckError {
                index: i,
                message: format!("operation {order} completes without issuing"),
            })?;
            if op.done_pos.is_some() {
                return Err(CheckError {
                    index: i,
                    message: format!("operation {order} completes twice"),
                });
            }
            op.done_pos = Some(i);
            op.rec.complete = r.cycle;
            if kind == MemKind::Load {
                op.rec.value = num(r, i, "value")?;
            }
        }
    }
    Ok(ops)
}

#[derive(Debug, Default)]
struct FamilyEvents {
    parent: Option<Tid>,
    create_pos: Option<usize>,
    sequential: bool,
    children: BTreeSet<Tid>,
    syncs: Vec<(Tid, usize)>,
    done_pos: Option<usize>,
}

pub fn check_weak_consistency(trace: &[TraceRecord]) -> Result<Vec<Violation>, CheckError> {
    let ops = collect_ops(trace)?;
    let mut fams: BTreeMap<Fid, FamilyEvents> = BTreeMap::new();
    for (i, r) in trace.iter().enumerate() {
        match r.kind {
            TraceKind::FCrei => {
                let f = fams.entry(num(r, i, "fid")?).or_default();
                f.parent = r.get_u64("tid");
                f.create_pos = Some(i);
                f.sequential = r.get("seq") == Some("1");
            }
            TraceKind::TCreate => {
                fams.entry(num(r, i, "fid")?).or_default().children.insert(num(r, i, "tid")?);
            }
            TraceKind::FSync => {
                fams.entry(num(r, i, "fid")?).or_default().syncs.push((num(r, i, "tid")?, i));
            }
            TraceKind::FSyncDone => {
                let f = fams.entry(num(r, i, "fid")?).or_default();
                f.done_pos.get_or_insert(i);
            }
            _ => {}
        }
    }

    let mut out = Vec::new();
    let violation = |clause, op: &Op, message: String| Violation {
        clause,
        order: op.rec.order,
        tid: op.rec.tid,
        fid: op.rec.fid,
        message,
    };

    let mut by_thread: HashMap<Tid, Vec<&Op>> = HashMap::new();
    for op in ops.values() {
        by_thread.entry(op.rec.tid).or_default().push(op);
    }
    let mut tids: Vec<_> = by_thread.keys().copied().collect();
    tids.sort_unstable();
    for tid in &tids {
        let mut last: Option<(usize, u64)> = None;
        for op in &by_thread[tid] {
            let Some(done) = op.done_pos else { continue };
            if let Some((prev, prev_order)) = last {
                if done < prev {
                    out.push(violation(
                        Clause::ThreadOrder,
                        op,
                        format!("completes before earlier operation {prev_order}"),
                    ));
                    continue;
                }
            }
            last = Some((done, op.rec.order));
        }
    }

    for (&fid, f) in &fams {
        if f.sequential {
            continue;
        }
        let child_ops: Vec<&Op> = f
            .children
            .iter()
            .filter_map(|t| by_thread.get(t))
            .flatten()
            .copied()
            .filter(|o| o.rec.fid == fid)
            .collect();
        if let (Some(parent), Some(create)) = (f.parent, f.create_pos) {
            let pending: Vec<&Op> = by_thread
                .get(&parent)
                .into_iter()
                .flatten()
                .copied()
                .filter(|o| o.rec.kind == MemKind::Store && o.issue_pos < create)
                .collect();
            for op in &child_ops {
                let early = pending
                    .iter()
                    .find(|w| w.done_pos.is_none_or(|d| d > op.issue_pos));
                if let Some(w) = early {
                    out.push(violation(
                        Clause::PreCreateWrites,
                        op,
                        format!("issued before parent store {} completed", w.rec.order),
                    ));
                }
            }
        }
        if let Some(done) = f.done_pos {
            for op in child_ops.iter().filter(|o| o.rec.kind == MemKind::Store) {
                if op.done_pos.is_none_or(|d| d > done) {
                    out.push(violation(
                        Clause::ChildWritesBeforeSync,
                        op,
                        format!("completes after family {fid} synchronized"),
                    ));
                }
            }
        }
        for &(ptid, sync_pos) in &f.syncs {
            for op in by_thread.get(&ptid).into_iter().flatten() {
                if op.issue_pos > sync_pos && f.done_pos.is_none_or(|d| d > op.issue_pos) {
                    out.push(violation(
                        Clause::PostSync,
                        op,
                        format!("issued after SYNC but before family {fid} completed"),
                    ));
                }
            }
        }
    }
    out.sort_by_key(|v| (v.clause, v.order));
    Ok(out)
}
