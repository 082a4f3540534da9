//! Run statistics, computed from a trace alone.

use std::fmt::Write as _;

use crate::memory::LatClass;
use crate::network::MsgKind;
use crate::trace::{TraceKind, TraceRecord};
use crate::Cycle;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub issued: u64,
    pub idle: u64,
    pub fill: u64,
    pub switches: u64,
    pub threads_created: u64,
    pub threads_retired: u64,
    pub families_created: u64,
}

impl CoreStats {
    pub fn ipc(&self, cycles: Cycle) -> f64 {
        if cycles == 0 {
            0.0
        } else {
            self.issued as f64 / cycles as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemStats {
    pub loads: u64,
    pub stores: u64,
    pub l1: u64,
    pub l2: u64,
    pub offchip: u64,
    pub fpu: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub cycles: Cycle,
    pub cores: Vec<CoreStats>,
    /// Messages sent, indexed like `MsgKind::ALL`.
    pub net: [u64; 15],
    pub mem: MemStats,
    pub sep_requests: u64,
    pub sep_failures: u64,
    pub prints: u64,
}

impl RunStats {
    pub fn from_trace(trace: &[TraceRecord]) -> Self {
        let mut s = RunStats::default();
        let halt = trace.iter().rev().find(|r| r.kind == TraceKind::Halt);
        s.cycles = match halt {
            Some(h) => h.cycle,
            None => trace.iter().map(|r| r.cycle).max().unwrap_or(0),
        };
        let ncores = halt
            .and_then(|h| h.get_u64("cores"))
            .map(|n| n as usize)
            .unwrap_or_else(|| trace.iter().map(|r| r.core + 1).max().unwrap_or(0));
        s.cores = vec![CoreStats::default(); ncores];
        for r in trace {
            if r.core >= s.cores.len() {
                s.cores.resize(r.core + 1, CoreStats::default());
            }
            let core = &mut s.cores[r.core];
            match r.kind {
                TraceKind::Issue => core.issued += 1,
                TraceKind::Fill => {
                    let len = r.get_u64("len").unwrap_or(0);
                    core.fill += len.min(s.cycles.saturating_sub(r.cycle));
                }
                TraceKind::Switch => core.switches += 1,
                TraceKind::TCreate => core.threads_created += 1,
                TraceKind::TEnd => core.threads_retired += 1,
                TraceKind::FCreate => core.families_created += 1,
                TraceKind::Send => {
                    if let Some(k) = r.get("kind").and_then(MsgKind::from_name) {
                        let i = MsgKind::ALL.iter().position(|&x| x == k).unwrap();
                        s.net[i] += 1;
                    }
                }
                TraceKind::MemIssue => {
                    match r.get("op") {
                        Some("ld") => s.mem.loads += 1,
                        Some("st") => s.mem.stores += 1,
                        _ => {}
                    }
                    match r.get("class").and_then(LatClass::from_name) {
                        Some(LatClass::L1) => s.mem.l1 += 1,
                        Some(LatClass::L2) => s.mem.l2 += 1,
                        Some(LatClass::Offchip) => s.mem.offchip += 1,
                        Some(LatClass::Fpu) => s.mem.fpu += 1,
                        None => {}
                    }
                }
                TraceKind::SepReq => s.sep_requests += 1,
                TraceKind::SepReply => {
                    if r.get("ok") == Some("0") {
                        s.sep_failures += 1;
                    }
                }
                TraceKind::Print => s.prints += 1,
                _ => {}
            }
        }
        for c in &mut s.cores {
            c.idle = s.cycles.saturating_sub(c.issued + c.fill);
        }
        s
    }

    pub fn issued(&self) -> u64 {
        self.cores.iter().map(|c| c.issued).sum()
    }

    /// Chip-wide instructions per cycle.
    pub fn ipc(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.issued() as f64 / self.cycles as f64
        }
    }

    pub fn messages(&self, kind: MsgKind) -> u64 {
        self.net[MsgKind::ALL.iter().position(|&k| k == kind).unwrap()]
    }

    /// `(key, value)` pairs in output order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: String, val: String| v.push((k, val));
        put("cycles".into(), self.cycles.to_string());
        put("chip.issued".into(), self.issued().to_string());
        put("chip.ipc".into(), format!("{:.2}", self.ipc()));
        for (i, c) in self.cores.iter().enumerate() {
            put(format!("core{i}.issued"), c.issued.to_string());
            put(format!("core{i}.idle"), c.idle.to_string());
            put(format!("core{i}.fill"), c.fill.to_string());
            put(format!("core{i}.ipc"), format!("{:.2}", c.ipc(self.cycles)));
            put(format!("core{i}.switches"), c.switches.to_string());
            put(format!("core{i}.threads_created"), c.threads_created.to_string());
            put(format!("core{i}.threads_retired"), c.threads_retired.to_string());
            put(format!("core{i}.families_created"), c.families_created.to_string());
        }
        for (k, n) in MsgKind::ALL.iter().zip(self.net) {
            put(format!("net.{}", k.name()), n.to_string());
        }
        put("mem.ld".into(), self.mem.loads.to_string());
        put("mem.st".into(), self.mem.stores.to_string());
        put("mem.l1".into(), self.mem.l1.to_string());
        put("mem.l2".into(), self.mem.l2.to_string());
        put("mem.off".into(), self.mem.offchip.to_string());
        put("mem.fpu".into(), self.mem.fpu.to_string());
        put("sep.requests".into(), self.sep_requests.to_string());
        put("sep.failures".into(), self.sep_failures.to_string());
        put("prints".into(), self.prints.to_string());
        v
    }

    /// `key = value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}

/// Read back a rendered stats document.
pub fn parse_stats(text: &str) -> Result<Vec<(String, String)>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("stats line {}: expected `key = value`", i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    #[test]
    fn empty_trace_is_all_zero() {
        let s = RunStats::from_trace(&[]);
        assert_eq!(s.cycles, 0);
        assert!(s.render().lines().all(|l| l.ends_with(" 0") || l.ends_with(" 0.00")));
    }

    #[test]
    fn counts_and_idle() {
        let t = parse_trace(
            "0\t0\tFILL\tlen=2\n2\t0\tISSUE\ttid=0 pc=0 op=NOP\n3\t0\tISSUE\ttid=0 pc=1 op=END\n\
             3\t1\tSEND\tkind=SyncDone dst=0 fid=1 via=deleg due=4\n8\t0\tHALT\treason=completed cores=2\n",
        )
        .unwrap();
        let s = RunStats::from_trace(&t);
        assert_eq!(s.cycles, 8);
        assert_eq!(s.cores[0].issued, 2);
        assert_eq!(s.cores[0].fill, 2);
        assert_eq!(s.cores[0].idle, 4);
        assert_eq!(s.cores[1].idle, 8);
        assert_eq!(s.messages(MsgKind::SyncDone), 1);
        assert_eq!(s.issued(), s.cores.iter().map(|c| c.issued).sum::<u64>());
        let text = s.render();
        assert!(text.contains("core0.ipc = 0.25\n"));
        let parsed = parse_stats(&text).unwrap();
        assert_eq!(parsed[0], ("cycles".to_string(), "8".to_string()));
    }
}
