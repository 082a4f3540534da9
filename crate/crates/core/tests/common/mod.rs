#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use microgrid::consistency::memory_ops;
use microgrid::memory::MemKind;
use microgrid::trace::{parse_trace, TraceKind, TraceRecord};
use microgrid::{assemble, run_program, ChipConfig, Program, RunOptions, RunResult, Word};

pub fn dir(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(sub)
}

pub fn source(name: &str) -> String {
    let path = dir("programs").join(format!("{name}.mtasm"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn program(name: &str) -> Program {
    assemble(&source(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn fixture(name: &str) -> Vec<TraceRecord> {
    let path = dir("fixtures").join(name);
    parse_trace(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

pub fn cores(n: usize) -> ChipConfig {
    ChipConfig::with_cores(n)
}

pub fn run(cfg: &ChipConfig, p: &Program) -> RunResult {
    run_program(cfg, p, &RunOptions::default())
}

pub fn run_named(name: &str, cfg: &ChipConfig) -> RunResult {
    run(cfg, &program(name))
}

/// Every program in the corpus with the chip it is meant for.
pub fn corpus() -> Vec<(&'static str, ChipConfig, RunOptions)> {
    let limited = RunOptions {
        max_cycles: 1000,
        ..RunOptions::default()
    };
    let d = RunOptions::default();
    vec![
        ("main_end", cores(1), d.clone()),
        ("alu10", cores(1), d.clone()),
        ("compute2", cores(1), d.clone()),
        ("prefix_sum", cores(4), d.clone()),
        ("matmul", cores(4), d.clone()),
        ("matmul_seq", cores(4), d.clone()),
        ("distribution", cores(4), d.clone()),
        ("latency", cores(1), d.clone()),
        ("latency_block1", cores(1), d.clone()),
        ("exclusive", cores(1), d.clone()),
        ("handoff", cores(1), d.clone()),
        ("breaker", cores(2), d.clone()),
        ("detached", cores(2), d.clone()),
        ("resources", cores(8), d.clone()),
        ("deadlock", cores(1), d.clone()),
        ("spin", cores(1), limited),
    ]
}

pub fn of_kind(trace: &[TraceRecord], kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
    trace.iter().filter(move |r| r.kind == kind)
}

/// The fid of the first family created from `thread`.
pub fn fid_of(trace: &[TraceRecord], thread: &str) -> u64 {
    of_kind(trace, TraceKind::FCrei)
        .find(|r| r.get("thread") == Some(thread))
        .and_then(|r| r.get_u64("fid"))
        .unwrap_or_else(|| panic!("no family of {thread}"))
}

/// Replay memory operations in completion order against a plain map,
/// checking each load's value. Returns the final image.
pub fn replay_memory(p: &Program, trace: &[TraceRecord]) -> Result<BTreeMap<Word, Word>, String> {
    let mut done_pos = HashMap::new();
    for (i, r) in trace.iter().enumerate() {
        if r.kind == TraceKind::MemDone && matches!(r.get("op"), Some("ld" | "st")) {
            done_pos.insert(r.get_u64("order").unwrap(), i);
        }
    }
    let mut ops = memory_ops(trace).map_err(|e| e.to_string())?;
    ops.retain(|o| done_pos.contains_key(&o.order));
    ops.sort_by_key(|o| done_pos[&o.order]);
    let mut mem: BTreeMap<Word, Word> = p.initial_memory().into_iter().collect();
    for o in &ops {
        match o.kind {
            MemKind::Store => {
                mem.insert(o.addr, o.value);
            }
            MemKind::Load => {
                let want = mem.get(&o.addr).copied().unwrap_or(0);
                if want != o.value {
                    return Err(format!("load {} of {} saw {}, expected {want}", o.order, o.addr, o.value));
                }
            }
        }
    }
    Ok(mem)
}

/// Sequential product of the two 16x16 matrices in the matmul data.
pub fn matmul_oracle(p: &Program) -> Vec<Word> {
    let mem: BTreeMap<Word, Word> = p.initial_memory().into_iter().collect();
    let at = |a: Word| mem.get(&a).copied().unwrap_or(0);
    let mut c = vec![0; 256];
    for i in 0..16 {
        for j in 0..16 {
            for k in 0..16 {
                c[(i * 16 + j) as usize] += at(1000 + i * 16 + k) * at(2000 + k * 16 + j);
            }
        }
    }
    c
}

/// Live threads of `fid` per core after each record; the maximum seen.
pub fn max_live(trace: &[TraceRecord], fid: u64) -> BTreeMap<usize, i64> {
    let mut live: BTreeMap<usize, i64> = BTreeMap::new();
    let mut max: BTreeMap<usize, i64> = BTreeMap::new();
    for r in trace {
        if r.get_u64("fid") != Some(fid) {
            continue;
        }
        let delta = match r.kind {
            TraceKind::TCreate => 1,
            TraceKind::TEnd => -1,
            _ => continue,
        };
        let l = live.entry(r.core).or_default();
        *l += delta;
        let m = max.entry(r.core).or_default();
        *m = (*m).max(*l);
    }
    max
}
