mod common;

use std::collections::{BTreeMap, HashMap};

use common::*;
use microgrid::kernel::WaitCause;
use microgrid::stats::RunStats;
use microgrid::trace::{parse_trace, TraceKind};
use microgrid::{assemble, disassemble, run_program, ChipConfig, RunOptions, Termination};

#[test]
fn main_end_is_short() {
    let r = run_named("main_end", &cores(1));
    assert_eq!(r.termination, Termination::Completed);
    assert!(r.cycles <= 20, "took {}", r.cycles);
    assert_eq!(of_kind(&r.trace, TraceKind::TCreate).next().unwrap().cycle, 4);
}

#[test]
fn ten_alu_ops_issue_back_to_back_after_one_fill() {
    let r = run_named("alu10", &cores(1));
    let issues: Vec<u64> = of_kind(&r.trace, TraceKind::Issue).map(|i| i.cycle).collect();
    assert_eq!(issues.len(), 11);
    assert!(issues.windows(2).all(|w| w[1] == w[0] + 1), "{issues:?}");
    let fills: Vec<_> = of_kind(&r.trace, TraceKind::Fill).collect();
    assert_eq!(fills.len(), 1);
    assert_eq!(fills[0].cycle + 5, issues[0]);
}

#[test]
fn compute_bound_threads_alternate_in_bounded_bursts() {
    let r = run_named("compute2", &cores(1));
    assert_eq!(r.termination, Termination::Completed);
    let fid = fid_of(&r.trace, "crunch");
    let tids: Vec<u64> = of_kind(&r.trace, TraceKind::TCreate)
        .filter(|t| t.get_u64("fid") == Some(fid))
        .map(|t| t.get_u64("tid").unwrap())
        .collect();
    let order: Vec<u64> = of_kind(&r.trace, TraceKind::Issue)
        .map(|i| i.get_u64("tid").unwrap())
        .filter(|t| tids.contains(t))
        .collect();
    let mut bursts: Vec<(u64, usize)> = Vec::new();
    for t in order {
        match bursts.last_mut() {
            Some((last, n)) if *last == t => *n += 1,
            _ => bursts.push((t, 1)),
        }
    }
    assert!(bursts.len() >= 6, "{bursts:?}");
    assert!(bursts.iter().all(|&(_, n)| n <= 16), "{bursts:?}");
    // Both threads run the same loop, so only each one's last burst is short.
    let full = &bursts[..bursts.len() - 2];
    assert!(full.iter().all(|&(_, n)| n == 16), "{bursts:?}");
}

#[test]
fn deadlock_is_reported_with_the_waiting_thread() {
    let r = run_named("deadlock", &cores(1));
    let Termination::Deadlock(report) = &r.termination else {
        panic!("expected deadlock, got {:?}", r.termination)
    };
    assert_eq!(report.threads.len(), 1);
    assert_eq!(report.threads[0].thread, "main");
    assert!(matches!(report.threads[0].cause, Some(WaitCause::Register(_))));
    assert!(report.to_string().contains("waits on r"));
}

#[test]
fn cycle_limit_stops_an_infinite_loop() {
    let opts = RunOptions {
        max_cycles: 100,
        ..RunOptions::default()
    };
    let r = run_program(&cores(1), &program("spin"), &opts);
    assert_eq!(r.termination, Termination::Limit);
    assert_eq!(r.cycles, 100);
    let halt = r.trace.last().unwrap();
    assert_eq!((halt.cycle, halt.get("reason")), (100, Some("limit")));
}

#[test]
fn parent_and_child_see_each_others_stores() {
    let r = run_named("handoff", &cores(1));
    assert_eq!(r.outputs, vec![8]);
}

#[test]
fn loads_return_the_latest_completed_store() {
    for (name, cfg, opts) in corpus() {
        let p = program(name);
        let r = run_program(&cfg, &p, &opts);
        let image = replay_memory(&p, &r.trace).unwrap_or_else(|e| panic!("{name}: {e}"));
        let snap: BTreeMap<_, _> = r.memory.snapshot().into_iter().collect();
        for (a, v) in &image {
            assert_eq!(snap.get(a).copied().unwrap_or(0), *v, "{name}: address {a}");
        }
    }
}

#[test]
fn every_suspension_is_woken_in_completed_runs() {
    for (name, cfg, opts) in corpus() {
        let r = run_program(&cfg, &program(name), &opts);
        if r.termination != Termination::Completed {
            continue;
        }
        let mut waiting: HashMap<u64, usize> = HashMap::new();
        for rec in &r.trace {
            let tid = rec.get_u64("tid");
            match rec.kind {
                TraceKind::Suspend => *waiting.entry(tid.unwrap()).or_default() += 1,
                TraceKind::Wake => {
                    let n = waiting.get_mut(&tid.unwrap()).expect("wake without suspension");
                    assert!(*n > 0, "{name}: spurious wake");
                    *n -= 1;
                }
                _ => {}
            }
        }
        assert!(waiting.values().all(|&n| n == 0), "{name}: thread left suspended");
    }
}

#[test]
fn stats_are_a_function_of_the_trace() {
    for (name, cfg, opts) in corpus() {
        let r = run_program(&cfg, &program(name), &opts);
        let reparsed = parse_trace(&r.trace_text()).unwrap();
        assert_eq!(RunStats::from_trace(&reparsed).render(), r.stats().render(), "{name}");
        let s = r.stats();
        assert_eq!(s.issued(), s.cores.iter().map(|c| c.issued).sum::<u64>());
        assert!(s.cores.iter().all(|c| c.ipc(s.cycles) <= 1.0));
        assert!(s.cores.iter().all(|c| c.issued + c.fill + c.idle == s.cycles), "{name}");
    }
}

#[test]
fn stats_document_has_stable_keys() {
    let r = run_named("main_end", &cores(2));
    let text = r.stats().render();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(&keys[..4], &["cycles", "chip.issued", "chip.ipc", "core0.issued"]);
    assert!(keys.contains(&"core1.ipc"));
    assert!(keys.contains(&"net.SyncDone"));
    assert_eq!(*keys.last().unwrap(), "prints");
}

#[test]
fn disassembly_reassembles_to_the_same_program() {
    for (name, ..) in corpus() {
        let p = program(name);
        assert_eq!(assemble(&disassemble(&p)).unwrap(), p, "{name}");
    }
}

#[test]
fn break_stops_creation_but_lets_started_threads_finish() {
    let r = run_named("breaker", &cores(2));
    assert_eq!(r.termination, Termination::Completed);
    let fid = fid_of(&r.trace, "work");
    let created = of_kind(&r.trace, TraceKind::TCreate)
        .filter(|t| t.get_u64("fid") == Some(fid))
        .count();
    let ended = of_kind(&r.trace, TraceKind::TEnd)
        .filter(|t| t.get_u64("fid") == Some(fid))
        .count();
    assert!(created < 100, "created {created}");
    assert_eq!(created, ended);
    assert_eq!(r.read(700 + 5), 1);
    assert_eq!(r.read(700 + 99), 0);
}

#[test]
fn detached_family_runs_without_sync() {
    let r = run_named("detached", &cores(2));
    assert_eq!(r.termination, Termination::Completed);
    assert_eq!(r.outputs, vec![42]);
    let fid = fid_of(&r.trace, "background");
    assert!(of_kind(&r.trace, TraceKind::TCreate).any(|t| t.get_u64("fid") == Some(fid) && t.core == 1));
    assert!(of_kind(&r.trace, TraceKind::FRelease).any(|t| t.get_u64("fid") == Some(fid)));
}

#[test]
fn resource_manager_and_balanced_placement() {
    let r = run_named("resources", &cores(8));
    assert_eq!(r.termination, Termination::Completed);
    assert_eq!(r.outputs, vec![4, 9]);
    let acks: Vec<&str> = of_kind(&r.trace, TraceKind::FAck).map(|a| a.get("place").unwrap()).collect();
    assert_eq!(acks, vec!["0+4", "1+1"]);
    assert_eq!(r.stats().sep_requests, 2);
}

#[test]
fn lookups_take_a_fixed_one_hop_even_locally() {
    let r = run_named("main_end", &cores(1));
    for s in of_kind(&r.trace, TraceKind::Send).filter(|s| s.get("via") == Some("deleg")) {
        assert_eq!(s.get_u64("due"), Some(s.cycle + 1));
    }
}

const FALLBACK: &str = "\
.thread main l=2
    ALLOCATE l0, #1
    BEQ l0, #0, failed
    SETLIMIT l0, #4
    CREI l0, sq
    PUTS l0, #0, #1
    SYNC l0
    GETS l1, l0, #0
    PRINT l1
    RELEASE l0
    END
failed:
    PRINT #-1
    END

.thread sq s=1 d=1
    MUL s0, d0, #2
    END
";

fn one_family_per_core(n: usize) -> ChipConfig {
    ChipConfig {
        family_entries_per_core: 1,
        ..cores(n)
    }
}

#[test]
fn failed_allocation_returns_zero() {
    let p = assemble(FALLBACK).unwrap();
    let r = run_program(&one_family_per_core(2), &p, &RunOptions::default());
    assert_eq!(r.termination, Termination::Completed);
    assert_eq!(r.outputs, vec![-1]);
    assert_eq!(of_kind(&r.trace, TraceKind::FFail).count(), 1);
}

#[test]
fn failed_allocation_can_fall_back_to_sequential() {
    let p = assemble(FALLBACK).unwrap();
    let opts = RunOptions {
        seq_fallback: true,
        ..RunOptions::default()
    };
    let r = run_program(&one_family_per_core(2), &p, &opts);
    assert_eq!(r.termination, Termination::Completed);
    assert_eq!(r.outputs, vec![16]);
    let concurrent = run_program(&cores(2), &p, &RunOptions::default());
    assert_eq!(concurrent.outputs, vec![16]);
}

#[test]
fn normal_strategy_shrinks_the_place() {
    // Core 6 is taken, so a request for 4..8 falls back to 4..6.
    let src = "\
.thread main l=2
    ALLOCATE l1, #13
    ALLOCATE l0, #12
    SETLIMIT l0, #4
    CREI l0, w
    SYNC l0
    RELEASE l0
    END
.thread w
    END
";
    let r = run_program(&one_family_per_core(8), &assemble(src).unwrap(), &RunOptions::default());
    assert_eq!(r.termination, Termination::Completed);
    let acks: Vec<&str> = of_kind(&r.trace, TraceKind::FAck).map(|a| a.get("place").unwrap()).collect();
    assert_eq!(acks, vec!["6+1", "4+2"]);
}

#[test]
fn exact_strategy_fails_instead_of_shrinking() {
    let src = "\
.thread main l=2
    ALLOCATE l1, #13
    ALLOCATE l0, #12, exact
    PRINT l0
    END
";
    let r = run_program(&one_family_per_core(8), &assemble(src).unwrap(), &RunOptions::default());
    assert_eq!(r.outputs, vec![0]);
}

#[test]
fn suspend_mode_waits_for_resources() {
    // The second request parks on core 1 until the first family is released.
    let src = "\
.thread main l=3
    ALLOCATE l0, #3
    ALLOCATE l1, #3, suspend
    CREI l0, w
    SYNC l0
    RELEASE l0
    CREI l1, w
    SYNC l1
    RELEASE l1
    PRINT #1
    END
.thread w
    END
";
    let r = run_program(&one_family_per_core(2), &assemble(src).unwrap(), &RunOptions::default());
    assert_eq!(r.termination, Termination::Completed);
    assert_eq!(r.outputs, vec![1]);
    let acks: Vec<u64> = of_kind(&r.trace, TraceKind::FAck).map(|a| a.cycle).collect();
    let release = of_kind(&r.trace, TraceKind::FRelease).next().unwrap().cycle;
    assert!(acks[1] > release);
}

#[test]
fn negative_step_counts_down() {
    let src = "\
.thread main l=1
    ALLOCATE l0, #0
    SETSTART l0, #10
    SETLIMIT l0, #0
    SETSTEP l0, #-2
    CREI l0, w
    SYNC l0
    RELEASE l0
    END
.thread w l=1
    GETIDX l0
    PRINT l0
    END
";
    let r = run_program(&cores(1), &assemble(src).unwrap(), &RunOptions::default());
    let mut out = r.outputs.clone();
    out.sort_unstable();
    assert_eq!(out, vec![2, 4, 6, 8, 10]);
}

#[test]
fn runtime_errors_fault() {
    let cases = [
        ".thread main l=1\n MOV l0, #0\n DIV l0, #1, l0\n END\n",
        ".thread main l=1\n ALLOCATE l0, #0\n SETSTEP l0, #0\n END\n",
        ".thread main l=1\n ALLOCATE l0, #0\n CREI l0, w\n RELEASE l0\n END\n.thread w\n END\n",
        ".thread main\n SYNC #77\n END\n",
        ".thread main l=1\n ALLOCATE l0, #9999\n END\n",
    ];
    for src in cases {
        let r = run_program(&cores(4), &assemble(src).unwrap(), &RunOptions::default());
        assert!(matches!(r.termination, Termination::Fault(_)), "{src}: {:?}", r.termination);
        assert!(of_kind(&r.trace, TraceKind::Fault).count() == 1);
    }
}

#[test]
fn fpu_ops_complete_asynchronously() {
    let src = "\
.thread main l=2
    MOV l0, #1.5
    FMUL l1, l0, #2.0
    FADD l1, l1, #0.25
    PRINT l1
    END
";
    let cfg = cores(1);
    let r = run_program(&cfg, &assemble(src).unwrap(), &RunOptions::default());
    assert_eq!(f64::from_bits(r.outputs[0] as u64), 3.25);
    assert_eq!(r.stats().mem.fpu, 2);
    let issue = of_kind(&r.trace, TraceKind::MemIssue).next().unwrap();
    assert_eq!(issue.get_u64("due"), Some(issue.cycle + cfg.latency.fpu_op));
}

#[test]
fn exclusive_requests_queue_on_the_exclusive_context() {
    let r = run_named("exclusive", &cores(1));
    let excl: Vec<u64> = of_kind(&r.trace, TraceKind::FAlloc)
        .filter(|a| a.get("mode") == Some("exclusive"))
        .map(|a| a.get_u64("fid").unwrap())
        .collect();
    let ack = |fid| {
        of_kind(&r.trace, TraceKind::FAck)
            .find(|a| a.get_u64("fid") == Some(fid))
            .unwrap()
            .cycle
    };
    let first_release = of_kind(&r.trace, TraceKind::FRelease)
        .find(|a| excl.contains(&a.get_u64("fid").unwrap()))
        .unwrap();
    let later = excl.iter().copied().filter(|&f| Some(f) != first_release.get_u64("fid")).next().unwrap();
    assert!(ack(later) > first_release.cycle);
}
