mod common;

use std::path::Path;

use common::dir;
use microgrid::cli::run_cli;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Out {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["microgrid"];
    argv.extend_from_slice(args);
    let code = run_cli(argv, &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn prog(name: &str) -> String {
    dir("programs").join(format!("{name}.mtasm")).display().to_string()
}

fn cfg(name: &str) -> String {
    dir("configs").join(format!("{name}.cfg")).display().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_stats_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let stats = tmp.path().join("out.stats");
    let trace = tmp.path().join("out.trace");
    let o = cli(&[
        "run",
        "--config",
        &cfg("chip4"),
        "--program",
        &prog("matmul"),
        "--stats",
        path(&stats),
        "--trace",
        path(&trace),
        "--check-consistency",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stderr.contains("0 violation(s)"));
    let text = std::fs::read_to_string(&stats).unwrap();
    assert!(text.starts_with("cycles = "));
    assert!(text.contains("core3.ipc = "));

    // Recomputing from the trace gives the same document.
    let again = tmp.path().join("again.stats");
    let o = cli(&["stats", "--trace", path(&trace), "--stats", path(&again)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), text);
}

#[test]
fn printed_values_go_to_stdout() {
    let o = cli(&["run", "--config", &cfg("chip4"), "--program", &prog("prefix_sum")]);
    assert_eq!(o.code, 0);
    assert_eq!(o.stdout, "5050\n");
    assert!(o.stderr.contains("halted: completed"));
}

#[test]
fn deadlock_exits_2_with_report() {
    let o = cli(&["run", "--program", &prog("deadlock")]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("main of family 1"), "{}", o.stderr);
}

#[test]
fn cycle_limit_exits_3() {
    let o = cli(&["run", "--program", &prog("spin"), "--max-cycles", "100"]);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("limit at cycle 100"));
}

#[test]
fn fault_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("div.mtasm");
    std::fs::write(&p, ".thread main l=1\n DIV l0, #1, #0\n END\n").unwrap();
    let o = cli(&["run", "--program", path(&p)]);
    assert_eq!(o.code, 5);
    assert!(o.stderr.contains("division by zero"));
}

#[test]
fn bad_inputs_exit_1() {
    assert_eq!(cli(&["run"]).code, 1);
    assert_eq!(cli(&["frobnicate"]).code, 1);
    assert_eq!(cli(&["run", "--program", "/nonexistent/x.mtasm"]).code, 1);
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.mtasm");
    std::fs::write(&bad, ".thread main\n FROB\n END\n").unwrap();
    let o = cli(&["run", "--program", path(&bad)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("2:2"), "{}", o.stderr);
    let badcfg = tmp.path().join("bad.cfg");
    std::fs::write(&badcfg, "cores = 3\n").unwrap();
    assert_eq!(cli(&["run", "--config", path(&badcfg), "--program", &prog("main_end")]).code, 1);
}

#[test]
fn help_exits_0() {
    let o = cli(&["--help"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("run"));
}

#[test]
fn check_counts_fixture_violations() {
    for f in ["parent_store_late.trace", "child_store_late.trace"] {
        let p = dir("fixtures").join(f);
        let o = cli(&["check", "--trace", path(&p)]);
        assert_eq!(o.code, 4);
        assert!(o.stdout.ends_with("1 violation(s)\n"), "{}", o.stdout);
    }
}

#[test]
fn disasm_prints_reassemblable_text() {
    let o = cli(&["disasm", "--program", &prog("prefix_sum")]);
    assert_eq!(o.code, 0);
    let again = microgrid::assemble(&o.stdout).unwrap();
    assert_eq!(again, common::program("prefix_sum"));
}
