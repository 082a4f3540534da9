//! Command-line front end.
//!
//! Exit codes: 0 completed, 1 bad arguments or files, 2 deadlock,
//! 3 cycle limit, 4 consistency violations, 5 runtime fault.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::consistency::check_weak_consistency;
use crate::config::{load_config, ChipConfig};
use crate::isa::{assemble, disassemble};
use crate::kernel::Termination;
use crate::machine::{run_program, RunOptions};
use crate::stats::RunStats;
use crate::trace::parse_trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DEADLOCK: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;
pub const EXIT_VIOLATIONS: i32 = 4;
pub const EXIT_FAULT: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "microgrid", about = "Microthreaded many-core simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a program to completion, deadlock, fault or the cycle limit.
    Run {
        /// Chip configuration (`key = value` lines); defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        program: PathBuf,
        /// Write statistics here.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        max_cycles: Option<u64>,
        /// Run families whose allocation fails sequentially in the parent.
        #[arg(long)]
        seq_fallback: bool,
        /// Check memory ordering on the finished trace.
        #[arg(long)]
        check_consistency: bool,
    },
    /// Print the canonical assembly of a program.
    Disasm {
        #[arg(long)]
        program: PathBuf,
    },
    /// Recompute statistics from a trace file.
    Stats {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Check a trace file for memory ordering violations.
    Check {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    match cmd {
        Command::Run {
            config,
            program,
            stats,
            trace,
            max_cycles,
            seq_fallback,
            check_consistency,
        } => {
            let cfg = match config {
                Some(p) => load_config(&read(&p)?).map_err(|e| format!("{}: {e}", p.display()))?,
                None => ChipConfig::default(),
            };
            let prog = assemble(&read(&program)?).map_err(|e| format!("{}:{e}", program.display()))?;
            let mut opts = RunOptions {
                seq_fallback,
                ..RunOptions::default()
            };
            if let Some(m) = max_cycles {
                opts.max_cycles = m;
            }
            let result = run_program(&cfg, &prog, &opts);
            if let Some(p) = &trace {
                write(p, &result.trace_text())?;
            }
            if let Some(p) = &stats {
                write(p, &result.stats().render())?;
            }
            for v in &result.outputs {
                let _ = writeln!(out, "{v}");
            }
            let _ = writeln!(err, "halted: {} at cycle {}", result.termination.label(), result.cycles);
            let mut code = match &result.termination {
                Termination::Completed => EXIT_OK,
                Termination::Deadlock(report) => {
                    let _ = write!(err, "{report}");
                    EXIT_DEADLOCK
                }
                Termination::Limit => EXIT_LIMIT,
                Termination::Fault(e) => {
                    let _ = writeln!(err, "fault: {e}");
                    EXIT_FAULT
                }
            };
            if check_consistency {
                let violations = check_weak_consistency(&result.trace).map_err(|e| e.to_string())?;
                for v in &violations {
                    let _ = writeln!(err, "violation: {v}");
                }
                let _ = writeln!(err, "consistency: {} violation(s)", violations.len());
                if !violations.is_empty() && code == EXIT_OK {
                    code = EXIT_VIOLATIONS;
                }
            }
            Ok(code)
        }
        Command::Disasm { program } => {
            let prog = assemble(&read(&program)?).map_err(|e| format!("{}:{e}", program.display()))?;
            let _ = out.write_all(disassemble(&prog).as_bytes());
            Ok(EXIT_OK)
        }
        Command::Stats { trace, stats } => {
            let records = parse_trace(&read(&trace)?).map_err(|e| e.to_string())?;
            let text = RunStats::from_trace(&records).render();
            match stats {
                Some(p) => write(&p, &text)?,
                None => {
                    let _ = out.write_all(text.as_bytes());
                }
            }
            Ok(EXIT_OK)
        }
        Command::Check { trace } => {
            let records = parse_trace(&read(&trace)?).map_err(|e| e.to_string())?;
            let violations = check_weak_consistency(&records).map_err(|e| e.to_string())?;
            for v in &violations {
                let _ = writeln!(out, "{v}");
            }
            let _ = writeln!(out, "{} violation(s)", violations.len());
            Ok(if violations.is_empty() { EXIT_OK } else { EXIT_VIOLATIONS })
        }
    }
}
