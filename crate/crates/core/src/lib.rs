//! A deterministic discrete-event simulator of a microthreaded many-core
//! chip.
//!
//! Cores run hardware-managed families of threads whose registers are
//! dataflow-synchronizing cells. Families are allocated, configured,
//! created, synchronized and released through messages on two on-chip
//! networks. Memory is split-phase with latency classes. Everything is
//! driven by one event queue, so a configuration and a program always
//! produce the same trace.
//!
//! ```
//! use microgrid::{assemble, run_program, ChipConfig, RunOptions, Termination};
//!
//! let program = assemble(".thread main l=1\n  MOV l0, #42\n  PRINT l0\n  END\n").unwrap();
//! let result = run_program(&ChipConfig::default(), &program, &RunOptions::default());
//! assert_eq!(result.termination, Termination::Completed);
//! assert_eq!(result.outputs, vec![42]);
//! ```

pub mod cli;
pub mod config;
pub mod consistency;
pub mod family;
pub mod isa;
pub mod kernel;
pub mod machine;
pub mod memory;
pub mod network;
mod pipeline;
pub mod place;
pub mod sep;
pub mod stats;
pub mod sync;
pub mod trace;

/// Register and memory word.
pub type Word = i64;
pub type Cycle = u64;
pub type CoreId = usize;
/// Thread serial number, unique over a run.
pub type Tid = u64;
/// Family handle as held in a register. Zero is never a valid handle.
pub type Fid = u32;

pub use config::{load_config, ChipConfig};
pub use isa::{assemble, disassemble, Program};
pub use kernel::Termination;
pub use machine::{run_program, RunOptions, RunResult};
