//! Chip blueprint parameters and the line-oriented configuration format.
//!
//! A configuration document is a sequence of `key = value` lines. Blank
//! lines and `#` comments are ignored; keys that are not mentioned keep
//! their defaults.

use thiserror::Error;

use crate::Cycle;

/// Latencies of the asynchronous completion classes, in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyTable {
    pub l1_hit: Cycle,
    pub l2_hit: Cycle,
    pub offchip: Cycle,
    pub fpu_op: Cycle,
}

impl Default for LatencyTable {
    fn default() -> Self {
        Self {
            l1_hit: 2,
            l2_hit: 12,
            offchip: 100,
            fpu_op: 4,
        }
    }
}

/// One instance of the blueprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChipConfig {
    pub num_cores: usize,
    pub thread_entries_per_core: usize,
    pub family_entries_per_core: usize,
    pub int_registers_per_core: usize,
    pub min_alloc_registers: usize,
    /// Always 1; kept as a field so the table shape is explicit.
    pub exclusive_contexts_per_core: usize,
    pub delegation_hop_cycles: Cycle,
    pub distribution_hop_cycles: Cycle,
    pub creation_setup_cycles: Cycle,
    pub latency: LatencyTable,
    /// Issued instructions before a thread must yield to another runnable
    /// thread. Zero disables forced rotation.
    pub fairness_quantum: u32,
    /// Cycles charged when a thread starts issuing into an empty pipeline.
    pub pipeline_fill_cycles: Cycle,
    /// Capacity of the per-core recent-address set (L1 stand-in).
    pub l1_capacity: usize,
    /// Capacity of the per-four-core recent-address set (L2 stand-in).
    pub l2_capacity: usize,
    /// Service cost of one resource-manager request.
    pub sep_cycles_per_request: Cycle,
    /// Keep core 0 out of the resource manager's pool.
    pub sep_reserved: bool,
}

impl Default for ChipConfig {
    fn default() -> Self {
        Self {
            num_cores: 1,
            thread_entries_per_core: 256,
            family_entries_per_core: 32,
            int_registers_per_core: 1024,
            min_alloc_registers: 31,
            exclusive_contexts_per_core: 1,
            delegation_hop_cycles: 1,
            distribution_hop_cycles: 2,
            creation_setup_cycles: 4,
            latency: LatencyTable::default(),
            fairness_quantum: 16,
            pipeline_fill_cycles: 5,
            l1_capacity: 64,
            l2_capacity: 512,
            sep_cycles_per_request: 20,
            sep_reserved: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

impl ChipConfig {
    /// A default chip with `num_cores` cores.
    pub fn with_cores(num_cores: usize) -> Self {
        Self {
            num_cores,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &'static str, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if self.num_cores == 0 || !self.num_cores.is_power_of_two() {
            return invalid("cores", "must be a power of two and at least 1");
        }
        if self.num_cores > 1 << 20 {
            return invalid("cores", "too many cores");
        }
        let counts: [(&'static str, u64); 9] = [
            ("threads_per_core", self.thread_entries_per_core as u64),
            ("families_per_core", self.family_entries_per_core as u64),
            ("registers_per_core", self.int_registers_per_core as u64),
            ("min_alloc_registers", self.min_alloc_registers as u64),
            ("delegation_hop", self.delegation_hop_cycles),
            ("distribution_hop", self.distribution_hop_cycles),
            ("lat_l1", self.latency.l1_hit),
            ("lat_l2", self.latency.l2_hit),
            ("mem_offchip", self.latency.offchip),
        ];
        for (key, value) in counts {
            if value == 0 {
                return invalid(key, "must be at least 1");
            }
        }
        if self.latency.fpu_op == 0 {
            return invalid("lat_fpu", "must be at least 1");
        }
        if self.l1_capacity == 0 {
            return invalid("l1_capacity", "must be at least 1");
        }
        if self.l2_capacity == 0 {
            return invalid("l2_capacity", "must be at least 1");
        }
        if self.thread_entries_per_core > u16::MAX as usize - 1 {
            return invalid("threads_per_core", "too many thread entries");
        }
        if self.int_registers_per_core > u32::MAX as usize {
            return invalid("registers_per_core", "too many registers");
        }
        if self.min_alloc_registers > self.int_registers_per_core {
            return invalid(
                "min_alloc_registers",
                "must not exceed registers_per_core",
            );
        }
        if self.exclusive_contexts_per_core != 1 {
            return invalid("exclusive_contexts", "is fixed at 1");
        }
        Ok(())
    }
}

/// Parse and validate a configuration document.
pub fn load_config(text: &str) -> Result<ChipConfig, ConfigError> {
    let mut cfg = ChipConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let parse_err = |what: &str| ConfigError::Parse {
            line: line_no,
            message: format!("`{key}` expects {what}, found `{value}`"),
        };
        let num = || value.parse::<u64>().map_err(|_| parse_err("a non-negative integer"));
        match key {
            "cores" => cfg.num_cores = num()? as usize,
            "threads_per_core" => cfg.thread_entries_per_core = num()? as usize,
            "families_per_core" => cfg.family_entries_per_core = num()? as usize,
            "registers_per_core" => cfg.int_registers_per_core = num()? as usize,
            "min_alloc_registers" => cfg.min_alloc_registers = num()? as usize,
            "exclusive_contexts" => cfg.exclusive_contexts_per_core = num()? as usize,
            "delegation_hop" => cfg.delegation_hop_cycles = num()?,
            "distribution_hop" => cfg.distribution_hop_cycles = num()?,
            "creation_setup" => cfg.creation_setup_cycles = num()?,
            "lat_l1" => cfg.latency.l1_hit = num()?,
            "lat_l2" => cfg.latency.l2_hit = num()?,
            "mem_offchip" => cfg.latency.offchip = num()?,
            "lat_fpu" => cfg.latency.fpu_op = num()?,
            "quantum" => {
                cfg.fairness_quantum =
                    u32::try_from(num()?).map_err(|_| parse_err("a 32-bit count"))?
            }
            "pipeline_fill" => cfg.pipeline_fill_cycles = num()?,
            "l1_capacity" => cfg.l1_capacity = num()? as usize,
            "l2_capacity" => cfg.l2_capacity = num()? as usize,
            "sep_cycles" => cfg.sep_cycles_per_request = num()?,
            "sep_reserved" => {
                cfg.sep_reserved = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(parse_err("`true` or `false`")),
                }
            }
            other => {
                return Err(ConfigError::Parse {
                    line: line_no,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
