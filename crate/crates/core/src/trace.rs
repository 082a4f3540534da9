//! Trace records: `cycle<TAB>core<TAB>KIND<TAB>key=value ...`, one per line.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::{CoreId, Cycle};

macro_rules! trace_kinds {
    ($($variant:ident => $name:literal,)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum TraceKind {
            $($variant,)*
        }

        impl TraceKind {
            pub fn name(self) -> &'static str {
                match self {
                    $(TraceKind::$variant => $name,)*
                }
            }

            pub fn from_name(s: &str) -> Option<TraceKind> {
                match s {
                    $($name => Some(TraceKind::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

trace_kinds! {
    TCreate => "TCREATE",
    Ready => "READY",
    Issue => "ISSUE",
    Switch => "SWITCH",
    Suspend => "SUSPEND",
    Wake => "WAKE",
    TEnd => "TEND",
    Fill => "FILL",
    Send => "SEND",
    Recv => "RECV",
    MemIssue => "MEMISSUE",
    MemDone => "MEMDONE",
    FAlloc => "FALLOC",
    FAck => "FACK",
    FFail => "FFAIL",
    FCrei => "FCREI",
    FCreate => "FCREATE",
    FSeq => "FSEQ",
    FSync => "FSYNC",
    FSyncDone => "FSYNCDONE",
    FRelease => "FRELEASE",
    FBreak => "FBREAK",
    Print => "PRINT",
    SepReq => "SEPREQ",
    SepReply => "SEPREPLY",
    Fault => "FAULT",
    Halt => "HALT",
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: Cycle,
    pub core: CoreId,
    pub kind: TraceKind,
    pub fields: Vec<(String, String)>,
}

impl TraceRecord {
    pub fn new(cycle: Cycle, core: CoreId, kind: TraceKind) -> Self {
        Self {
            cycle,
            core,
            kind,
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key)?.parse().ok()
    }

    pub fn get_i64(&self, key: &str) -> Option<i64> {
        self.get(key)?.parse().ok()
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.cycle, self.core, self.kind)?;
        for (i, (k, v)) in self.fields.iter().enumerate() {
            f.write_str(if i == 0 { "\t" } else { " " })?;
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

pub fn parse_line(text: &str, line: usize) -> Result<TraceRecord, TraceError> {
    let err = |message: String| TraceError { line, message };
    let mut cols = text.splitn(4, '\t');
    let cycle = cols
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err("bad cycle".into()))?;
    let core = cols
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err("bad core".into()))?;
    let kind_text = cols.next().ok_or_else(|| err("missing kind".into()))?;
    let kind = TraceKind::from_name(kind_text).ok_or_else(|| err(format!("unknown kind `{kind_text}`")))?;
    let mut rec = TraceRecord::new(cycle, core, kind);
    if let Some(rest) = cols.next() {
        for tok in rest.split(' ').filter(|t| !t.is_empty()) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(format!("field `{tok}` is not key=value")))?;
            rec.fields.push((k.to_string(), v.to_string()));
        }
    }
    Ok(rec)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut sink: W) -> io::Result<()> {
    for r in records {
        writeln!(sink, "{r}")?;
    }
    sink.flush()
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = Vec::new();
    write_trace(records, &mut out).expect("writing to memory");
    String::from_utf8(out).expect("trace is ASCII")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wake_format() {
        let r = TraceRecord::new(117, 2, TraceKind::Wake).with("tid", 9).with("cell", "r14");
        assert_eq!(r.to_string(), "117\t2\tWAKE\ttid=9 cell=r14");
    }

    #[test]
    fn round_trip() {
        let recs = vec![
            TraceRecord::new(54, 0, TraceKind::TCreate).with("fid", 1).with("tid", 0).with("idx", 0),
            TraceRecord::new(60, 3, TraceKind::Halt),
        ];
        let text = render_trace(&recs);
        assert_eq!(parse_trace(&text).unwrap(), recs);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_line("x\t0\tISSUE", 1).is_err());
        assert!(parse_line("1\t0\tNOPE", 1).is_err());
        assert!(parse_line("1\t0\tISSUE\tpc", 4).unwrap_err().line == 4);
    }
}
