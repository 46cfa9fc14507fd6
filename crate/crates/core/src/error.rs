use thiserror::Error;

use crate::engine::SimTime;
use crate::fabric::HostId;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled in the past: now={now}, requested={requested}")]
    SchedulingInPast { now: SimTime, requested: SimTime },
    #[error("cross-partition message with delay {delay} below lookahead {lookahead}")]
    LookaheadViolation { delay: SimTime, lookahead: SimTime },
    #[error("simulated time overflow")]
    TimeOverflow,
    #[error("invalid synchronization config: {0}")]
    InvalidSync(String),
    #[error("unknown component {0}")]
    UnknownComponent(u32),

    #[error("capacity exceeded: requested {requested} bytes, {available} available in {what}")]
    CapacityExceeded {
        what: String,
        requested: u64,
        available: u64,
    },
    #[error("range {start:#x}..{end:#x} overlaps an existing binding")]
    OverlapWithExistingBinding { start: u64, end: u64 },
    #[error("segment {start:#x}..{end:#x} already has a writer")]
    SecondWriterRejected { start: u64, end: u64 },
    #[error("shared segment {start:#x}..{end:#x} overlaps a pooled slice")]
    OverlapWithPooled { start: u64, end: u64 },
    #[error("invalid address range: {0}")]
    InvalidRange(String),
    #[error("invalid page policy: {0}")]
    InvalidPolicy(String),
    #[error("host {0} has no remote binding")]
    RemoteUnbound(HostId),
    #[error("host {host}: unmapped address {addr:#x}")]
    UnmappedAddress { host: HostId, addr: u64 },
    #[error("address {0:#x} out of device range")]
    OutOfRange(u64),
    #[error("host {host}: store to read-only address {addr:#x}")]
    ReadOnlyViolation { host: HostId, addr: u64 },
    #[error("host {host}: store to shared segment at {addr:#x} outside the functional phase")]
    SharedSegmentFrozen { host: HostId, addr: u64 },

    #[error("empty region of interest")]
    EmptyRoi,
    #[error("no retired memory operations")]
    NoMemoryOps,

    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("timing config conflicts with checkpoint: {0}")]
    ConfigConflict(String),
    #[error("init stage failed on node {node}: {source}")]
    InitFailure {
        node: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config `{key}`: {constraint}")]
    Validation { key: String, constraint: String },
    #[error("io error: {0}")]
    Io(String),
}

impl SimError {
    pub fn validation(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        SimError::Validation {
            key: key.into(),
            constraint: constraint.into(),
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
