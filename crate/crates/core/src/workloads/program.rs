//! The operation stream a core executes, and the functional executor that
//! runs the same streams with instant memory.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fabric::Region;
use crate::memory::DataPort;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// A load; a blocking load stalls the core until its data returns.
    Load {
        vaddr: u64,
        blocking: bool,
    },
    Store {
        vaddr: u64,
    },
    Compute {
        cycles: u32,
    },
}

impl Op {
    pub fn vaddr(&self) -> Option<u64> {
        match *self {
            Op::Load { vaddr, .. } | Op::Store { vaddr } => Some(vaddr),
            Op::Compute { .. } => None,
        }
    }
}

/// A per-core instruction stream. `next_op` applies the data effect of the
/// returned operation through `port` and hands back its timing shape.
pub trait Program: Send {
    fn next_op(&mut self, port: &mut dyn DataPort) -> Result<Option<Op>>;
}

/// Programs built from a per-element step that emits a small batch of ops.
pub(crate) struct Batched<S> {
    pub step: S,
    pending: VecDeque<Op>,
}

pub(crate) trait Step: Send {
    /// Performs the next element's data effect and pushes its ops; returns
    /// false when the stream is exhausted.
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool>;
}

impl<S: Step> Batched<S> {
    pub fn new(step: S) -> Self {
        Batched {
            step,
            pending: VecDeque::new(),
        }
    }
}

impl<S: Step> Program for Batched<S> {
    fn next_op(&mut self, port: &mut dyn DataPort) -> Result<Option<Op>> {
        while self.pending.is_empty() {
            if !self.step.step(port, &mut self.pending)? {
                return Ok(None);
            }
        }
        Ok(self.pending.pop_front())
    }
}

/// Retired operation counts split by the region each memory op targeted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub local: u64,
    pub remote: u64,
    pub compute: u64,
}

impl OpCounts {
    pub fn record(&mut self, port: &dyn DataPort, op: &Op) -> Result<()> {
        match op.vaddr() {
            Some(v) => match port.region_of(v)? {
                Region::Local => self.local += 1,
                Region::Remote => self.remote += 1,
            },
            None => self.compute += 1,
        }
        Ok(())
    }

    pub fn memory(&self) -> u64 {
        self.local + self.remote
    }

    pub fn add(&mut self, o: &OpCounts) {
        self.local += o.local;
        self.remote += o.remote;
        self.compute += o.compute;
    }
}

/// Runs programs to completion one after another with zero-latency memory.
pub fn run_functional<'p>(
    programs: impl IntoIterator<Item = &'p mut Box<dyn Program>>,
    port: &mut dyn DataPort,
) -> Result<OpCounts> {
    let mut counts = OpCounts::default();
    for p in programs {
        while let Some(op) = p.next_op(port)? {
            counts.record(port, &op)?;
        }
    }
    Ok(counts)
}
