//! Footprint walker: touches every line of a working set once per
//! iteration in a configurable order, with a fixed compute cost per line.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fabric::PAGE_SIZE;
use crate::memory::DataPort;
use crate::workloads::program::{Batched, Op, Program, Step};

const LINE: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    Sequential,
    /// Stride in lines.
    Strided {
        stride: u64,
    },
    Random {
        seed: u64,
    },
    PointerChase {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerSpec {
    #[serde(with = "crate::config::bytes")]
    pub footprint: u64,
    #[serde(default = "default_pattern")]
    pub pattern: Pattern,
    #[serde(default = "default_compute")]
    pub compute_cost: u32,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
}

fn default_pattern() -> Pattern {
    Pattern::Random { seed: 7 }
}

fn default_compute() -> u32 {
    4
}

fn default_iterations() -> u32 {
    1
}

impl WalkerSpec {
    pub fn new(footprint: u64, pattern: Pattern) -> Self {
        WalkerSpec {
            footprint,
            pattern,
            compute_cost: default_compute(),
            iterations: default_iterations(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.footprint < PAGE_SIZE {
            return Err(SimError::validation(
                "workload.footprint",
                "must be at least one page",
            ));
        }
        if let Pattern::Strided { stride: 0 } = self.pattern {
            return Err(SimError::validation(
                "workload.pattern.stride",
                "must be >= 1",
            ));
        }
        if self.iterations == 0 {
            return Err(SimError::validation("workload.iterations", "must be >= 1"));
        }
        Ok(())
    }

    pub fn lines(&self) -> u64 {
        self.footprint / LINE
    }
}

/// Lines owned by `core`: every line congruent to `core` modulo `cores`,
/// so each core sweeps the whole footprint uniformly.
fn core_lines(total: u64, core: usize, cores: usize) -> Vec<u64> {
    (core as u64..total).step_by(cores).collect()
}

fn shuffled(mut v: Vec<u64>, seed: u64, core: usize) -> Vec<u64> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (core as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    v.shuffle(&mut rng);
    v
}

/// Visit order of one core's lines for one iteration.
pub fn visit_order(spec: &WalkerSpec, core: usize, cores: usize) -> Vec<u64> {
    let mine = core_lines(spec.lines(), core, cores);
    match spec.pattern {
        Pattern::Sequential => mine,
        Pattern::Strided { stride } => {
            let s = stride as usize;
            (0..s)
                .flat_map(|start| {
                    mine.iter()
                        .skip(start)
                        .step_by(s)
                        .copied()
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        Pattern::Random { seed } | Pattern::PointerChase { seed } => shuffled(mine, seed, core),
    }
}

/// First touch. For pointer chasing, each line's first word holds the
/// address of the next line in the core's cycle.
struct InitStep {
    base: u64,
    order: Vec<u64>,
    chase: bool,
    j: usize,
}

impl Step for InitStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        if self.j == self.order.len() {
            return Ok(false);
        }
        let v = self.base + self.order[self.j] * LINE;
        let value = if self.chase {
            self.base + self.order[(self.j + 1) % self.order.len()] * LINE
        } else {
            self.order[self.j]
        };
        port.write_u64(v, value)?;
        out.push_back(Op::Store { vaddr: v });
        self.j += 1;
        Ok(true)
    }
}

struct WalkStep {
    base: u64,
    order: Vec<u64>,
    chase_from: Option<u64>,
    compute: u32,
    j: usize,
    total: usize,
    sum: u64,
}

impl Step for WalkStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        if self.j == self.total {
            return Ok(false);
        }
        if self.compute > 0 {
            out.push_back(Op::Compute {
                cycles: self.compute,
            });
        }
        match self.chase_from {
            Some(cur) => {
                let next = port.read_u64(cur)?;
                out.push_back(Op::Load {
                    vaddr: cur,
                    blocking: true,
                });
                self.chase_from = Some(next);
            }
            None => {
                let v = self.base + self.order[self.j % self.order.len()] * LINE;
                self.sum = self.sum.wrapping_add(port.read_u64(v)?);
                out.push_back(Op::Load {
                    vaddr: v,
                    blocking: false,
                });
            }
        }
        self.j += 1;
        Ok(true)
    }
}

pub fn init_programs(spec: &WalkerSpec, base: u64, cores: usize) -> Vec<Box<dyn Program>> {
    let chase = matches!(spec.pattern, Pattern::PointerChase { .. });
    (0..cores)
        .map(|core| {
            let order = visit_order(spec, core, cores);
            Box::new(Batched::new(InitStep {
                base,
                order,
                chase,
                j: 0,
            })) as Box<dyn Program>
        })
        .collect()
}

pub fn walk_programs(spec: &WalkerSpec, base: u64, cores: usize) -> Vec<Box<dyn Program>> {
    (0..cores)
        .map(|core| {
            let order = visit_order(spec, core, cores);
            let total = order.len() * spec.iterations as usize;
            let chase_from = match spec.pattern {
                Pattern::PointerChase { .. } => order.first().map(|l| base + l * LINE),
                _ => None,
            };
            let step = WalkStep {
                base,
                order,
                chase_from,
                compute: spec.compute_cost,
                j: 0,
                total,
                sum: 0,
            };
            Box::new(Batched::new(step)) as Box<dyn Program>
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_line_visited_once_per_iteration() {
        for pattern in [
            Pattern::Sequential,
            Pattern::Strided { stride: 3 },
            Pattern::Random { seed: 1 },
            Pattern::PointerChase { seed: 2 },
        ] {
            let spec = WalkerSpec::new(64 * 100, pattern);
            let mut all: Vec<u64> = (0..8).flat_map(|c| visit_order(&spec, c, 8)).collect();
            all.sort_unstable();
            assert_eq!(all, (0..100).collect::<Vec<_>>(), "{pattern:?}");
        }
    }

    #[test]
    fn random_order_is_seeded() {
        let spec = WalkerSpec::new(1 << 16, Pattern::Random { seed: 9 });
        assert_eq!(visit_order(&spec, 1, 4), visit_order(&spec, 1, 4));
        let other = WalkerSpec::new(1 << 16, Pattern::Random { seed: 10 });
        assert_ne!(visit_order(&spec, 1, 4), visit_order(&other, 1, 4));
    }
}
