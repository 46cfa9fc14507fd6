//! Workload models. Each workload allocates its data, runs an init stage
//! (functional, before the checkpoint) and then a sequence of measured
//! stages, one region of interest each.

pub mod graph;
pub mod program;
pub mod stream;
pub mod walker;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fabric::{Binding, PagePolicy, PAGE_SIZE};
use crate::memory::{DataPort, NodeMemory};

pub use graph::{GraphKernel, GraphSpec, GraphView};
pub use program::{run_functional, Op, OpCounts, Program};
pub use stream::{Kernel, StreamArrays, StreamSpec};
pub use walker::{Pattern, WalkerSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphPlacement {
    /// Read-only mapping of the writer's shared segment.
    #[default]
    Shared,
    /// A private copy built in the reader's local memory.
    Local,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    Idle,
    Stream(StreamSpec),
    Walker(WalkerSpec),
    GraphWriter {
        segment: String,
        graph: GraphSpec,
    },
    GraphReader {
        segment: String,
        graph: GraphSpec,
        kernels: Vec<GraphKernel>,
        #[serde(default)]
        placement: GraphPlacement,
    },
}

/// Virtual addresses of a workload's data, fixed at allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Idle,
    Stream(StreamArrays),
    Walker { base: u64 },
    GraphWriter { base: u64 },
    GraphReader(GraphView),
}

/// One measured stage: its label, per-core programs and the bytes the
/// workload itself reports moving.
pub struct Stage {
    pub label: String,
    pub programs: Vec<Box<dyn Program>>,
    pub workload_bytes: u64,
}

fn pages(bytes: u64) -> u64 {
    bytes.next_multiple_of(PAGE_SIZE)
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WorkloadSpec::Stream(s) if s.array_bytes < 8 => Err(SimError::validation(
                "workload.array_bytes",
                "must hold at least one element",
            )),
            WorkloadSpec::Walker(w) => w.validate(),
            WorkloadSpec::GraphWriter { graph, .. } => graph.validate(),
            WorkloadSpec::GraphReader { graph, kernels, .. } => {
                if kernels.is_empty() {
                    return Err(SimError::validation(
                        "workload.kernels",
                        "must name at least one kernel",
                    ));
                }
                graph.validate()
            }
            _ => Ok(()),
        }
    }

    /// Mixes the cluster seed into every seeded part of the workload. A zero
    /// seed leaves the spec unchanged.
    pub fn reseeded(&self, seed: u64) -> WorkloadSpec {
        let mut w = self.clone();
        match &mut w {
            WorkloadSpec::Walker(spec) => match &mut spec.pattern {
                Pattern::Random { seed: s } | Pattern::PointerChase { seed: s } => *s ^= seed,
                _ => {}
            },
            WorkloadSpec::GraphWriter { graph, .. } | WorkloadSpec::GraphReader { graph, .. } => {
                graph.seed ^= seed
            }
            _ => {}
        }
        w
    }

    /// The shared segment this workload maps, if any.
    pub fn segment(&self) -> Option<&str> {
        match self {
            WorkloadSpec::GraphWriter { segment, .. } => Some(segment),
            WorkloadSpec::GraphReader {
                segment,
                placement: GraphPlacement::Shared,
                ..
            } => Some(segment),
            _ => None,
        }
    }

    /// Bytes allocated under the node's page policy.
    pub fn policy_footprint(&self) -> u64 {
        match self {
            WorkloadSpec::Stream(s) => 3 * pages(s.array_bytes),
            WorkloadSpec::Walker(w) => pages(w.footprint),
            _ => 0,
        }
    }

    /// Bytes that must come from local memory whatever the policy.
    pub fn local_footprint(&self) -> u64 {
        match self {
            WorkloadSpec::GraphReader {
                graph, placement, ..
            } => {
                let scratch = 2 * pages(GraphView::scratch_bytes(graph.vertices as u64));
                match placement {
                    GraphPlacement::Shared => scratch,
                    GraphPlacement::Local => scratch + graph.segment_bytes(),
                }
            }
            _ => 0,
        }
    }

    /// Maps this workload's data into `mem`. `segment` is the host's
    /// binding to the shared segment named by [`WorkloadSpec::segment`].
    pub fn allocate(
        &self,
        mem: &mut NodeMemory,
        policy: &PagePolicy,
        segment: Option<&Binding>,
    ) -> Result<Layout> {
        let need_segment = || {
            segment.ok_or_else(|| {
                SimError::InvalidRange(format!("host {} has no binding to its segment", mem.host))
            })
        };
        Ok(match self {
            WorkloadSpec::Idle => Layout::Idle,
            WorkloadSpec::Stream(s) => {
                let a = mem.mmap(policy, s.array_bytes)?;
                let b = mem.mmap(policy, s.array_bytes)?;
                let c = mem.mmap(policy, s.array_bytes)?;
                Layout::Stream(StreamArrays { a, b, c })
            }
            WorkloadSpec::Walker(w) => Layout::Walker {
                base: mem.mmap(policy, w.footprint)?,
            },
            WorkloadSpec::GraphWriter { graph, .. } => {
                let b = need_segment()?;
                if b.hpa.len() < graph.layout().bytes {
                    return Err(SimError::CapacityExceeded {
                        what: "shared graph segment".into(),
                        requested: graph.layout().bytes,
                        available: b.hpa.len(),
                    });
                }
                mem.shared_ranges.push(b.hpa);
                Layout::GraphWriter {
                    base: mem.map.map_binding(b)?,
                }
            }
            WorkloadSpec::GraphReader {
                graph, placement, ..
            } => {
                let n = graph.vertices as u64;
                let g = match placement {
                    GraphPlacement::Shared => {
                        let b = need_segment()?;
                        mem.shared_ranges.push(b.hpa);
                        mem.map.map_binding(b)?
                    }
                    GraphPlacement::Local => {
                        mem.mmap(&PagePolicy::local(), graph.segment_bytes())?
                    }
                };
                let bfs = mem.mmap(&PagePolicy::local(), GraphView::scratch_bytes(n))?;
                let pr = mem.mmap(&PagePolicy::local(), GraphView::scratch_bytes(n))?;
                Layout::GraphReader(GraphView {
                    graph: g,
                    n,
                    bfs_scratch: bfs,
                    pr_scratch: pr,
                })
            }
        })
    }

    /// Programs of the init stage, indexed by core.
    pub fn init_programs(&self, layout: &Layout, cores: usize) -> Vec<Box<dyn Program>> {
        match (self, layout) {
            (WorkloadSpec::Stream(s), Layout::Stream(arr)) => stream::init_programs(s, *arr, cores),
            (WorkloadSpec::Walker(w), Layout::Walker { base }) => {
                walker::init_programs(w, *base, cores)
            }
            (WorkloadSpec::GraphWriter { graph, .. }, Layout::GraphWriter { base }) => {
                vec![graph::build_program(graph, *base)]
            }
            (
                WorkloadSpec::GraphReader {
                    graph,
                    placement: GraphPlacement::Local,
                    ..
                },
                Layout::GraphReader(v),
            ) => {
                vec![graph::build_program(graph, v.graph)]
            }
            _ => Vec::new(),
        }
    }

    pub fn stage_labels(&self) -> Vec<String> {
        match self {
            WorkloadSpec::Stream(s) => s.kernels.iter().map(|k| k.label().to_string()).collect(),
            WorkloadSpec::Walker(_) => vec!["walk".into()],
            WorkloadSpec::GraphReader { kernels, .. } => {
                kernels.iter().map(|k| k.label().to_string()).collect()
            }
            WorkloadSpec::Idle | WorkloadSpec::GraphWriter { .. } => Vec::new(),
        }
    }

    /// Builds measured stage `index`.
    pub fn stage(&self, index: usize, layout: &Layout, cores: usize) -> Stage {
        let label = self.stage_labels()[index].clone();
        match (self, layout) {
            (WorkloadSpec::Stream(s), Layout::Stream(arr)) => {
                let k = s.kernels[index];
                Stage {
                    label,
                    programs: stream::kernel_programs(s, k, *arr, cores),
                    workload_bytes: k.bytes_per_element() * s.elements(),
                }
            }
            (WorkloadSpec::Walker(w), Layout::Walker { base }) => Stage {
                label,
                programs: walker::walk_programs(w, *base, cores),
                workload_bytes: 0,
            },
            (WorkloadSpec::GraphReader { graph, kernels, .. }, Layout::GraphReader(v)) => Stage {
                label,
                programs: vec![graph::kernel_program(kernels[index], graph, *v)],
                workload_bytes: 0,
            },
            _ => unreachable!("stage {index} requested for a workload without stages"),
        }
    }

    /// Result digests by stage label, for workloads that produce one.
    pub fn digests(
        &self,
        layout: &Layout,
        port: &mut dyn DataPort,
    ) -> Result<Vec<(String, String)>> {
        match (self, layout) {
            (WorkloadSpec::GraphReader { kernels, .. }, Layout::GraphReader(v)) => kernels
                .iter()
                .map(|k| Ok((k.label().to_string(), graph::result_digest(*k, v, port)?)))
                .collect(),
            _ => Ok(Vec::new()),
        }
    }
}
