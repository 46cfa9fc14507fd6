//! Synthetic CSR graphs and the BFS / PageRank kernels that read them.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::fabric::PAGE_SIZE;
use crate::memory::DataPort;
use crate::stats::hex;
use crate::workloads::program::{Batched, Op, Program, Step};

pub const DAMPING: f64 = 0.85;
pub const PAGERANK_ITERATIONS: u32 = 20;
const INF: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKernel {
    Bfs,
    Pagerank,
}

impl GraphKernel {
    pub fn label(self) -> &'static str {
        match self {
            GraphKernel::Bfs => "bfs",
            GraphKernel::Pagerank => "pagerank",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: u32,
    pub edges: u64,
    pub seed: u64,
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vertices == 0 {
            return Err(SimError::validation("graph.vertices", "must be >= 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> CsrLayout {
        let n = self.vertices as u64;
        let edges = ((n + 1) * 8).next_multiple_of(64);
        CsrLayout {
            offsets: 0,
            edges,
            bytes: edges + self.edges * 4,
        }
    }

    /// Bytes to reserve for the CSR image, rounded up to whole pages.
    pub fn segment_bytes(&self) -> u64 {
        self.layout()
            .bytes
            .next_multiple_of(PAGE_SIZE)
            .max(PAGE_SIZE)
    }
}

/// Byte offsets of the CSR arrays inside the graph image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsrLayout {
    pub offsets: u64,
    pub edges: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<u64>,
    pub edges: Vec<u32>,
}

impl Csr {
    pub fn from_edges(n: u32, list: &[(u32, u32)]) -> Csr {
        let mut offsets = vec![0u64; n as usize + 1];
        for &(s, _) in list {
            offsets[s as usize + 1] += 1;
        }
        for i in 0..n as usize {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut edges = vec![0u32; list.len()];
        for &(s, d) in list {
            edges[cursor[s as usize] as usize] = d;
            cursor[s as usize] += 1;
        }
        Csr { offsets, edges }
    }

    /// Seeded uniform random graph: every edge picks source and target
    /// uniformly.
    pub fn generate(spec: &GraphSpec) -> Csr {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.vertices;
        let list: Vec<(u32, u32)> = (0..spec.edges)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        Csr::from_edges(n, &list)
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Writes a CSR image word by word starting at `base`.
struct BuildStep {
    base: u64,
    layout: CsrLayout,
    csr: Csr,
    i: usize,
}

impl Step for BuildStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        let no = self.csr.offsets.len();
        let v = if self.i < no {
            let v = self.base + self.layout.offsets + self.i as u64 * 8;
            port.write_u64(v, self.csr.offsets[self.i])?;
            v
        } else if self.i - no < self.csr.edges.len() {
            let k = self.i - no;
            let v = self.base + self.layout.edges + k as u64 * 4;
            port.write_u32(v, self.csr.edges[k])?;
            v
        } else {
            return Ok(false);
        };
        out.push_back(Op::Store { vaddr: v });
        self.i += 1;
        Ok(true)
    }
}

pub fn build_program(spec: &GraphSpec, base: u64) -> Box<dyn Program> {
    Box::new(Batched::new(BuildStep {
        base,
        layout: spec.layout(),
        csr: Csr::generate(spec),
        i: 0,
    }))
}

/// Where a reader finds the graph and its private scratch arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphView {
    pub graph: u64,
    pub n: u64,
    /// BFS: dist[n] then queue[n], u64 each.
    pub bfs_scratch: u64,
    /// PageRank: rank[n] then next[n], f64 each.
    pub pr_scratch: u64,
}

impl GraphView {
    fn offset(&self, spec: &GraphSpec, u: u64) -> u64 {
        self.graph + spec.layout().offsets + u * 8
    }

    fn edge(&self, spec: &GraphSpec, k: u64) -> u64 {
        self.graph + spec.layout().edges + k * 4
    }

    pub fn scratch_bytes(n: u64) -> u64 {
        16 * n
    }
}

enum BfsPhase {
    Init(u64),
    Seed,
    Pop,
    Scan { du: u64, k: u64, hi: u64 },
}

struct BfsStep {
    spec: GraphSpec,
    view: GraphView,
    phase: BfsPhase,
    head: u64,
    tail: u64,
}

impl Step for BfsStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        let n = self.view.n;
        let dist = self.view.bfs_scratch;
        let queue = dist + 8 * n;
        let load = |vaddr| Op::Load {
            vaddr,
            blocking: true,
        };
        match self.phase {
            BfsPhase::Init(v) => {
                port.write_u64(dist + 8 * v, INF)?;
                out.push_back(Op::Store {
                    vaddr: dist + 8 * v,
                });
                self.phase = if v + 1 == n {
                    BfsPhase::Seed
                } else {
                    BfsPhase::Init(v + 1)
                };
            }
            BfsPhase::Seed => {
                port.write_u64(dist, 0)?;
                port.write_u64(queue, 0)?;
                out.extend([Op::Store { vaddr: dist }, Op::Store { vaddr: queue }]);
                self.tail = 1;
                self.phase = BfsPhase::Pop;
            }
            BfsPhase::Pop => {
                if self.head == self.tail {
                    return Ok(false);
                }
                let qa = queue + 8 * self.head;
                let u = port.read_u64(qa)?;
                let du = port.read_u64(dist + 8 * u)?;
                let (oa, ob) = (
                    self.view.offset(&self.spec, u),
                    self.view.offset(&self.spec, u + 1),
                );
                let lo = port.read_u64(oa)?;
                let hi = port.read_u64(ob)?;
                out.extend([load(qa), load(dist + 8 * u), load(oa), load(ob)]);
                self.head += 1;
                self.phase = BfsPhase::Scan { du, k: lo, hi };
            }
            BfsPhase::Scan { du, k, hi } => {
                if k == hi {
                    self.phase = BfsPhase::Pop;
                    return Ok(true);
                }
                let ea = self.view.edge(&self.spec, k);
                let w = port.read_u32(ea)? as u64;
                let da = dist + 8 * w;
                let dw = port.read_u64(da)?;
                out.extend([load(ea), load(da)]);
                if dw == INF {
                    port.write_u64(da, du + 1)?;
                    let qa = queue + 8 * self.tail;
                    port.write_u64(qa, w)?;
                    out.extend([Op::Store { vaddr: da }, Op::Store { vaddr: qa }]);
                    self.tail += 1;
                }
                self.phase = BfsPhase::Scan { du, k: k + 1, hi };
            }
        }
        Ok(true)
    }
}

enum PrPhase {
    Init(u64),
    Zero(u64),
    Push {
        u: u64,
        k: u64,
        hi: u64,
        contrib: f64,
    },
    Apply(u64),
}

struct PageRankStep {
    spec: GraphSpec,
    view: GraphView,
    iter: u32,
    phase: PrPhase,
}

impl Step for PageRankStep {
    fn step(&mut self, port: &mut dyn DataPort, out: &mut VecDeque<Op>) -> Result<bool> {
        let n = self.view.n;
        let rank = self.view.pr_scratch;
        let next = rank + 8 * n;
        let load = |vaddr| Op::Load {
            vaddr,
            blocking: false,
        };
        match self.phase {
            PrPhase::Init(v) => {
                port.write_f64(rank + 8 * v, 1.0 / n as f64)?;
                out.push_back(Op::Store {
                    vaddr: rank + 8 * v,
                });
                self.phase = if v + 1 == n {
                    PrPhase::Zero(0)
                } else {
                    PrPhase::Init(v + 1)
                };
            }
            PrPhase::Zero(v) => {
                if self.iter == PAGERANK_ITERATIONS {
                    return Ok(false);
                }
                port.write_f64(next + 8 * v, 0.0)?;
                out.push_back(Op::Store {
                    vaddr: next + 8 * v,
                });
                self.phase = if v + 1 == n {
                    self.start_vertex(0, port, out)?
                } else {
                    PrPhase::Zero(v + 1)
                };
            }
            PrPhase::Push { u, k, hi, contrib } => {
                if k == hi {
                    self.phase = if u + 1 == n {
                        PrPhase::Apply(0)
                    } else {
                        self.start_vertex(u + 1, port, out)?
                    };
                    return Ok(true);
                }
                let ea = self.view.edge(&self.spec, k);
                let w = port.read_u32(ea)? as u64;
                let na = next + 8 * w;
                let x = port.read_f64(na)?;
                port.write_f64(na, x + contrib)?;
                out.extend([load(ea), load(na), Op::Store { vaddr: na }]);
                self.phase = PrPhase::Push {
                    u,
                    k: k + 1,
                    hi,
                    contrib,
                };
            }
            PrPhase::Apply(v) => {
                let na = next + 8 * v;
                let x = port.read_f64(na)?;
                port.write_f64(rank + 8 * v, (1.0 - DAMPING) / n as f64 + DAMPING * x)?;
                out.extend([
                    load(na),
                    Op::Store {
                        vaddr: rank + 8 * v,
                    },
                ]);
                if v + 1 == n {
                    self.iter += 1;
                    self.phase = PrPhase::Zero(0);
                } else {
                    self.phase = PrPhase::Apply(v + 1);
                }
            }
        }
        Ok(true)
    }
}

impl PageRankStep {
    fn start_vertex(
        &self,
        u: u64,
        port: &mut dyn DataPort,
        out: &mut VecDeque<Op>,
    ) -> Result<PrPhase> {
        let (oa, ob) = (
            self.view.offset(&self.spec, u),
            self.view.offset(&self.spec, u + 1),
        );
        let ra = self.view.pr_scratch + 8 * u;
        let lo = port.read_u64(oa)?;
        let hi = port.read_u64(ob)?;
        let r = port.read_f64(ra)?;
        out.extend([
            Op::Load {
                vaddr: oa,
                blocking: false,
            },
            Op::Load {
                vaddr: ob,
                blocking: false,
            },
        ]);
        out.push_back(Op::Load {
            vaddr: ra,
            blocking: false,
        });
        let contrib = if hi > lo { r / (hi - lo) as f64 } else { 0.0 };
        Ok(PrPhase::Push {
            u,
            k: lo,
            hi,
            contrib,
        })
    }
}

pub fn kernel_program(kernel: GraphKernel, spec: &GraphSpec, view: GraphView) -> Box<dyn Program> {
    match kernel {
        GraphKernel::Bfs => Box::new(Batched::new(BfsStep {
            spec: *spec,
            view,
            phase: BfsPhase::Init(0),
            head: 0,
            tail: 0,
        })),
        GraphKernel::Pagerank => Box::new(Batched::new(PageRankStep {
            spec: *spec,
            view,
            iter: 0,
            phase: PrPhase::Init(0),
        })),
    }
}

/// Digest of a kernel's result array as left in the reader's scratch.
pub fn result_digest(
    kernel: GraphKernel,
    view: &GraphView,
    port: &mut dyn DataPort,
) -> Result<String> {
    let base = match kernel {
        GraphKernel::Bfs => view.bfs_scratch,
        GraphKernel::Pagerank => view.pr_scratch,
    };
    let mut h = Sha256::new();
    for v in 0..view.n {
        h.update(port.read_u64(base + 8 * v)?.to_le_bytes());
    }
    Ok(hex(&h.finalize()))
}

/// Plain in-memory BFS from vertex 0; unreachable vertices hold `u64::MAX`.
pub fn reference_bfs(g: &Csr) -> Vec<u64> {
    let mut dist = vec![INF; g.n()];
    let mut queue = VecDeque::from([0usize]);
    dist[0] = 0;
    while let Some(u) = queue.pop_front() {
        for k in g.offsets[u]..g.offsets[u + 1] {
            let w = g.edges[k as usize] as usize;
            if dist[w] == INF {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Plain in-memory push PageRank with the kernel's float evaluation order.
pub fn reference_pagerank(g: &Csr) -> Vec<f64> {
    let n = g.n();
    let mut rank = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..PAGERANK_ITERATIONS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (u, &r) in rank.iter().enumerate() {
            let (lo, hi) = (g.offsets[u], g.offsets[u + 1]);
            let contrib = if hi > lo { r / (hi - lo) as f64 } else { 0.0 };
            for k in lo..hi {
                let w = g.edges[k as usize] as usize;
                next[w] += contrib;
            }
        }
        for (r, &x) in rank.iter_mut().zip(&next) {
            *r = (1.0 - DAMPING) / n as f64 + DAMPING * x;
        }
    }
    rank
}

pub fn digest_words(words: impl IntoIterator<Item = u64>) -> String {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.to_le_bytes());
    }
    hex(&h.finalize())
}

pub fn reference_digest(kernel: GraphKernel, g: &Csr) -> String {
    match kernel {
        GraphKernel::Bfs => digest_words(reference_bfs(g)),
        GraphKernel::Pagerank => digest_words(reference_pagerank(g).into_iter().map(f64::to_bits)),
    }
}
