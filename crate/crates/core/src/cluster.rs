//! Assembly of nodes, local controllers and the remote memory node into one
//! simulation, and collection of their counters into a snapshot.

use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::ClusterConfig;
use crate::engine::{Component, ComponentId, Ctx, SimTime, Simulation, SyncConfig};
use crate::error::Result;
use crate::memnet::calibrate::TrafficGen;
use crate::memnet::{LocalMemory, MemReq, RemoteMemory, RemoteParams};
use crate::memory::{NodeMemory, PageStore};
use crate::node::{NodeParams, NodeSim};
use crate::stats::{hex, NodeStats, StatSnapshot};
use crate::workloads::Layout;

#[derive(Clone, Debug)]
pub enum Msg {
    /// Begin the node's next stage (or finish when none is left).
    StartStage,
    CoreStep(u16),
    LocalRequest(MemReq),
    LocalDone(MemReq),
    RemoteRequest(MemReq),
    RemoteResponse(MemReq),
    CrossbarTick,
    ChannelTick(u16),
    ChannelDone(u16, MemReq),
    GenIssue,
}

pub enum Unit {
    Node(Box<NodeSim>),
    Local(LocalMemory),
    Remote(Box<RemoteMemory>),
    Gen(TrafficGen),
}

impl Component<Msg> for Unit {
    fn handle(&mut self, now: SimTime, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        match self {
            Unit::Node(n) => n.handle(now, msg, ctx),
            Unit::Local(l) => l.handle(now, msg, ctx),
            Unit::Remote(r) => r.handle(now, msg, ctx),
            Unit::Gen(g) => g.handle(now, msg, ctx),
        }
    }
}

pub fn node_id(host: usize) -> ComponentId {
    ComponentId(2 * host as u32)
}

pub fn local_id(host: usize) -> ComponentId {
    ComponentId(2 * host as u32 + 1)
}

pub fn remote_id(hosts: usize) -> ComponentId {
    ComponentId(2 * hosts as u32)
}

/// Identifies a run by its configuration. The thread count is excluded
/// because it never changes results.
pub fn run_id(cfg: &ClusterConfig, tag: &str) -> String {
    let mut c = cfg.clone();
    c.sync.threads = 1;
    let mut h = Sha256::new();
    h.update(c.to_toml().as_bytes());
    h.update(tag.as_bytes());
    hex(&h.finalize()[..8])
}

/// Initial memory image of the cluster handed to the timing simulation.
pub struct Image<'a> {
    pub nodes: &'a [NodeMemory],
    pub layouts: &'a [Layout],
    pub shared: &'a PageStore,
}

pub struct RunOutput {
    pub snapshot: StatSnapshot,
    /// Result digests per node, by stage label.
    pub digests: Vec<Vec<(String, String)>>,
    /// Node memories after the run.
    pub memories: Vec<NodeMemory>,
    /// The shared segment store as the simulation saw it.
    pub shared: Arc<PageStore>,
    pub peak_outstanding: Vec<u32>,
}

/// Runs every node's measured stages under timing.
///
/// With one thread all components share a single partition. Otherwise each
/// node and its local controller form a partition and the remote memory
/// node has its own. Event order per component is identical either way.
pub fn simulate(cfg: &ClusterConfig, image: Image<'_>, tag: &str) -> Result<RunOutput> {
    let started = Instant::now();
    let hosts = cfg.hosts();
    let n = hosts.len();
    let shared = Arc::new(image.shared.clone());
    let remote = RemoteMemory::new(RemoteParams {
        device_base: cfg.device.base,
        capacity: cfg.device.capacity,
        channels: cfg.device.channels,
        timing: cfg.device.dram.clone(),
        link: cfg.link.clone(),
        xbar_cycle: SimTime::from_ps(cfg.device.xbar_cycle_ps),
        endpoints: (0..n).map(node_id).collect(),
    });
    let mut pairs = Vec::with_capacity(n);
    for (i, h) in hosts.iter().enumerate() {
        let node = NodeSim::new(
            NodeParams {
                host: i,
                cfg: h.hw.clone(),
                link: cfg.link.clone(),
                device_base: cfg.device.base,
                local_id: local_id(i),
                remote_id: remote_id(n),
                workload: h.workload.clone(),
                layout: image.layouts[i],
                timed_init: false,
            },
            image.nodes[i].clone(),
            Arc::clone(&shared),
        );
        let local = LocalMemory::new(
            node_id(i),
            &cfg.device.dram,
            h.hw.local_channels,
            h.hw.local_capacity,
        );
        pairs.push([Unit::Node(Box::new(node)), Unit::Local(local)]);
    }
    let threads = cfg.sync.threads;
    let layout: Vec<Vec<Unit>> = if threads == 1 {
        let mut all: Vec<Unit> = pairs.into_iter().flatten().collect();
        all.push(Unit::Remote(Box::new(remote)));
        vec![all]
    } else {
        let mut parts: Vec<Vec<Unit>> = pairs.into_iter().map(Vec::from).collect();
        parts.push(vec![Unit::Remote(Box::new(remote))]);
        parts
    };
    let mut sim = Simulation::new(layout);
    for i in 0..n {
        sim.schedule(SimTime::ZERO, node_id(i), Msg::StartStage)?;
    }
    let end = sim.run_epochs(
        SyncConfig {
            lookahead: cfg.lookahead(),
            threads,
        },
        cfg.horizon(),
    )?;
    let events = sim.delivered();

    let mut units = sim.into_components().into_iter();
    let mut nodes = Vec::with_capacity(n);
    let mut locals = Vec::with_capacity(n);
    for _ in 0..n {
        match (units.next(), units.next()) {
            (Some(Unit::Node(node)), Some(Unit::Local(l))) => {
                nodes.push(node);
                locals.push(l);
            }
            _ => unreachable!("node/local pairs come first"),
        }
    }
    let Some(Unit::Remote(remote)) = units.next() else {
        unreachable!("remote memory comes last")
    };

    let complete = nodes.iter().all(|n| n.finished());
    let mut stats = Vec::with_capacity(n);
    let mut digests = Vec::with_capacity(n);
    let mut peak_outstanding = Vec::with_capacity(n);
    for (i, (node, local)) in nodes.iter_mut().zip(&locals).enumerate() {
        let mut rois = std::mem::take(&mut node.rois);
        for (k, roi) in rois.iter_mut().enumerate() {
            let k = k as u16;
            if let Some(c) = local.stats.get(&k) {
                roi.local_ctrl = c.clone();
            }
            if let Some(c) = remote.stats.get(&(i as u32, k)) {
                roi.xbar_ingress_bytes = c.ingress_bytes;
                roi.remote_ctrl = c.ctrl.clone();
            }
        }
        digests.push(if complete {
            node.digests()?
        } else {
            Vec::new()
        });
        peak_outstanding.push(node.peak_outstanding);
        stats.push(NodeStats {
            node: i,
            arch_profile: node.config().arch_profile.clone(),
            rois,
        });
    }
    let snapshot = StatSnapshot {
        run_id: run_id(cfg, tag),
        nodes: stats,
        end_time: end,
        events,
        complete,
        wallclock_s: started.elapsed().as_secs_f64(),
    };
    let memories = nodes.into_iter().map(|n| n.mem).collect();
    Ok(RunOutput {
        snapshot,
        digests,
        memories,
        shared,
        peak_outstanding,
    })
}
