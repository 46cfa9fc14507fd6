//! Fast-forward, checkpoint and restore.
//!
//! The functional phase binds device memory, lays out each workload and runs
//! its init stage with zero-latency memory. The resulting image can be saved
//! to a checkpoint and restored under any timing configuration that
//! describes the same topology.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{self, Image, RunOutput};
use crate::config::ClusterConfig;
use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::fabric::{AddrRange, Binding, FabricManager, PageMap, PAGE_SIZE};
use crate::memory::{MemPort, NodeMemory, PageStore, SharedAccess};
use crate::stats::{NodeStats, RoiStats, StatSnapshot};
use crate::workloads::{run_functional, Layout, OpCounts};

pub const MAGIC: &[u8; 8] = b"DMSIMCKP";
pub const VERSION: u32 = 1;
/// Pages per data section.
pub const CHUNK_PAGES: usize = 256;

/// Cluster memory image after the functional phase.
#[derive(Clone, Debug)]
pub struct ClusterState {
    pub config: ClusterConfig,
    pub fabric: FabricManager,
    pub nodes: Vec<NodeMemory>,
    pub layouts: Vec<Layout>,
    /// Contents of all shared segments.
    pub shared: PageStore,
    /// Shared segments by name.
    pub segments: BTreeMap<String, AddrRange>,
    /// Operations each node's init stage retired.
    pub init_counts: Vec<OpCounts>,
}

/// Which phase to run on a restored image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Zero-latency execution; only operation counts are meaningful.
    Functional,
    /// Full timing simulation.
    Timing,
}

fn init_failure(node: usize) -> impl FnOnce(SimError) -> SimError {
    move |e| SimError::InitFailure {
        node,
        source: Box::new(e),
    }
}

/// Binds device memory, allocates every workload and runs its init stage.
pub fn fast_forward(cfg: &ClusterConfig) -> Result<ClusterState> {
    cfg.validate()?;
    let hosts = cfg.hosts();
    let mut fabric = FabricManager::new(cfg.device.base, cfg.device.capacity)?;
    let mut seg_binding: Vec<Option<Binding>> = vec![None; hosts.len()];
    let mut segments = BTreeMap::new();
    let mut cursor = cfg.device.base;
    for s in &cfg.shared {
        let range = AddrRange::with_len(cursor, cfg.segment_size(s))?;
        cursor = range.end;
        let bindings = fabric.bind_shared(range, s.writer, &s.readers)?;
        let owners = std::iter::once(s.writer).chain(s.readers.iter().copied());
        for (host, b) in owners.zip(bindings) {
            seg_binding[host] = Some(b);
        }
        segments.insert(s.name.clone(), range);
    }

    let mut nodes = Vec::with_capacity(hosts.len());
    let mut layouts = Vec::with_capacity(hosts.len());
    for (i, h) in hosts.iter().enumerate() {
        let mut mem = NodeMemory::new(i, PageMap::new(i, h.hw.local_capacity));
        if h.remote_bytes > 0 {
            let b = fabric.bind_pooled(i, h.remote_bytes)?;
            mem.map.attach_pool(&b)?;
        }
        let layout = h
            .workload
            .allocate(&mut mem, &h.policy, seg_binding[i].as_ref())
            .map_err(init_failure(i))?;
        nodes.push(mem);
        layouts.push(layout);
    }

    let mut shared = PageStore::new();
    let mut init_counts = Vec::with_capacity(hosts.len());
    for (i, h) in hosts.iter().enumerate() {
        let mut programs = h.workload.init_programs(&layouts[i], h.hw.cores as usize);
        let mut port = MemPort::new(&mut nodes[i], SharedAccess::Writable(&mut shared));
        init_counts.push(run_functional(programs.iter_mut(), &mut port).map_err(init_failure(i))?);
    }
    Ok(ClusterState {
        config: cfg.clone(),
        fabric,
        nodes,
        layouts,
        shared,
        segments,
        init_counts,
    })
}

impl ClusterState {
    pub fn segment_checksum(&self, name: &str) -> Option<[u8; 32]> {
        self.segments.get(name).map(|r| self.shared.checksum(r))
    }

    /// Rejects timing configs that describe a different topology or image.
    pub fn check_compatible(&self, timing: &ClusterConfig) -> Result<()> {
        match self.config.topology_conflict(timing) {
            Some(why) => Err(SimError::ConfigConflict(why)),
            None => Ok(()),
        }
    }

    /// Runs the measured stages of every node under `timing`.
    pub fn run(&self, timing: &ClusterConfig, phase: Phase) -> Result<RunOutput> {
        timing.validate()?;
        self.check_compatible(timing)?;
        match phase {
            Phase::Timing => cluster::simulate(
                timing,
                Image {
                    nodes: &self.nodes,
                    layouts: &self.layouts,
                    shared: &self.shared,
                },
                "timing",
            ),
            Phase::Functional => self.run_functional(timing),
        }
    }

    /// Executes every measured stage with zero-latency memory, counting
    /// operations by the region they target.
    fn run_functional(&self, cfg: &ClusterConfig) -> Result<RunOutput> {
        let started = std::time::Instant::now();
        let mut stats = Vec::with_capacity(self.nodes.len());
        let mut digests = Vec::with_capacity(self.nodes.len());
        let mut memories = Vec::with_capacity(self.nodes.len());
        for (i, h) in cfg.hosts().iter().enumerate() {
            let mut mem = self.nodes[i].clone();
            let cores = h.hw.cores as usize;
            let mut rois = Vec::new();
            for k in 0..h.workload.stage_labels().len() {
                let mut stage = h.workload.stage(k, &self.layouts[i], cores);
                let mut port = MemPort::new(&mut mem, SharedAccess::Frozen(&self.shared));
                let counts = run_functional(stage.programs.iter_mut(), &mut port)?;
                let mut roi = RoiStats::new(stage.label, SimTime::ZERO, cores);
                roi.local_ops = counts.local;
                roi.remote_ops = counts.remote;
                roi.compute_ops = counts.compute;
                roi.workload_bytes = stage.workload_bytes;
                rois.push(roi);
            }
            let mut port = MemPort::new(&mut mem, SharedAccess::Frozen(&self.shared));
            digests.push(h.workload.digests(&self.layouts[i], &mut port)?);
            memories.push(mem);
            stats.push(NodeStats {
                node: i,
                arch_profile: h.hw.arch_profile.clone(),
                rois,
            });
        }
        let snapshot = StatSnapshot {
            run_id: cluster::run_id(cfg, "functional"),
            nodes: stats,
            end_time: SimTime::ZERO,
            events: 0,
            complete: true,
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        Ok(RunOutput {
            snapshot,
            digests,
            memories,
            shared: std::sync::Arc::new(self.shared.clone()),
            peak_outstanding: vec![0; self.nodes.len()],
        })
    }

    /// Writes the checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let out = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        f.sync_all()?;
        Ok(())
    }

    /// Serializes the checkpoint.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections: Vec<(String, Vec<u8>)> = vec![("meta".into(), self.meta_json()?)];
        for (i, n) in self.nodes.iter().enumerate() {
            push_pages(&mut sections, &format!("node{i}.local"), &n.local);
            push_pages(&mut sections, &format!("node{i}.pooled"), &n.pooled);
        }
        push_pages(&mut sections, "shared", &self.shared);

        let index_len: usize = sections
            .iter()
            .map(|(name, _)| 2 + name.len() + 8 + 8 + 16)
            .sum();
        let mut offset = (8 + 4 + 4 + index_len) as u64;
        let mut out = Vec::with_capacity(
            offset as usize + sections.iter().map(|(_, d)| d.len()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, data) in &sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            out.extend_from_slice(&section_hash(data));
            offset += data.len() as u64;
        }
        for (_, data) in &sections {
            out.extend_from_slice(data);
        }
        Ok(out)
    }

    /// Reads and verifies a checkpoint file.
    pub fn load(path: &Path) -> Result<ClusterState> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ClusterState> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(SimError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32()? as usize;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("section name is not UTF-8"))?
                .to_string();
            let off = r.u64()? as usize;
            let len = r.u64()? as usize;
            let hash: [u8; 16] = r.take(16)?.try_into().expect("16 bytes");
            let data = off
                .checked_add(len)
                .and_then(|end| bytes.get(off..end))
                .ok_or_else(|| corrupt(&format!("section `{name}` out of bounds")))?;
            if section_hash(data) != hash {
                return Err(corrupt(&format!("section `{name}` hash mismatch")));
            }
            sections.insert(name, data);
        }
        let meta: Meta = serde_json::from_slice(
            sections
                .get("meta")
                .ok_or_else(|| corrupt("missing meta section"))?,
        )
        .map_err(|e| corrupt(&format!("meta: {e}")))?;
        let config = ClusterConfig::parse_str(&meta.config, &[])?;
        if meta.nodes.len() != config.host_count() || meta.layouts.len() != meta.nodes.len() {
            return Err(corrupt("node count does not match the stored config"));
        }
        let mut nodes = Vec::with_capacity(meta.nodes.len());
        for (i, m) in meta.nodes.into_iter().enumerate() {
            let mut mem = NodeMemory::new(i, m.map);
            mem.shared_ranges = m.shared_ranges;
            mem.local = read_pages(&sections, &format!("node{i}.local"))?;
            mem.pooled = read_pages(&sections, &format!("node{i}.pooled"))?;
            nodes.push(mem);
        }
        Ok(ClusterState {
            config,
            fabric: meta.fabric,
            nodes,
            layouts: meta.layouts,
            shared: read_pages(&sections, "shared")?,
            segments: meta.segments,
            init_counts: meta.init_counts,
        })
    }

    fn meta_json(&self) -> Result<Vec<u8>> {
        let meta = MetaRef {
            config: self.config.to_toml(),
            fabric: &self.fabric,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeMetaRef {
                    map: &n.map,
                    shared_ranges: &n.shared_ranges,
                })
                .collect(),
            layouts: &self.layouts,
            segments: &self.segments,
            init_counts: &self.init_counts,
        };
        serde_json::to_vec(&meta).map_err(|e| SimError::Io(e.to_string()))
    }
}

#[derive(Serialize)]
struct NodeMetaRef<'a> {
    map: &'a PageMap,
    shared_ranges: &'a [AddrRange],
}

#[derive(Serialize)]
struct MetaRef<'a> {
    config: String,
    fabric: &'a FabricManager,
    nodes: Vec<NodeMetaRef<'a>>,
    layouts: &'a [Layout],
    segments: &'a BTreeMap<String, AddrRange>,
    init_counts: &'a [OpCounts],
}

#[derive(Deserialize)]
struct NodeMeta {
    map: PageMap,
    shared_ranges: Vec<AddrRange>,
}

#[derive(Deserialize)]
struct Meta {
    config: String,
    fabric: FabricManager,
    nodes: Vec<NodeMeta>,
    layouts: Vec<Layout>,
    segments: BTreeMap<String, AddrRange>,
    init_counts: Vec<OpCounts>,
}

fn corrupt(msg: &str) -> SimError {
    SimError::CheckpointCorrupt(msg.to_string())
}

fn section_hash(data: &[u8]) -> [u8; 16] {
    Sha256::digest(data)[..16].try_into().expect("16 bytes")
}

fn push_pages(sections: &mut Vec<(String, Vec<u8>)>, prefix: &str, store: &PageStore) {
    let frames = store.frames();
    for (k, chunk) in frames.chunks(CHUNK_PAGES).enumerate() {
        let mut data = Vec::with_capacity(chunk.len() * (8 + PAGE_SIZE as usize));
        for &f in chunk {
            data.extend_from_slice(&f.to_le_bytes());
            data.extend_from_slice(store.page(f).expect("listed frame"));
        }
        sections.push((format!("{prefix}.{k}"), data));
    }
}

fn read_pages(sections: &BTreeMap<String, &[u8]>, prefix: &str) -> Result<PageStore> {
    let mut store = PageStore::new();
    let record = 8 + PAGE_SIZE as usize;
    for k in 0.. {
        let Some(data) = sections.get(&format!("{prefix}.{k}")) else {
            break;
        };
        if data.len() % record != 0 {
            return Err(corrupt(&format!(
                "section `{prefix}.{k}` is not a whole number of pages"
            )));
        }
        for rec in data.chunks_exact(record) {
            let frame = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
            let page: Box<[u8; PAGE_SIZE as usize]> =
                Box::new(rec[8..].try_into().expect("page bytes"));
            store.insert_page(frame, page);
        }
    }
    Ok(store)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
