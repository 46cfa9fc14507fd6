//! Compute node: memory-driven cores behind private L1/L2 caches and a
//! shared L3, with misses routed to local DRAM or over the link.

pub mod cache;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cluster::Msg;
use crate::engine::{ComponentId, Ctx, SimTime};
use crate::error::{Result, SimError};
use crate::memnet::link::{LinkConfig, LinkTx};
use crate::memnet::{MemReq, ReqKind};
use crate::memory::{MemPort, NodeMemory, PageStore, SharedAccess};
use crate::stats::RoiStats;
use crate::workloads::{Layout, Op, Program, Stage, WorkloadSpec};

pub use cache::{CacheGeometry, CacheLevel, Outcome, Victim};

const LINE: u64 = 64;
const PAGE: u64 = crate::fabric::PAGE_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub cores: u32,
    pub freq_ghz: f64,
    pub l1d: CacheGeometry,
    pub l2: CacheGeometry,
    pub l3: CacheGeometry,
    pub outstanding_misses: u32,
    /// Cycles a core spends issuing any operation.
    pub issue_cycles: u32,
    pub local_channels: u32,
    #[serde(with = "crate::config::bytes")]
    pub local_capacity: u64,
    pub prefetch: bool,
    pub prefetch_degree: u32,
    pub arch_profile: String,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            cores: 8,
            freq_ghz: 4.0,
            l1d: CacheGeometry::new(32 << 10, 8, 4),
            l2: CacheGeometry::new(512 << 10, 8, 12),
            l3: CacheGeometry::new(8 << 20, 16, 40),
            outstanding_misses: 16,
            issue_cycles: 1,
            local_channels: 1,
            local_capacity: 4 << 30,
            prefetch: true,
            prefetch_degree: 2,
            arch_profile: "generic".into(),
        }
    }
}

impl NodeConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.cores == 0 || self.cores > u16::MAX as u32 {
            return Err(SimError::validation(
                format!("{key}.cores"),
                "must be within 1..=65535",
            ));
        }
        if self.freq_ghz.is_nan() || self.freq_ghz <= 0.0 {
            return Err(SimError::validation(
                format!("{key}.freq_ghz"),
                "must be > 0",
            ));
        }
        self.l1d.validate(&format!("{key}.l1d"))?;
        self.l2.validate(&format!("{key}.l2"))?;
        self.l3.validate(&format!("{key}.l3"))?;
        if self.outstanding_misses == 0 {
            return Err(SimError::validation(
                format!("{key}.outstanding_misses"),
                "must be >= 1",
            ));
        }
        if self.local_channels == 0 {
            return Err(SimError::validation(
                format!("{key}.local_channels"),
                "must be >= 1",
            ));
        }
        if !self.local_capacity.is_multiple_of(PAGE) {
            return Err(SimError::validation(
                format!("{key}.local_capacity"),
                "must be a whole number of pages",
            ));
        }
        Ok(())
    }

    pub fn cycle(&self) -> SimTime {
        SimTime::from_ps((1000.0 / self.freq_ghz).round() as u64)
    }
}

struct Core {
    program: Option<Box<dyn Program>>,
    l1: CacheLevel,
    l2: CacheLevel,
    outstanding: u32,
    /// Waiting for a blocking load's data.
    blocked: bool,
    /// An op that could not issue for lack of a miss slot.
    stalled: Option<Op>,
    done: bool,
    finished_at: Option<SimTime>,
    retired: u64,
}

#[derive(Default)]
struct Pending {
    owner: u16,
    waiters: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Flushing,
    Finished,
}

enum Next {
    At(SimTime),
    Blocked,
    Stalled,
}

pub struct NodeParams {
    pub host: usize,
    pub cfg: NodeConfig,
    pub link: LinkConfig,
    pub device_base: u64,
    pub local_id: ComponentId,
    pub remote_id: ComponentId,
    pub workload: WorkloadSpec,
    pub layout: Layout,
    /// Run the init stage under timing as the first measured stage.
    pub timed_init: bool,
}

pub struct NodeSim {
    host: usize,
    cfg: NodeConfig,
    cycle: SimTime,
    device_base: u64,
    local_id: ComponentId,
    remote_id: ComponentId,
    workload: WorkloadSpec,
    layout: Layout,
    timed_init: bool,
    labels: Vec<String>,
    pub mem: NodeMemory,
    shared: Arc<PageStore>,
    cores: Vec<Core>,
    l3: CacheLevel,
    pending: HashMap<u64, Pending>,
    link: LinkTx,
    writes_in_flight: u64,
    next_req: u64,
    stage: usize,
    phase: Phase,
    pub rois: Vec<RoiStats>,
    /// High-water mark of any core's outstanding misses.
    pub peak_outstanding: u32,
}

impl NodeSim {
    pub fn new(p: NodeParams, mem: NodeMemory, shared: Arc<PageStore>) -> Self {
        let mut labels = p.workload.stage_labels();
        if p.timed_init {
            labels.insert(0, "init".into());
        }
        let cores = (0..p.cfg.cores)
            .map(|_| Core {
                program: None,
                l1: CacheLevel::new(p.cfg.l1d),
                l2: CacheLevel::new(p.cfg.l2),
                outstanding: 0,
                blocked: false,
                stalled: None,
                done: true,
                finished_at: None,
                retired: 0,
            })
            .collect();
        NodeSim {
            host: p.host,
            cycle: p.cfg.cycle(),
            l3: CacheLevel::new(p.cfg.l3),
            cfg: p.cfg,
            device_base: p.device_base,
            local_id: p.local_id,
            remote_id: p.remote_id,
            workload: p.workload,
            layout: p.layout,
            timed_init: p.timed_init,
            labels,
            mem,
            shared,
            cores,
            pending: HashMap::new(),
            link: LinkTx::new(&p.link),
            writes_in_flight: 0,
            next_req: 0,
            stage: 0,
            phase: Phase::Idle,
            rois: Vec::new(),
            peak_outstanding: 0,
        }
    }

    pub fn finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    fn cycles(&self, n: u32) -> SimTime {
        SimTime::from_ps(self.cycle.ps() * n as u64)
    }

    fn roi(&mut self) -> &mut RoiStats {
        self.rois.last_mut().expect("inside a stage")
    }

    fn build_stage(&self, index: usize) -> Stage {
        let cores = self.cfg.cores as usize;
        if self.timed_init {
            if index == 0 {
                return Stage {
                    label: "init".into(),
                    programs: self.workload.init_programs(&self.layout, cores),
                    workload_bytes: 0,
                };
            }
            return self.workload.stage(index - 1, &self.layout, cores);
        }
        self.workload.stage(index, &self.layout, cores)
    }

    fn start_stage(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        if self.stage == self.labels.len() {
            self.phase = Phase::Finished;
            return Ok(());
        }
        let stage = self.build_stage(self.stage);
        let mut roi = RoiStats::new(stage.label, now, self.cores.len());
        roi.workload_bytes = stage.workload_bytes;
        self.rois.push(roi);
        self.phase = Phase::Running;
        let mut programs = stage.programs.into_iter();
        for (c, core) in self.cores.iter_mut().enumerate() {
            core.program = programs.next();
            core.done = core.program.is_none();
            core.finished_at = None;
            core.retired = 0;
            if core.program.is_some() {
                ctx.schedule_self_at(now, Msg::CoreStep(c as u16))?;
            }
        }
        self.check_stage_end(now, ctx)
    }

    fn is_remote(&self, paddr: u64) -> bool {
        paddr >= self.device_base
    }

    fn send(&mut self, req: MemReq, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        if self.is_remote(req.addr) {
            let roi = req.roi as usize;
            if let Some(arrival) = self.link.send(req, now, &mut self.rois[roi].link) {
                ctx.schedule_at(self.remote_id, arrival, Msg::RemoteRequest(req))?;
            }
            Ok(())
        } else {
            ctx.schedule_at(self.local_id, now, Msg::LocalRequest(req))
        }
    }

    fn new_id(&mut self) -> u64 {
        self.next_req += 1;
        self.next_req
    }

    fn writeback(&mut self, line: u64, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        let id = self.new_id();
        let roi = (self.rois.len() - 1) as u16;
        self.roi().writebacks += 1;
        self.writes_in_flight += 1;
        self.send(
            MemReq::write(id, self.host as u32, line, roi, now),
            now,
            ctx,
        )
    }

    /// Pushes a victim down the hierarchy starting at `level` (1 = L2).
    fn spill(
        &mut self,
        c: usize,
        level: u8,
        victim: Option<Victim>,
        now: SimTime,
        ctx: &mut Ctx<'_, Msg>,
    ) -> Result<()> {
        let Some(v) = victim.filter(|v| v.dirty) else {
            return Ok(());
        };
        match level {
            1 => {
                let next = self.cores[c].l2.insert(v.line, true);
                self.spill(c, 2, next, now, ctx)
            }
            2 => {
                let next = self.l3.insert(v.line, true);
                self.spill(c, 3, next, now, ctx)
            }
            _ => self.writeback(v.line, now, ctx),
        }
    }

    fn issue_read(
        &mut self,
        c: usize,
        line: u64,
        prefetch: bool,
        now: SimTime,
        ctx: &mut Ctx<'_, Msg>,
    ) -> Result<()> {
        let id = self.new_id();
        let roi = (self.rois.len() - 1) as u16;
        let mut req = MemReq::read(id, self.host as u32, c as u16, line, roi, now);
        req.prefetch = prefetch;
        let core = &mut self.cores[c];
        core.outstanding += 1;
        self.peak_outstanding = self.peak_outstanding.max(core.outstanding);
        self.pending.insert(
            line,
            Pending {
                owner: c as u16,
                waiters: Vec::new(),
            },
        );
        self.send(req, now, ctx)
    }

    fn prefetch(
        &mut self,
        c: usize,
        line: u64,
        now: SimTime,
        ctx: &mut Ctx<'_, Msg>,
    ) -> Result<()> {
        for d in 1..=self.cfg.prefetch_degree as u64 {
            let pl = line + d * LINE;
            if pl / PAGE != line / PAGE || self.cores[c].outstanding >= self.cfg.outstanding_misses
            {
                break;
            }
            if self.cores[c].l2.probe(pl) || self.l3.probe(pl) || self.pending.contains_key(&pl) {
                continue;
            }
            let v2 = self.cores[c].l2.insert(pl, false);
            self.spill(c, 2, v2, now, ctx)?;
            let v3 = self.l3.insert(pl, false);
            self.spill(c, 3, v3, now, ctx)?;
            self.roi().prefetches += 1;
            self.issue_read(c, pl, true, now, ctx)?;
        }
        Ok(())
    }

    fn exec(&mut self, c: usize, op: Op, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<Next> {
        let issue = self.cycles(self.cfg.issue_cycles);
        let (vaddr, load, blocking) = match op {
            Op::Compute { cycles } => {
                self.cores[c].retired += 1;
                self.roi().compute_ops += 1;
                return Ok(Next::At(now + self.cycles(cycles.max(1))));
            }
            Op::Load { vaddr, blocking } => (vaddr, true, blocking),
            Op::Store { vaddr } => (vaddr, false, false),
        };
        let (_, paddr) = self.mem.map.translate(vaddr)?;
        let line = paddr & !(LINE - 1);
        let remote = self.is_remote(paddr);

        let core = &self.cores[c];
        let cached = core.l1.probe(line) || core.l2.probe(line) || self.l3.probe(line);
        if load
            && !cached
            && !self.pending.contains_key(&line)
            && core.outstanding >= self.cfg.outstanding_misses
        {
            return Ok(Next::Stalled);
        }

        self.cores[c].retired += 1;
        let roi = self.roi();
        if remote {
            roi.remote_ops += 1;
        } else {
            roi.local_ops += 1;
        }

        if !load {
            // Write-validate: a store miss allocates in L1 without a fetch.
            let out = self.cores[c].l1.access(line, true);
            self.count(0, &out);
            if let Outcome::Miss { victim } = out {
                self.spill(c, 1, victim, now, ctx)?;
            }
            return Ok(Next::At(now + issue));
        }

        let o1 = self.cores[c].l1.access(line, false);
        self.count(0, &o1);
        if self.pending.contains_key(&line) {
            // Tags are installed at issue, so an in-flight line merges
            // with its outstanding request whichever level holds the tag.
            if let Outcome::Miss { victim } = o1 {
                self.spill(c, 1, victim, now, ctx)?;
            }
            return Ok(self.merge(c, line, blocking, now));
        }
        let Outcome::Miss { victim } = o1 else {
            let lat = self.cycles(self.cfg.l1d.hit_cycles);
            return Ok(Next::At(now + if blocking { lat } else { issue }));
        };
        self.spill(c, 1, victim, now, ctx)?;

        let o2 = self.cores[c].l2.access(line, false);
        self.count(1, &o2);
        let Outcome::Miss { victim } = o2 else {
            let lat = self.cycles(self.cfg.l2.hit_cycles);
            return Ok(Next::At(now + if blocking { lat } else { issue }));
        };
        self.spill(c, 2, victim, now, ctx)?;

        let o3 = self.l3.access(line, false);
        self.count(2, &o3);
        let Outcome::Miss { victim } = o3 else {
            let lat = self.cycles(self.cfg.l3.hit_cycles);
            return Ok(Next::At(now + if blocking { lat } else { issue }));
        };
        self.spill(c, 3, victim, now, ctx)?;
        self.issue_read(c, line, false, now, ctx)?;
        if self.cfg.prefetch {
            self.prefetch(c, line, now, ctx)?;
        }
        Ok(self.merge(c, line, blocking, now))
    }

    /// Waits on the in-flight request for `line`: a blocking load parks the
    /// core, anything else moves on.
    fn merge(&mut self, c: usize, line: u64, blocking: bool, now: SimTime) -> Next {
        if blocking {
            self.pending
                .get_mut(&line)
                .expect("line in flight")
                .waiters
                .push(c as u16);
            self.cores[c].blocked = true;
            Next::Blocked
        } else {
            Next::At(now + self.cycles(self.cfg.issue_cycles))
        }
    }

    fn count(&mut self, level: usize, out: &Outcome) {
        let lc = &mut self.roi().caches[level];
        match out {
            Outcome::Hit => lc.hits += 1,
            Outcome::Miss { .. } => lc.misses += 1,
        }
    }

    fn step(&mut self, c: usize, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        let core = &mut self.cores[c];
        if core.blocked || core.done {
            return Ok(());
        }
        let op = match core.stalled.take() {
            Some(op) => op,
            None => {
                let program = core.program.as_mut().expect("running core has a program");
                let mut port = MemPort::new(&mut self.mem, SharedAccess::Frozen(&self.shared));
                match program.next_op(&mut port)? {
                    Some(op) => op,
                    None => {
                        core.done = true;
                        core.program = None;
                        self.maybe_finish_core(c, now);
                        return self.check_stage_end(now, ctx);
                    }
                }
            }
        };
        match self.exec(c, op, now, ctx)? {
            Next::At(t) => ctx.schedule_self_at(t, Msg::CoreStep(c as u16)),
            Next::Blocked => Ok(()),
            Next::Stalled => {
                self.cores[c].stalled = Some(op);
                Ok(())
            }
        }
    }

    fn maybe_finish_core(&mut self, c: usize, now: SimTime) {
        let core = &mut self.cores[c];
        if core.done && core.outstanding == 0 && !core.blocked && core.finished_at.is_none() {
            core.finished_at = Some(now);
        }
    }

    fn on_read_done(&mut self, req: MemReq, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        let lat_ns = (now - req.issue).ps() / 1000;
        self.rois[req.roi as usize].latency.record(lat_ns);
        let p = self
            .pending
            .remove(&req.addr)
            .expect("response for a pending line");
        let owner = p.owner as usize;
        self.cores[owner].outstanding -= 1;
        let fill = now + self.cycles(self.cfg.l1d.hit_cycles);
        for w in p.waiters {
            let core = &mut self.cores[w as usize];
            core.blocked = false;
            ctx.schedule_self_at(fill, Msg::CoreStep(w))?;
        }
        if self.cores[owner].stalled.is_some() && !self.cores[owner].blocked {
            ctx.schedule_self_at(now, Msg::CoreStep(owner as u16))?;
        }
        self.maybe_finish_core(owner, now);
        self.check_stage_end(now, ctx)
    }

    fn on_write_done(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        self.writes_in_flight -= 1;
        self.check_stage_end(now, ctx)
    }

    fn check_stage_end(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        if self.phase == Phase::Running {
            let idle = self
                .cores
                .iter()
                .all(|c| c.done && c.outstanding == 0 && !c.blocked);
            if !idle || !self.pending.is_empty() {
                return Ok(());
            }
            self.phase = Phase::Flushing;
            let mut dirty = BTreeSet::new();
            for core in &self.cores {
                dirty.extend(core.l1.dirty_lines());
                dirty.extend(core.l2.dirty_lines());
            }
            dirty.extend(self.l3.dirty_lines());
            for line in dirty {
                self.writeback(line, now, ctx)?;
            }
        }
        if self.phase == Phase::Flushing && self.writes_in_flight == 0 {
            self.finish_stage(now, ctx)?;
        }
        Ok(())
    }

    fn finish_stage(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        let cycle = self.cycle.ps();
        let begin = self.roi().begin;
        let counters: Vec<_> = self
            .cores
            .iter()
            .map(|c| {
                let end = c.finished_at.unwrap_or(begin);
                crate::stats::CoreCounters {
                    retired_ops: c.retired,
                    cycles: (end - begin).ps() / cycle,
                }
            })
            .collect();
        let roi = self.roi();
        roi.end = now;
        roi.cores = counters;
        for core in &mut self.cores {
            core.l1.invalidate_all();
            core.l2.invalidate_all();
        }
        self.l3.invalidate_all();
        self.stage += 1;
        self.phase = Phase::Idle;
        ctx.schedule_self_at(now, Msg::StartStage)
    }

    pub fn handle(&mut self, now: SimTime, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        match msg {
            Msg::StartStage => self.start_stage(now, ctx),
            Msg::CoreStep(c) => self.step(c as usize, now, ctx),
            Msg::LocalDone(req) => match req.kind {
                ReqKind::Read => self.on_read_done(req, now, ctx),
                ReqKind::Write => self.on_write_done(now, ctx),
            },
            Msg::RemoteResponse(req) => {
                let rois = &mut self.rois;
                let released = self.link.credit_return(now, move |r| {
                    let v: &mut Vec<RoiStats> = rois;
                    &mut v[r.roi as usize].link
                });
                if let Some((next, arrival)) = released {
                    ctx.schedule_at(self.remote_id, arrival, Msg::RemoteRequest(next))?;
                }
                match req.kind {
                    ReqKind::Read => self.on_read_done(req, now, ctx),
                    ReqKind::Write => self.on_write_done(now, ctx),
                }
            }
            other => unreachable!("node {} got {other:?}", self.host),
        }
    }

    /// Result digests of the workload, read from this node's memory.
    pub fn digests(&mut self) -> Result<Vec<(String, String)>> {
        let mut port = MemPort::new(&mut self.mem, SharedAccess::Frozen(&self.shared));
        self.workload.digests(&self.layout, &mut port)
    }
}
