//! The remote memory node: per-host input queues, a round-robin crossbar
//! and a multi-channel DRAM device.

use std::collections::{BTreeMap, VecDeque};

use crate::cluster::Msg;
use crate::engine::{ComponentId, Ctx, SimTime};
use crate::error::Result;
use crate::memnet::dram::{decode_address, ChannelController, DramAddr, DramTiming};
use crate::memnet::link::{LinkConfig, ReturnLink};
use crate::memnet::local::diff;
use crate::memnet::MemReq;
use crate::stats::ControllerCounters;

pub const INPUT_QUEUE_DEPTH: usize = 32;
pub const CHANNEL_QUEUE_DEPTH: usize = 64;

#[derive(Clone, Debug)]
pub struct RemoteParams {
    pub device_base: u64,
    pub capacity: u64,
    pub channels: u32,
    pub timing: DramTiming,
    pub link: LinkConfig,
    pub xbar_cycle: SimTime,
    /// Component that receives responses for each host.
    pub endpoints: Vec<ComponentId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RemoteCounters {
    pub ingress_bytes: u64,
    pub ctrl: ControllerCounters,
}

pub struct RemoteMemory {
    base: u64,
    capacity: u64,
    channels: Vec<ChannelController>,
    inputs: Vec<VecDeque<(MemReq, DramAddr)>>,
    staging: Vec<VecDeque<(MemReq, DramAddr)>>,
    returns: Vec<ReturnLink>,
    endpoints: Vec<ComponentId>,
    rr: usize,
    xbar_cycle: SimTime,
    xbar_next: SimTime,
    xbar_pending: bool,
    xbar_blocked: bool,
    /// Counters keyed by (origin host, origin ROI index).
    pub stats: BTreeMap<(u32, u16), RemoteCounters>,
    window: Option<(SimTime, SimTime)>,
    pub window_bytes: u64,
}

impl RemoteMemory {
    pub fn new(p: RemoteParams) -> Self {
        let t = p.timing.to_ps();
        let hosts = p.endpoints.len();
        RemoteMemory {
            base: p.device_base,
            capacity: p.capacity,
            channels: (0..p.channels)
                .map(|_| ChannelController::new(t, CHANNEL_QUEUE_DEPTH))
                .collect(),
            inputs: vec![VecDeque::new(); hosts],
            staging: vec![VecDeque::new(); hosts],
            returns: (0..hosts).map(|_| ReturnLink::new(&p.link)).collect(),
            endpoints: p.endpoints,
            rr: 0,
            xbar_cycle: p.xbar_cycle,
            xbar_next: SimTime::ZERO,
            xbar_pending: false,
            xbar_blocked: false,
            stats: BTreeMap::new(),
            window: None,
            window_bytes: 0,
        }
    }

    /// Counts bytes whose service completes inside `[from, to)`.
    pub fn set_window(&mut self, from: SimTime, to: SimTime) {
        self.window = Some((from, to));
    }

    pub fn channel_totals(&self) -> Vec<ControllerCounters> {
        self.channels.iter().map(|c| c.totals.clone()).collect()
    }

    fn kick_xbar(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        if !self.xbar_pending {
            self.xbar_pending = true;
            ctx.schedule_self_at(now.max(self.xbar_next), Msg::CrossbarTick)?;
        }
        Ok(())
    }

    fn kick_channel(&mut self, ch: u16, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        if let Some(at) = self.channels[ch as usize].tick_request(now) {
            ctx.schedule_self_at(at, Msg::ChannelTick(ch))?;
        }
        Ok(())
    }

    fn arbitrate(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        self.xbar_pending = false;
        let n = self.inputs.len();
        let mut forwarded = false;
        for i in 0..n {
            let h = (self.rr + i) % n;
            let Some(&(_, addr)) = self.inputs[h].front() else {
                continue;
            };
            if !self.channels[addr.channel as usize].has_space() {
                continue;
            }
            let (req, addr) = self.inputs[h].pop_front().expect("front checked");
            if let Some(next) = self.staging[h].pop_front() {
                self.inputs[h].push_back(next);
            }
            self.channels[addr.channel as usize].enqueue(req, addr, now);
            self.kick_channel(addr.channel as u16, now, ctx)?;
            self.rr = (h + 1) % n;
            forwarded = true;
            break;
        }
        let backlog = self.inputs.iter().any(|q| !q.is_empty());
        if forwarded {
            self.xbar_next = now + self.xbar_cycle;
            if backlog {
                self.kick_xbar(now, ctx)?;
            }
        } else if backlog {
            self.xbar_blocked = true;
        }
        Ok(())
    }

    pub fn handle(&mut self, now: SimTime, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        match msg {
            Msg::RemoteRequest(req) => {
                let t = *self.channels[0].timing();
                let offset = req.addr.checked_sub(self.base).unwrap_or(u64::MAX);
                let addr = decode_address(offset, self.channels.len() as u32, &t, self.capacity)
                    .map_err(|_| crate::error::SimError::OutOfRange(req.addr))?;
                self.stats
                    .entry((req.host, req.roi))
                    .or_default()
                    .ingress_bytes += 64;
                let h = req.host as usize;
                if self.inputs[h].len() < INPUT_QUEUE_DEPTH {
                    self.inputs[h].push_back((req, addr));
                } else {
                    self.staging[h].push_back((req, addr));
                }
                self.kick_xbar(now, ctx)
            }
            Msg::CrossbarTick => self.arbitrate(now, ctx),
            Msg::ChannelTick(ch) => {
                let c = &mut self.channels[ch as usize];
                let before = c.totals.clone();
                if let Some((req, svc)) = c.tick(now) {
                    let delta = diff(&c.totals, &before);
                    self.stats
                        .entry((req.host, req.roi))
                        .or_default()
                        .ctrl
                        .merge(&delta);
                    ctx.schedule_self_at(svc.completion, Msg::ChannelDone(ch, req))?;
                }
                self.kick_channel(ch, now, ctx)?;
                if self.xbar_blocked {
                    self.xbar_blocked = false;
                    self.kick_xbar(now, ctx)?;
                }
                Ok(())
            }
            Msg::ChannelDone(_, req) => {
                if let Some((from, to)) = self.window {
                    if now >= from && now < to {
                        self.window_bytes += 64;
                    }
                }
                let h = req.host as usize;
                let arrival = self.returns[h].send(now);
                ctx.schedule_at(self.endpoints[h], arrival, Msg::RemoteResponse(req))
            }
            other => unreachable!("remote memory got {other:?}"),
        }
    }
}
