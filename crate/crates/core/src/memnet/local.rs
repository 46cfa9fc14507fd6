//! A node's private DRAM controller.

use std::collections::BTreeMap;

use crate::cluster::Msg;
use crate::engine::{ComponentId, Ctx, SimTime};
use crate::error::Result;
use crate::memnet::dram::{decode_address, ChannelController, DramTiming};
use crate::stats::ControllerCounters;

pub struct LocalMemory {
    node: ComponentId,
    capacity: u64,
    channels: Vec<ChannelController>,
    /// Counters per ROI index of the owning node.
    pub stats: BTreeMap<u16, ControllerCounters>,
}

impl LocalMemory {
    pub fn new(node: ComponentId, timing: &DramTiming, channels: u32, capacity: u64) -> Self {
        let t = timing.to_ps();
        LocalMemory {
            node,
            capacity,
            channels: (0..channels)
                .map(|_| ChannelController::new(t, usize::MAX))
                .collect(),
            stats: BTreeMap::new(),
        }
    }

    fn kick(&mut self, ch: u16, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        if let Some(at) = self.channels[ch as usize].tick_request(now) {
            ctx.schedule_self_at(at, Msg::ChannelTick(ch))?;
        }
        Ok(())
    }

    pub fn handle(&mut self, now: SimTime, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        match msg {
            Msg::LocalRequest(req) => {
                let nch = self.channels.len() as u32;
                let t = *self.channels[0].timing();
                let addr = decode_address(req.addr, nch, &t, self.capacity)?;
                self.channels[addr.channel as usize].enqueue(req, addr, now);
                self.kick(addr.channel as u16, now, ctx)
            }
            Msg::ChannelTick(ch) => {
                let c = &mut self.channels[ch as usize];
                let before = c.totals.clone();
                if let Some((req, svc)) = c.tick(now) {
                    let delta = diff(&c.totals, &before);
                    self.stats.entry(req.roi).or_default().merge(&delta);
                    ctx.schedule_at(self.node, svc.completion, Msg::LocalDone(req))?;
                }
                self.kick(ch, now, ctx)
            }
            other => unreachable!("local memory got {other:?}"),
        }
    }
}

pub(crate) fn diff(after: &ControllerCounters, before: &ControllerCounters) -> ControllerCounters {
    ControllerCounters {
        bytes_read: after.bytes_read - before.bytes_read,
        bytes_written: after.bytes_written - before.bytes_written,
        busy_ps: after.busy_ps - before.busy_ps,
        row_hits: after.row_hits - before.row_hits,
        row_misses: after.row_misses - before.row_misses,
    }
}
