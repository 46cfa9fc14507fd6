//! Saturating linear read stream against the remote device, measured at
//! the remote controller.

use serde::{Deserialize, Serialize};

use crate::cluster::{Msg, Unit};
use crate::engine::{ComponentId, Ctx, SimTime, Simulation, SyncConfig};
use crate::error::Result;
use crate::memnet::dram::{peak_bandwidth, DramTiming, LINE};
use crate::memnet::link::LinkConfig;
use crate::memnet::remote::{RemoteMemory, RemoteParams};
use crate::memnet::MemReq;
use crate::stats::gbps;

/// Requests kept in flight by the generator; far beyond what the channels
/// can absorb, so the device is the bottleneck.
pub const GENERATOR_DEPTH: u32 = 512;

/// Traffic before the measurement window opens.
pub const WARMUP: SimTime = SimTime::from_ns(2_000);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub channels: u32,
    pub peak_gbps: f64,
    pub sustained_gbps: f64,
    pub ratio: f64,
    pub measured_bytes: u64,
    pub window_ns: f64,
}

/// Issues sequential line reads, keeping a fixed number outstanding.
pub struct TrafficGen {
    target: ComponentId,
    base: u64,
    span: u64,
    next: u64,
    depth: u32,
    stop: SimTime,
    issued: u64,
}

impl TrafficGen {
    pub fn new(target: ComponentId, base: u64, span: u64, depth: u32, stop: SimTime) -> Self {
        TrafficGen {
            target,
            base,
            span,
            next: 0,
            depth,
            stop,
            issued: 0,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    fn issue(&mut self, now: SimTime, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        let addr = self.base + self.next;
        self.next = (self.next + LINE) % self.span;
        let req = MemReq::read(self.issued, 0, 0, addr, 0, now);
        self.issued += 1;
        ctx.schedule_at(self.target, now, Msg::RemoteRequest(req))
    }

    pub fn handle(&mut self, now: SimTime, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Result<()> {
        match msg {
            Msg::GenIssue => {
                for _ in 0..self.depth {
                    self.issue(now, ctx)?;
                }
                Ok(())
            }
            Msg::RemoteResponse(_) if now < self.stop => self.issue(now, ctx),
            Msg::RemoteResponse(_) => Ok(()),
            other => unreachable!("traffic generator got {other:?}"),
        }
    }
}

/// Runs the linear read stream for `duration` after warm-up and reports
/// sustained bandwidth against the formula peak.
pub fn calibrate(
    timing: &DramTiming,
    channels: u32,
    duration: SimTime,
) -> Result<CalibrationReport> {
    timing.validate()?;
    let base = 1u64 << 32;
    let capacity = 1u64 << 30;
    let end = WARMUP + duration;
    let link = LinkConfig {
        latency_ns: 0.0,
        ..LinkConfig::default()
    };
    let remote = RemoteMemory::new(RemoteParams {
        device_base: base,
        capacity,
        channels,
        timing: timing.clone(),
        link,
        xbar_cycle: SimTime::from_ps(500),
        endpoints: vec![ComponentId(1)],
    });
    let gen = TrafficGen::new(ComponentId(0), base, capacity, GENERATOR_DEPTH, end);
    let mut sim = Simulation::new(vec![vec![Unit::Remote(Box::new(remote)), Unit::Gen(gen)]]);
    if let Unit::Remote(r) = sim.component_mut(ComponentId(0)) {
        r.set_window(WARMUP, end);
    }
    sim.schedule(SimTime::ZERO, ComponentId(1), Msg::GenIssue)?;
    sim.run_epochs(SyncConfig::serial(SimTime::ZERO), SimTime::MAX)?;
    let measured_bytes = match sim.component(ComponentId(0)) {
        Unit::Remote(r) => r.window_bytes,
        _ => unreachable!(),
    };
    let peak = peak_bandwidth(timing, channels);
    let sustained = gbps(measured_bytes, duration);
    Ok(CalibrationReport {
        channels,
        peak_gbps: peak,
        sustained_gbps: sustained,
        ratio: sustained / peak,
        measured_bytes,
        window_ns: duration.as_ns(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sustained_never_exceeds_peak() {
        let r = calibrate(&DramTiming::default(), 2, SimTime::from_ns(20_000)).unwrap();
        assert!(r.sustained_gbps > 0.0);
        assert!(r.sustained_gbps <= r.peak_gbps);
    }
}
