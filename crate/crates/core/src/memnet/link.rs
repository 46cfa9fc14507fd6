//! Host-to-device link: fixed propagation latency, per-line serialization
//! and credit-based flow control.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::memnet::MemReq;
use crate::stats::LinkCounters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// One-way latency.
    pub latency_ns: f64,
    pub bandwidth_gbps: f64,
    /// Maximum requests in flight; a credit returns with the response.
    pub credits: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            latency_ns: 170.0,
            bandwidth_gbps: 1000.0,
            credits: 128,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_ns >= 0.0 && self.latency_ns.is_finite()) {
            return Err(SimError::validation("link.latency_ns", "must be >= 0"));
        }
        if !(self.bandwidth_gbps > 0.0 && self.bandwidth_gbps.is_finite()) {
            return Err(SimError::validation("link.bandwidth_gbps", "must be > 0"));
        }
        if self.credits == 0 {
            return Err(SimError::validation("link.credits", "must be >= 1"));
        }
        if self.min_delay() == SimTime::ZERO {
            return Err(SimError::validation(
                "link.bandwidth_gbps",
                "latency + serialization must be >= 1 ps",
            ));
        }
        Ok(())
    }

    pub fn latency(&self) -> SimTime {
        SimTime::from_ns_f64(self.latency_ns)
    }

    /// Time to put one 64-byte line on the wire.
    pub fn serialization(&self) -> SimTime {
        SimTime::from_ns_f64(64.0 / self.bandwidth_gbps)
    }

    /// Smallest departure-to-arrival delay; the natural lookahead.
    pub fn min_delay(&self) -> SimTime {
        self.latency() + self.serialization()
    }
}

/// Arrival time of a message departing at `departure`.
pub fn link_transmit(link: &LinkConfig, departure: SimTime) -> SimTime {
    departure + link.latency() + link.serialization()
}

/// Sender side of one link direction with credit accounting.
#[derive(Clone, Debug)]
pub struct LinkTx {
    latency: SimTime,
    serialization: SimTime,
    credits: u32,
    free: u32,
    next_free: SimTime,
    waiting: VecDeque<(MemReq, SimTime)>,
}

impl LinkTx {
    pub fn new(cfg: &LinkConfig) -> Self {
        LinkTx {
            latency: cfg.latency(),
            serialization: cfg.serialization(),
            credits: cfg.credits,
            free: cfg.credits,
            next_free: SimTime::ZERO,
            waiting: VecDeque::new(),
        }
    }

    pub fn in_flight(&self) -> u32 {
        self.credits - self.free
    }

    pub fn waiting(&self) -> usize {
        self.waiting.len()
    }

    fn depart(&mut self, ready: SimTime, stats: &mut LinkCounters) -> SimTime {
        self.free -= 1;
        let dep = ready.max(self.next_free);
        self.next_free = dep + self.serialization;
        stats.bytes += 64;
        stats.requests += 1;
        stats.in_flight.record(self.in_flight() as u64);
        dep + self.latency + self.serialization
    }

    /// Sends when a credit is free, returning the arrival time; otherwise
    /// queues the request until a credit returns.
    pub fn send(
        &mut self,
        req: MemReq,
        ready: SimTime,
        stats: &mut LinkCounters,
    ) -> Option<SimTime> {
        if self.free == 0 || !self.waiting.is_empty() {
            self.waiting.push_back((req, ready));
            return None;
        }
        Some(self.depart(ready, stats))
    }

    /// Returns one credit at `now`; a queued request may depart. The
    /// counters of the departing request are looked up through `stats_of`.
    pub fn credit_return<'s>(
        &mut self,
        now: SimTime,
        stats_of: impl FnOnce(&MemReq) -> &'s mut LinkCounters,
    ) -> Option<(MemReq, SimTime)> {
        debug_assert!(self.free < self.credits, "credit returned twice");
        self.free += 1;
        let (req, ready) = self.waiting.pop_front()?;
        let arrival = self.depart(ready.max(now), stats_of(&req));
        Some((req, arrival))
    }
}

/// Response direction: serialization only, no credits.
#[derive(Clone, Debug)]
pub struct ReturnLink {
    latency: SimTime,
    serialization: SimTime,
    next_free: SimTime,
}

impl ReturnLink {
    pub fn new(cfg: &LinkConfig) -> Self {
        ReturnLink {
            latency: cfg.latency(),
            serialization: cfg.serialization(),
            next_free: SimTime::ZERO,
        }
    }

    pub fn send(&mut self, now: SimTime) -> SimTime {
        let dep = now.max(self.next_free);
        self.next_free = dep + self.serialization;
        dep + self.latency + self.serialization
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64) -> MemReq {
        MemReq::read(id, 0, 0, 0, 0, SimTime::ZERO)
    }

    #[test]
    fn arrival_is_latency_plus_serialization() {
        let cfg = LinkConfig {
            latency_ns: 250.0,
            bandwidth_gbps: 64.0,
            credits: 4,
        };
        assert_eq!(
            link_transmit(&cfg, SimTime::from_ns(10)),
            SimTime::from_ns(261)
        );
        let zero = LinkConfig {
            latency_ns: 0.0,
            ..cfg
        };
        assert_eq!(link_transmit(&zero, SimTime::ZERO), SimTime::from_ns(1));
    }

    #[test]
    fn departures_are_serialized() {
        let cfg = LinkConfig {
            latency_ns: 0.0,
            bandwidth_gbps: 64.0,
            credits: 8,
        };
        let mut tx = LinkTx::new(&cfg);
        let mut st = LinkCounters::default();
        let a = tx.send(req(0), SimTime::ZERO, &mut st).unwrap();
        let b = tx.send(req(1), SimTime::ZERO, &mut st).unwrap();
        assert_eq!(b - a, SimTime::from_ns(1));
        assert_eq!(st.bytes, 128);
    }

    #[test]
    fn fifth_send_waits_for_credit() {
        let cfg = LinkConfig {
            latency_ns: 250.0,
            bandwidth_gbps: 64.0,
            credits: 4,
        };
        let mut tx = LinkTx::new(&cfg);
        let mut st = LinkCounters::default();
        for i in 0..4 {
            assert!(tx.send(req(i), SimTime::ZERO, &mut st).is_some());
        }
        assert!(tx.send(req(4), SimTime::ZERO, &mut st).is_none());
        assert_eq!(tx.waiting(), 1);
        let resp = SimTime::from_ns(600);
        let (r, arrival) = tx.credit_return(resp, |_| &mut st).unwrap();
        assert_eq!(r.id, 4);
        assert_eq!(arrival, resp + SimTime::from_ns(251));
        assert_eq!(tx.in_flight(), 4);
    }
}
