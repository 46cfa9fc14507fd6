//! Deterministic discrete-event engine.
//!
//! Components are grouped into partitions. Within a partition events are
//! delivered strictly in `(time, target, source, seq)` order. Partitions
//! advance together in fixed windows of `lookahead` picoseconds; messages
//! that cross a partition boundary must carry at least that much delay, so
//! they always land in a later window and are handed over at the barrier.
//! Because the key never depends on which thread ran a partition, the
//! delivery sequence is identical for any thread count.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Simulated time in picoseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    /// Rounds to the nearest picosecond.
    pub fn from_ns_f64(ns: f64) -> Self {
        SimTime((ns * 1_000.0).round().max(0.0) as u64)
    }

    pub const fn ps(self) -> u64 {
        self.0
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId(pub u32);

/// Source id used for events injected from outside any component.
pub const CONTROLLER: ComponentId = ComponentId(u32::MAX);

#[derive(Clone, Debug)]
pub struct Event<M> {
    pub time: SimTime,
    pub target: ComponentId,
    /// Issuing component; together with `seq` it fixes the order of
    /// simultaneous events for the same target.
    pub source: ComponentId,
    /// Per-source issue counter.
    pub seq: u64,
    pub payload: M,
}

impl<M> Event<M> {
    fn key(&self) -> (SimTime, ComponentId, ComponentId, u64) {
        (self.time, self.target, self.source, self.seq)
    }
}

impl<M> PartialEq for Event<M> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<M> Eq for Event<M> {}
impl<M> PartialOrd for Event<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Event<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub lookahead: SimTime,
    pub threads: usize,
}

impl SyncConfig {
    pub fn serial(lookahead: SimTime) -> Self {
        SyncConfig {
            lookahead,
            threads: 1,
        }
    }
}

/// Something that reacts to delivered events.
pub trait Component<M>: Send {
    fn handle(&mut self, now: SimTime, msg: M, ctx: &mut Ctx<'_, M>) -> Result<()>;
}

/// Scheduling handle passed to a component while it handles an event.
pub struct Ctx<'a, M> {
    now: SimTime,
    me: ComponentId,
    partition: usize,
    lookahead: SimTime,
    owner: &'a [usize],
    seq: &'a mut u64,
    queue: &'a mut BinaryHeap<Reverse<Event<M>>>,
    outbox: &'a mut Vec<Event<M>>,
}

impl<'a, M> Ctx<'a, M> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn id(&self) -> ComponentId {
        self.me
    }

    pub fn schedule_at(&mut self, target: ComponentId, time: SimTime, payload: M) -> Result<()> {
        if time < self.now {
            return Err(SimError::SchedulingInPast {
                now: self.now,
                requested: time,
            });
        }
        let dest = *self
            .owner
            .get(target.0 as usize)
            .ok_or(SimError::UnknownComponent(target.0))?;
        let ev = Event {
            time,
            target,
            source: self.me,
            seq: *self.seq,
            payload,
        };
        *self.seq += 1;
        if dest == self.partition {
            self.queue.push(Reverse(ev));
        } else {
            let delay = time - self.now;
            if delay < self.lookahead {
                return Err(SimError::LookaheadViolation {
                    delay,
                    lookahead: self.lookahead,
                });
            }
            self.outbox.push(ev);
        }
        Ok(())
    }

    pub fn schedule_in(&mut self, target: ComponentId, delay: SimTime, payload: M) -> Result<()> {
        let time = self.now.checked_add(delay).ok_or(SimError::TimeOverflow)?;
        self.schedule_at(target, time, payload)
    }

    pub fn schedule_self_at(&mut self, time: SimTime, payload: M) -> Result<()> {
        self.schedule_at(self.me, time, payload)
    }
}

struct Partition<C, M> {
    id: usize,
    ids: Vec<ComponentId>,
    components: Vec<C>,
    seqs: Vec<u64>,
    queue: BinaryHeap<Reverse<Event<M>>>,
    outbox: Vec<Event<M>>,
    now: SimTime,
    delivered: u64,
}

impl<C: Component<M>, M> Partition<C, M> {
    fn next_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.time)
    }

    fn run_until(
        &mut self,
        end: SimTime,
        lookahead: SimTime,
        owner: &[usize],
        local: &[usize],
    ) -> Result<()> {
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.time >= end {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            debug_assert!(ev.time >= self.now, "time regression");
            self.now = ev.time;
            self.delivered += 1;
            let idx = local[ev.target.0 as usize];
            let mut ctx = Ctx {
                now: ev.time,
                me: ev.target,
                partition: self.id,
                lookahead,
                owner,
                seq: &mut self.seqs[idx],
                queue: &mut self.queue,
                outbox: &mut self.outbox,
            };
            self.components[idx].handle(ev.time, ev.payload, &mut ctx)?;
        }
        Ok(())
    }
}

/// A set of partitions plus the routing tables between them.
pub struct Simulation<C, M> {
    partitions: Vec<Partition<C, M>>,
    owner: Vec<usize>,
    local: Vec<usize>,
    controller_seq: u64,
    now: SimTime,
}

impl<C: Component<M>, M: Send> Simulation<C, M> {
    /// `layout[p]` lists the components of partition `p`. Component ids are
    /// assigned densely in enumeration order: partition 0 first.
    pub fn new(layout: Vec<Vec<C>>) -> Self {
        let mut owner = Vec::new();
        let mut local = Vec::new();
        let mut partitions = Vec::with_capacity(layout.len());
        for (pid, comps) in layout.into_iter().enumerate() {
            let mut ids = Vec::with_capacity(comps.len());
            for i in 0..comps.len() {
                ids.push(ComponentId(owner.len() as u32));
                owner.push(pid);
                local.push(i);
            }
            let n = comps.len();
            partitions.push(Partition {
                id: pid,
                ids,
                components: comps,
                seqs: vec![0; n],
                queue: BinaryHeap::new(),
                outbox: Vec::new(),
                now: SimTime::ZERO,
                delivered: 0,
            });
        }
        Simulation {
            partitions,
            owner,
            local,
            controller_seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.len()
    }

    pub fn component_ids(&self, partition: usize) -> &[ComponentId] {
        &self.partitions[partition].ids
    }

    pub fn component(&self, id: ComponentId) -> &C {
        let p = &self.partitions[self.owner[id.0 as usize]];
        &p.components[self.local[id.0 as usize]]
    }

    pub fn component_mut(&mut self, id: ComponentId) -> &mut C {
        let p = &mut self.partitions[self.owner[id.0 as usize]];
        &mut p.components[self.local[id.0 as usize]]
    }

    pub fn delivered(&self) -> u64 {
        self.partitions.iter().map(|p| p.delivered).sum()
    }

    /// Consumes the simulation and returns its components in id order.
    pub fn into_components(self) -> Vec<C> {
        self.partitions
            .into_iter()
            .flat_map(|p| p.components)
            .collect()
    }

    /// Injects an event from the controlling thread.
    pub fn schedule(&mut self, time: SimTime, target: ComponentId, payload: M) -> Result<()> {
        let pid = *self
            .owner
            .get(target.0 as usize)
            .ok_or(SimError::UnknownComponent(target.0))?;
        let part = &mut self.partitions[pid];
        if time < part.now {
            return Err(SimError::SchedulingInPast {
                now: part.now,
                requested: time,
            });
        }
        let ev = Event {
            time,
            target,
            source: CONTROLLER,
            seq: self.controller_seq,
            payload,
        };
        self.controller_seq += 1;
        part.queue.push(Reverse(ev));
        Ok(())
    }

    /// Runs epochs of `sync.lookahead` until quiescence or `horizon`.
    ///
    /// Returns the time of the last delivered event when the queues drain,
    /// or `horizon` when events remain beyond it.
    pub fn run_epochs(&mut self, sync: SyncConfig, horizon: SimTime) -> Result<SimTime> {
        if sync.threads == 0 {
            return Err(SimError::InvalidSync("threads must be >= 1".into()));
        }
        if self.partitions.len() > 1 && sync.lookahead == SimTime::ZERO {
            return Err(SimError::InvalidSync(
                "lookahead must be > 0 with multiple partitions".into(),
            ));
        }
        let pool = if sync.threads > 1 && self.partitions.len() > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(sync.threads)
                    .build()
                    .map_err(|e| SimError::InvalidSync(e.to_string()))?,
            )
        } else {
            None
        };
        let single = self.partitions.len() == 1;
        let owner = &self.owner;
        let local = &self.local;
        let stop = loop {
            let next = self.partitions.iter().filter_map(|p| p.next_time()).min();
            let Some(next) = next else {
                break self
                    .partitions
                    .iter()
                    .map(|p| p.now)
                    .max()
                    .unwrap_or(self.now);
            };
            if next > horizon {
                break horizon;
            }
            let end = if single {
                SimTime(horizon.0.saturating_add(1))
            } else {
                SimTime(
                    next.0
                        .saturating_add(sync.lookahead.0)
                        .min(horizon.0.saturating_add(1)),
                )
            };
            let lookahead = sync.lookahead;
            let mut active: Vec<&mut Partition<C, M>> = self
                .partitions
                .iter_mut()
                .filter(|p| p.next_time().is_some_and(|t| t < end))
                .collect();
            let results: Vec<Result<()>> = match &pool {
                Some(pool) if active.len() > 1 => pool.install(|| {
                    active
                        .par_iter_mut()
                        .map(|p| p.run_until(end, lookahead, owner, local))
                        .collect()
                }),
                _ => active
                    .iter_mut()
                    .map(|p| p.run_until(end, lookahead, owner, local))
                    .collect(),
            };
            drop(active);
            for r in results {
                r?;
            }
            let mut moved = Vec::new();
            for p in &mut self.partitions {
                moved.append(&mut p.outbox);
            }
            for ev in moved {
                let pid = owner[ev.target.0 as usize];
                self.partitions[pid].queue.push(Reverse(ev));
            }
        };
        let stop = stop.max(self.now);
        for p in &mut self.partitions {
            if p.now < stop {
                p.now = stop;
            }
        }
        self.now = stop;
        Ok(stop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records every delivery; optionally forwards to a peer.
    struct Probe {
        log: Vec<(SimTime, u32)>,
        forward: Option<(ComponentId, SimTime, u32)>,
    }

    impl Component<u32> for Probe {
        fn handle(&mut self, now: SimTime, msg: u32, ctx: &mut Ctx<'_, u32>) -> Result<()> {
            self.log.push((now, msg));
            if let Some((to, delay, hops)) = self.forward {
                if msg < hops {
                    ctx.schedule_in(to, delay, msg + 1)?;
                }
            }
            Ok(())
        }
    }

    fn probe() -> Probe {
        Probe {
            log: Vec::new(),
            forward: None,
        }
    }

    #[test]
    fn quiescent_single_partition() {
        let mut sim = Simulation::new(vec![vec![probe()]]);
        for t in [1, 2, 3] {
            sim.schedule(SimTime(t), ComponentId(0), t as u32).unwrap();
        }
        let end = sim
            .run_epochs(SyncConfig::serial(SimTime(1)), SimTime(10))
            .unwrap();
        assert_eq!(end, SimTime(3));
    }

    #[test]
    fn horizon_stops_run() {
        let mut sim = Simulation::new(vec![vec![probe()]]);
        sim.schedule(SimTime(50), ComponentId(0), 0).unwrap();
        let end = sim
            .run_epochs(SyncConfig::serial(SimTime(1)), SimTime(10))
            .unwrap();
        assert_eq!(end, SimTime(10));
        assert!(sim.component(ComponentId(0)).log.is_empty());
    }

    #[test]
    fn ties_delivered_in_issue_order() {
        let mut sim = Simulation::new(vec![vec![probe()]]);
        for m in [7, 3, 9] {
            sim.schedule(SimTime(100), ComponentId(0), m).unwrap();
        }
        sim.run_epochs(SyncConfig::serial(SimTime(1)), SimTime(1000))
            .unwrap();
        let got: Vec<u32> = sim
            .component(ComponentId(0))
            .log
            .iter()
            .map(|e| e.1)
            .collect();
        assert_eq!(got, vec![7, 3, 9]);
    }

    struct PastScheduler;
    impl Component<u32> for PastScheduler {
        fn handle(&mut self, now: SimTime, msg: u32, ctx: &mut Ctx<'_, u32>) -> Result<()> {
            if msg == 0 {
                ctx.schedule_at(ctx.id(), now, 1)?;
                ctx.schedule_at(ctx.id(), SimTime(now.0 - 50), 2)?;
            }
            Ok(())
        }
    }

    #[test]
    fn zero_delay_ok_past_rejected() {
        let mut sim = Simulation::new(vec![vec![PastScheduler]]);
        sim.schedule(SimTime(100), ComponentId(0), 0).unwrap();
        let err = sim
            .run_epochs(SyncConfig::serial(SimTime(1)), SimTime(1000))
            .unwrap_err();
        assert_eq!(
            err,
            SimError::SchedulingInPast {
                now: SimTime(100),
                requested: SimTime(50)
            }
        );
    }

    #[test]
    fn lookahead_violation_detected() {
        let a = Probe {
            log: vec![],
            forward: Some((ComponentId(1), SimTime(10), 5)),
        };
        let mut sim = Simulation::new(vec![vec![a], vec![probe()]]);
        sim.schedule(SimTime(0), ComponentId(0), 0).unwrap();
        let err = sim
            .run_epochs(
                SyncConfig {
                    lookahead: SimTime(250),
                    threads: 1,
                },
                SimTime(10_000),
            )
            .unwrap_err();
        assert!(matches!(err, SimError::LookaheadViolation { .. }));
    }

    type Log = Vec<(SimTime, u32)>;

    fn ping_pong(threads: usize) -> (Log, Log) {
        let a = Probe {
            log: vec![],
            forward: Some((ComponentId(1), SimTime(250_000), 40)),
        };
        let b = Probe {
            log: vec![],
            forward: Some((ComponentId(0), SimTime(300_000), 40)),
        };
        let mut sim = Simulation::new(vec![vec![a], vec![b]]);
        for t in 0..5 {
            sim.schedule(SimTime(t * 1000), ComponentId(0), 0).unwrap();
            sim.schedule(SimTime(t * 1000), ComponentId(1), 0).unwrap();
        }
        sim.run_epochs(
            SyncConfig {
                lookahead: SimTime(250_000),
                threads,
            },
            SimTime::MAX,
        )
        .unwrap();
        let mut comps = sim.into_components();
        let b = comps.pop().unwrap();
        let a = comps.pop().unwrap();
        (a.log, b.log)
    }

    #[test]
    fn thread_count_does_not_change_delivery() {
        let serial = ping_pong(1);
        assert_eq!(serial.0.len(), 5 * 41);
        for threads in [2, 4, 8] {
            assert_eq!(ping_pong(threads), serial);
        }
    }

    #[test]
    fn multi_partition_requires_lookahead() {
        let mut sim = Simulation::new(vec![vec![probe()], vec![probe()]]);
        let err = sim
            .run_epochs(
                SyncConfig {
                    lookahead: SimTime::ZERO,
                    threads: 2,
                },
                SimTime(10),
            )
            .unwrap_err();
        assert!(matches!(err, SimError::InvalidSync(_)));
    }
}
