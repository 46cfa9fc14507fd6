//! Reduced DRAM channel model: per-bank row buffers, bank-group column
//! spacing and data-bus serialization, plus an FR-FCFS-lite controller
//! queue.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::memnet::MemReq;
use crate::stats::ControllerCounters;

pub const LINE: u64 = 64;

/// Requests the scheduler scans for a row hit before falling back to FCFS.
pub const REORDER_WINDOW: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowPolicy {
    OpenRow,
    ClosedRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramTiming {
    pub data_rate_mts: f64,
    pub bus_width_bytes: u32,
    pub burst_beats: u32,
    pub t_cl_ns: f64,
    pub t_rcd_ns: f64,
    pub t_rp_ns: f64,
    /// Minimum spacing of column commands within one bank group.
    pub t_ccd_l_ns: f64,
    pub bank_groups: u32,
    pub banks_per_channel: u32,
    pub row_bytes: u64,
    pub page_policy: RowPolicy,
}

impl Default for DramTiming {
    /// DDR4-2400.
    fn default() -> Self {
        DramTiming {
            data_rate_mts: 2400.0,
            bus_width_bytes: 8,
            burst_beats: 8,
            t_cl_ns: 14.0,
            t_rcd_ns: 14.0,
            t_rp_ns: 14.0,
            t_ccd_l_ns: 5.0,
            bank_groups: 4,
            banks_per_channel: 16,
            row_bytes: 8192,
            page_policy: RowPolicy::OpenRow,
        }
    }
}

impl DramTiming {
    pub fn t_burst_ns(&self) -> f64 {
        self.burst_beats as f64 / self.data_rate_mts * 1e3
    }

    pub fn line_bytes(&self) -> u64 {
        self.bus_width_bytes as u64 * self.burst_beats as u64
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("data_rate_mts", self.data_rate_mts),
            ("t_cl_ns", self.t_cl_ns),
            ("t_rcd_ns", self.t_rcd_ns),
            ("t_rp_ns", self.t_rp_ns),
        ];
        for (k, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::validation(format!("dram.{k}"), "must be > 0"));
            }
        }
        if self.t_ccd_l_ns.is_nan() || self.t_ccd_l_ns < 0.0 {
            return Err(SimError::validation("dram.t_ccd_l_ns", "must be >= 0"));
        }
        if self.line_bytes() != LINE {
            return Err(SimError::validation(
                "dram.burst_beats",
                "bus_width_bytes * burst_beats must equal 64",
            ));
        }
        if self.banks_per_channel == 0 || !self.banks_per_channel.is_power_of_two() {
            return Err(SimError::validation(
                "dram.banks_per_channel",
                "must be a power of two",
            ));
        }
        if self.bank_groups == 0 || !self.banks_per_channel.is_multiple_of(self.bank_groups) {
            return Err(SimError::validation(
                "dram.bank_groups",
                "must divide banks_per_channel",
            ));
        }
        if self.row_bytes < LINE || !self.row_bytes.is_power_of_two() {
            return Err(SimError::validation(
                "dram.row_bytes",
                "must be a power of two >= 64",
            ));
        }
        Ok(())
    }

    pub fn to_ps(&self) -> TimingPs {
        TimingPs {
            cl: SimTime::from_ns_f64(self.t_cl_ns),
            rcd: SimTime::from_ns_f64(self.t_rcd_ns),
            rp: SimTime::from_ns_f64(self.t_rp_ns),
            burst: SimTime::from_ns_f64(self.t_burst_ns()),
            ccd_l: SimTime::from_ns_f64(self.t_ccd_l_ns),
            banks: self.banks_per_channel,
            banks_per_group: self.banks_per_channel / self.bank_groups,
            lines_per_row: self.row_bytes / LINE,
            policy: self.page_policy,
        }
    }
}

/// Peak theoretical bandwidth in GB/s: `channels * 64 B / tBURST`.
pub fn peak_bandwidth(timing: &DramTiming, channels: u32) -> f64 {
    channels as f64 * timing.line_bytes() as f64 / timing.t_burst_ns()
}

/// Timing converted to integer picoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimingPs {
    pub cl: SimTime,
    pub rcd: SimTime,
    pub rp: SimTime,
    pub burst: SimTime,
    pub ccd_l: SimTime,
    pub banks: u32,
    pub banks_per_group: u32,
    pub lines_per_row: u64,
    pub policy: RowPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DramAddr {
    pub channel: u32,
    pub bank: u32,
    pub row: u64,
}

/// Maps a byte offset into the device to channel/bank/row.
///
/// Line-interleaved across channels; within a channel the bank bits sit
/// directly above the channel bits, then the column, then the row.
///
/// The bank index is XORed with every bank-sized slice of the row number
/// (permutation interleaving), so same-offset lines of different rows,
/// such as co-indexed elements of page-aligned arrays, spread across banks
/// instead of all conflicting in one.
pub fn decode_address(
    offset: u64,
    channels: u32,
    timing: &TimingPs,
    capacity: u64,
) -> Result<DramAddr> {
    if offset >= capacity {
        return Err(SimError::OutOfRange(offset));
    }
    let line = offset / LINE;
    let channel = (line % channels as u64) as u32;
    let in_channel = line / channels as u64;
    let banks = timing.banks as u64;
    let in_bank = in_channel / banks;
    let row = in_bank / timing.lines_per_row;
    let mut bank = in_channel % banks;
    let mut rest = row;
    while rest > 0 {
        bank ^= rest % banks;
        rest /= banks;
    }
    Ok(DramAddr {
        channel,
        bank: bank as u32,
        row,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowOutcome {
    Hit,
    Empty,
    Conflict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Service {
    /// When the column command issued.
    pub column: SimTime,
    /// When the last data beat left the bus.
    pub completion: SimTime,
    pub outcome: RowOutcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Bank {
    open_row: Option<u64>,
    ready: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelState {
    banks: Vec<Bank>,
    bus_free: SimTime,
    group_last_column: Vec<Option<SimTime>>,
}

impl ChannelState {
    pub fn new(timing: &TimingPs) -> Self {
        ChannelState {
            banks: vec![Bank::default(); timing.banks as usize],
            bus_free: SimTime::ZERO,
            group_last_column: vec![None; (timing.banks / timing.banks_per_group) as usize],
        }
    }

    pub fn open_row(&self, bank: u32) -> Option<u64> {
        self.banks[bank as usize].open_row
    }

    pub fn bus_free(&self) -> SimTime {
        self.bus_free
    }
}

/// Services one access decided at `now` and advances bank and bus state.
///
/// On an idle channel the completion is `now + tCL + tBURST` for a row
/// hit, `+ tRCD` for an empty bank and `+ tRP + tRCD` for a conflict.
pub fn dram_service(
    ch: &mut ChannelState,
    t: &TimingPs,
    bank: u32,
    row: u64,
    now: SimTime,
) -> Service {
    dram_service_queued(ch, t, bank, row, now, now)
}

/// Like [`dram_service`] for a request that has waited in the controller
/// queue since `arrived`. Precharge and activate for its row may start as
/// soon as the request is present and the bank's previous column command
/// has issued, so they overlap other banks' transfers. The column command
/// itself never issues before `now`.
pub fn dram_service_queued(
    ch: &mut ChannelState,
    t: &TimingPs,
    bank: u32,
    row: u64,
    arrived: SimTime,
    now: SimTime,
) -> Service {
    let b = ch.banks[bank as usize];
    let prep = arrived.min(now).max(b.ready);
    let (outcome, mut column) = match b.open_row {
        Some(r) if r == row => (RowOutcome::Hit, prep),
        None => (RowOutcome::Empty, prep + t.rcd),
        Some(_) => (RowOutcome::Conflict, prep + t.rp + t.rcd),
    };
    column = column.max(now);
    let group = (bank / t.banks_per_group) as usize;
    if let Some(last) = ch.group_last_column[group] {
        column = column.max(last + t.ccd_l);
    }
    let data = (column + t.cl).max(ch.bus_free);
    column = data - t.cl;
    let completion = data + t.burst;
    ch.bus_free = completion;
    ch.group_last_column[group] = Some(column);
    let bank_state = &mut ch.banks[bank as usize];
    match t.policy {
        RowPolicy::OpenRow => {
            bank_state.open_row = Some(row);
            bank_state.ready = column;
        }
        RowPolicy::ClosedRow => {
            bank_state.open_row = None;
            bank_state.ready = completion + t.rp;
        }
    }
    Service {
        column,
        completion,
        outcome,
    }
}

#[derive(Clone, Debug)]
struct Queued {
    req: MemReq,
    bank: u32,
    row: u64,
    arrived: SimTime,
}

/// One channel's request queue and scheduler.
#[derive(Clone, Debug)]
pub struct ChannelController {
    pub state: ChannelState,
    timing: TimingPs,
    queue: VecDeque<Queued>,
    capacity: usize,
    tick_pending: bool,
    next_issue: SimTime,
    pub totals: ControllerCounters,
}

impl ChannelController {
    pub fn new(timing: TimingPs, capacity: usize) -> Self {
        ChannelController {
            state: ChannelState::new(&timing),
            timing,
            queue: VecDeque::new(),
            capacity,
            tick_pending: false,
            next_issue: SimTime::ZERO,
            totals: ControllerCounters::default(),
        }
    }

    pub fn timing(&self) -> &TimingPs {
        &self.timing
    }

    pub fn has_space(&self) -> bool {
        self.queue.len() < self.capacity
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn enqueue(&mut self, req: MemReq, addr: DramAddr, now: SimTime) {
        self.queue.push_back(Queued {
            req,
            bank: addr.bank,
            row: addr.row,
            arrived: now,
        });
    }

    /// When the owner should deliver the next scheduling tick, if one is
    /// needed and not already outstanding.
    pub fn tick_request(&mut self, now: SimTime) -> Option<SimTime> {
        if self.tick_pending || self.queue.is_empty() {
            return None;
        }
        self.tick_pending = true;
        Some(now.max(self.next_issue))
    }

    /// Picks the oldest row hit within the reorder window, else the head,
    /// and services it.
    pub fn tick(&mut self, now: SimTime) -> Option<(MemReq, Service)> {
        self.tick_pending = false;
        if self.queue.is_empty() {
            return None;
        }
        let pick = self
            .queue
            .iter()
            .take(REORDER_WINDOW)
            .position(|q| self.state.open_row(q.bank) == Some(q.row))
            .unwrap_or(0);
        let q = self.queue.remove(pick).expect("index in range");
        let svc = dram_service_queued(&mut self.state, &self.timing, q.bank, q.row, q.arrived, now);
        self.next_issue = svc.column.max(now);
        let c = &mut self.totals;
        match q.req.kind {
            crate::memnet::ReqKind::Read => c.bytes_read += LINE,
            crate::memnet::ReqKind::Write => c.bytes_written += LINE,
        }
        c.busy_ps += self.timing.burst.ps();
        if svc.outcome == RowOutcome::Hit {
            c.row_hits += 1;
        } else {
            c.row_misses += 1;
        }
        Some((q.req, svc))
    }
}
