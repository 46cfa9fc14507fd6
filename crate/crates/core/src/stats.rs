//! Counters, ROI-scoped snapshots and derived metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::{Result, SimError};

/// Fixed log2 buckets. Bucket `i` holds values in `[2^i, 2^(i+1))`; zero
/// lands in bucket 0 and anything past the last bucket saturates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Log2Histogram {
    pub buckets: Vec<u64>,
}

impl Log2Histogram {
    /// 1 ns .. 16 us in nanoseconds.
    pub const LATENCY_BUCKETS: usize = 15;

    pub fn new(buckets: usize) -> Self {
        Log2Histogram {
            buckets: vec![0; buckets],
        }
    }

    pub fn record(&mut self, value: u64) {
        let i = if value <= 1 {
            0
        } else {
            63 - value.leading_zeros() as usize
        };
        let last = self.buckets.len() - 1;
        self.buckets[i.min(last)] += 1;
    }

    pub fn count(&self) -> u64 {
        self.buckets.iter().sum()
    }

    pub fn merge(&mut self, other: &Log2Histogram) {
        if self.buckets.len() < other.buckets.len() {
            self.buckets.resize(other.buckets.len(), 0);
        }
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerCounters {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub busy_ps: u64,
    pub row_hits: u64,
    pub row_misses: u64,
}

impl ControllerCounters {
    pub fn bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }

    pub fn merge(&mut self, o: &ControllerCounters) {
        self.bytes_read += o.bytes_read;
        self.bytes_written += o.bytes_written;
        self.busy_ps += o.busy_ps;
        self.row_hits += o.row_hits;
        self.row_misses += o.row_misses;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub bytes: u64,
    pub requests: u64,
    /// Requests in flight at each departure, log2 buckets.
    pub in_flight: Log2Histogram,
}

impl Default for LinkCounters {
    fn default() -> Self {
        LinkCounters {
            bytes: 0,
            requests: 0,
            in_flight: Log2Histogram::new(12),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreCounters {
    pub retired_ops: u64,
    pub cycles: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounters {
    pub hits: u64,
    pub misses: u64,
}

impl LevelCounters {
    pub fn hit_rate(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            0.0
        } else {
            self.hits as f64 / n as f64
        }
    }
}

/// Everything measured for one node over one region of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub label: String,
    pub begin: SimTime,
    pub end: SimTime,
    pub cores: Vec<CoreCounters>,
    pub local_ops: u64,
    pub remote_ops: u64,
    pub compute_ops: u64,
    pub caches: [LevelCounters; 3],
    pub prefetches: u64,
    pub writebacks: u64,
    pub local_ctrl: ControllerCounters,
    pub link: LinkCounters,
    pub xbar_ingress_bytes: u64,
    pub remote_ctrl: ControllerCounters,
    /// Memory request round trip, nanoseconds.
    pub latency: Log2Histogram,
    /// Bytes the workload itself claims to have moved (STREAM convention).
    pub workload_bytes: u64,
}

impl RoiStats {
    pub fn new(label: impl Into<String>, begin: SimTime, cores: usize) -> Self {
        RoiStats {
            label: label.into(),
            begin,
            end: begin,
            cores: vec![CoreCounters::default(); cores],
            local_ops: 0,
            remote_ops: 0,
            compute_ops: 0,
            caches: Default::default(),
            prefetches: 0,
            writebacks: 0,
            local_ctrl: ControllerCounters::default(),
            link: LinkCounters::default(),
            xbar_ingress_bytes: 0,
            remote_ctrl: ControllerCounters::default(),
            latency: Log2Histogram::new(Log2Histogram::LATENCY_BUCKETS),
            workload_bytes: 0,
        }
    }

    pub fn duration(&self) -> SimTime {
        self.end.saturating_sub(self.begin)
    }

    pub fn retired_ops(&self) -> u64 {
        self.cores.iter().map(|c| c.retired_ops).sum()
    }

    pub fn memory_ops(&self) -> u64 {
        self.local_ops + self.remote_ops
    }

    /// Aggregate operations per core-cycle over the cores that did work.
    pub fn ipc_proxy(&self) -> f64 {
        let cycles: u64 = self
            .cores
            .iter()
            .filter(|c| c.retired_ops > 0)
            .map(|c| c.cycles)
            .sum();
        if cycles == 0 {
            0.0
        } else {
            self.retired_ops() as f64 / cycles as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Meter {
    LocalController,
    Link,
    RemoteController,
    Workload,
}

/// GB/s (1e9 bytes per second) moved through `meter` during the ROI.
pub fn bandwidth(roi: &RoiStats, meter: Meter) -> Result<f64> {
    let d = roi.duration();
    if d == SimTime::ZERO {
        return Err(SimError::EmptyRoi);
    }
    let bytes = match meter {
        Meter::LocalController => roi.local_ctrl.bytes(),
        Meter::Link => roi.link.bytes,
        Meter::RemoteController => roi.remote_ctrl.bytes(),
        Meter::Workload => roi.workload_bytes,
    };
    Ok(gbps(bytes, d))
}

pub fn gbps(bytes: u64, over: SimTime) -> f64 {
    // bytes per picosecond * 1e3 = GB/s
    bytes as f64 / over.ps() as f64 * 1e3
}

/// Fraction of retired memory operations that targeted remote memory.
pub fn remote_split(roi: &RoiStats) -> Result<f64> {
    let total = roi.memory_ops();
    if total == 0 {
        return Err(SimError::NoMemoryOps);
    }
    Ok(roi.remote_ops as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeInputs {
    pub num_processes: u32,
    pub time_serial_baseline: f64,
    pub time_parallel: f64,
}

/// `(1 / processes) * (serial / parallel)`; 1.0 means perfect scaling.
pub fn parallel_efficiency(inp: PeInputs) -> f64 {
    (1.0 / inp.num_processes as f64) * (inp.time_serial_baseline / inp.time_parallel)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node: usize,
    pub arch_profile: String,
    pub rois: Vec<RoiStats>,
}

/// Sealed statistics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSnapshot {
    pub run_id: String,
    pub nodes: Vec<NodeStats>,
    pub end_time: SimTime,
    pub events: u64,
    /// False when the horizon cut the run short.
    pub complete: bool,
    /// Host seconds; never part of the CSV report.
    pub wallclock_s: f64,
}

impl StatSnapshot {
    pub fn roi(&self, node: usize, label: &str) -> Option<&RoiStats> {
        self.nodes.get(node)?.rois.iter().find(|r| r.label == label)
    }

    pub fn all_rois(&self) -> impl Iterator<Item = (usize, &RoiStats)> {
        self.nodes
            .iter()
            .flat_map(|n| n.rois.iter().map(move |r| (n.node, r)))
    }

    /// Every byte that left a node over its link reached the remote
    /// controller (and crossbar), per ROI.
    pub fn conservation_holds(&self) -> bool {
        self.all_rois().all(|(_, r)| {
            r.link.bytes == r.xbar_ingress_bytes && r.link.bytes == r.remote_ctrl.bytes()
        })
    }

    /// SHA-256 of the CSV report.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_csv_rows().as_bytes());
        hex(&h.finalize())
    }

    pub const CSV_HEADER: &'static str = "run_id,node,component,metric,roi,value\n";

    /// Long-format rows without the header.
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        let mut row = |node: usize, comp: &str, metric: &str, roi: &str, value: String| {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.run_id, node, comp, metric, roi, value
            );
        };
        for n in &self.nodes {
            for r in &n.rois {
                let l = r.label.as_str();
                let node = n.node;
                row(node, "roi", "begin_ps", l, r.begin.ps().to_string());
                row(node, "roi", "end_ps", l, r.end.ps().to_string());
                row(node, "roi", "duration_ps", l, r.duration().ps().to_string());
                for (i, c) in r.cores.iter().enumerate() {
                    row(
                        node,
                        &format!("core{i}"),
                        "retired_ops",
                        l,
                        c.retired_ops.to_string(),
                    );
                    row(node, &format!("core{i}"), "cycles", l, c.cycles.to_string());
                }
                row(node, "node", "ipc_proxy", l, fmt_f(r.ipc_proxy()));
                row(node, "node", "local_ops", l, r.local_ops.to_string());
                row(node, "node", "remote_ops", l, r.remote_ops.to_string());
                row(node, "node", "compute_ops", l, r.compute_ops.to_string());
                if let Ok(s) = remote_split(r) {
                    row(node, "node", "remote_split", l, fmt_f(s));
                }
                for (name, c) in ["l1d", "l2", "l3"].iter().zip(&r.caches) {
                    row(node, name, "hits", l, c.hits.to_string());
                    row(node, name, "misses", l, c.misses.to_string());
                    row(node, name, "hit_rate", l, fmt_f(c.hit_rate()));
                }
                row(node, "l2", "prefetches", l, r.prefetches.to_string());
                row(node, "node", "writebacks", l, r.writebacks.to_string());
                for (comp, c) in [
                    ("local_ctrl", &r.local_ctrl),
                    ("remote_ctrl", &r.remote_ctrl),
                ] {
                    row(node, comp, "bytes_read", l, c.bytes_read.to_string());
                    row(node, comp, "bytes_written", l, c.bytes_written.to_string());
                    row(node, comp, "busy_ps", l, c.busy_ps.to_string());
                    row(node, comp, "row_hits", l, c.row_hits.to_string());
                    row(node, comp, "row_misses", l, c.row_misses.to_string());
                }
                row(node, "link", "bytes", l, r.link.bytes.to_string());
                row(node, "link", "requests", l, r.link.requests.to_string());
                for (i, b) in r.link.in_flight.buckets.iter().enumerate() {
                    row(
                        node,
                        "link",
                        &format!("in_flight_log2_{i}"),
                        l,
                        b.to_string(),
                    );
                }
                row(
                    node,
                    "xbar",
                    "ingress_bytes",
                    l,
                    r.xbar_ingress_bytes.to_string(),
                );
                for (i, b) in r.latency.buckets.iter().enumerate() {
                    row(
                        node,
                        "node",
                        &format!("latency_ns_log2_{i}"),
                        l,
                        b.to_string(),
                    );
                }
                row(node, "workload", "bytes", l, r.workload_bytes.to_string());
                for (comp, m) in [
                    ("workload", Meter::Workload),
                    ("link", Meter::Link),
                    ("local_ctrl", Meter::LocalController),
                    ("remote_ctrl", Meter::RemoteController),
                ] {
                    if let Ok(bw) = bandwidth(r, m) {
                        row(node, comp, "bandwidth_gbps", l, fmt_f(bw));
                    }
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push_str(&self.to_csv_rows());
        s
    }

    /// Compact JSON summary; wallclock excluded so it is reproducible.
    pub fn summary_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| {
                let rois: Vec<serde_json::Value> = n
                    .rois
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "label": r.label,
                            "duration_ns": r.duration().as_ns(),
                            "ipc_proxy": r.ipc_proxy(),
                            "remote_split": remote_split(r).ok(),
                            "workload_gbps": bandwidth(r, Meter::Workload).ok(),
                            "link_gbps": bandwidth(r, Meter::Link).ok(),
                            "remote_ctrl_gbps": bandwidth(r, Meter::RemoteController).ok(),
                            "local_ctrl_gbps": bandwidth(r, Meter::LocalController).ok(),
                            "hit_rates": r.caches.iter().map(LevelCounters::hit_rate).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                serde_json::json!({ "node": n.node, "arch_profile": n.arch_profile, "rois": rois })
            })
            .collect();
        serde_json::json!({
            "run_id": self.run_id,
            "end_ps": self.end_time.ps(),
            "events": self.events,
            "complete": self.complete,
            "conservation": self.conservation_holds(),
            "nodes": nodes,
        })
    }
}

/// Fixed-precision float formatting so reports diff cleanly.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.9}")
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_gib_in_100_ms() {
        let mut r = RoiStats::new("x", SimTime::ZERO, 1);
        r.end = SimTime(100_000_000_000);
        r.link.bytes = 1 << 30;
        assert!((bandwidth(&r, Meter::Link).unwrap() - 10.737_418_24).abs() < 1e-9);
    }

    #[test]
    fn zero_duration_is_empty() {
        let r = RoiStats::new("x", SimTime(5), 1);
        assert_eq!(bandwidth(&r, Meter::Link), Err(SimError::EmptyRoi));
    }

    #[test]
    fn split_bounds() {
        let mut r = RoiStats::new("x", SimTime::ZERO, 1);
        assert_eq!(remote_split(&r), Err(SimError::NoMemoryOps));
        r.local_ops = 10;
        assert_eq!(remote_split(&r).unwrap(), 0.0);
        r.local_ops = 0;
        r.remote_ops = 10;
        assert_eq!(remote_split(&r).unwrap(), 1.0);
    }

    #[test]
    fn pe_points() {
        let pe = |n, s, p| {
            parallel_efficiency(PeInputs {
                num_processes: n,
                time_serial_baseline: s,
                time_parallel: p,
            })
        };
        assert_eq!(pe(1, 3.0, 3.0), 1.0);
        assert!((pe(2, 76.0, 100.0) - 0.38).abs() < 1e-12);
        assert!((pe(17, 109.0, 100.0) - 1.09 / 17.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_buckets() {
        let mut h = Log2Histogram::new(Log2Histogram::LATENCY_BUCKETS);
        for v in [0, 1, 2, 3, 4, 1 << 20] {
            h.record(v);
        }
        assert_eq!(h.buckets[0], 2);
        assert_eq!(h.buckets[1], 2);
        assert_eq!(h.buckets[2], 1);
        assert_eq!(h.buckets[14], 1);
    }

    proptest! {
        #[test]
        fn pe_is_scale_invariant(n in 1u32..64, s in 0.001f64..1e4, p in 0.001f64..1e4, c in 0.001f64..1e3) {
            let a = parallel_efficiency(PeInputs { num_processes: n, time_serial_baseline: s, time_parallel: p });
            let b = parallel_efficiency(PeInputs { num_processes: n, time_serial_baseline: s * c, time_parallel: p * c });
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn histogram_merge_commutes(xs in proptest::collection::vec(0u64..100_000, 0..50), ys in proptest::collection::vec(0u64..100_000, 0..50)) {
            let mk = |v: &[u64]| { let mut h = Log2Histogram::new(15); v.iter().for_each(|x| h.record(*x)); h };
            let (a, b) = (mk(&xs), mk(&ys));
            let mut ab = a.clone(); ab.merge(&b);
            let mut ba = b.clone(); ba.merge(&a);
            prop_assert_eq!(ab.count(), (xs.len() + ys.len()) as u64);
            prop_assert_eq!(ab, ba);
        }
    }
}
