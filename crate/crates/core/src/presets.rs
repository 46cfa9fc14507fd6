//! Experiment presets for each case study, and the report files they
//! write.
//!
//! Every preset takes `key=value` overrides. Keys under `preset.` set the
//! preset's own parameters (sweep points, sizes); all other keys apply to
//! the base cluster config before the preset derives its variants.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::RunOutput;
use crate::config::{apply_override, ClusterConfig, NodeGroup, SharedSegment};
use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::fabric::{PagePolicy, PolicyKind};
use crate::lifecycle::{fast_forward, ClusterState, Phase};
use crate::memnet::{calibrate, CalibrationReport};
use crate::memory::{DataPort, MemPort, SharedAccess};
use crate::stats::{
    bandwidth, fmt_f, gbps, hex, parallel_efficiency, remote_split, Meter, PeInputs, StatSnapshot,
};
use crate::workloads::graph::{reference_digest, Csr};
use crate::workloads::{
    GraphKernel, GraphPlacement, GraphSpec, Layout, Pattern, StreamSpec, WalkerSpec, WorkloadSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Calibration,
    StreamPolicies,
    LatencySweep,
    PoolingStudy,
    SharingStudy,
    ScaleSweep,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Calibration,
        Preset::StreamPolicies,
        Preset::LatencySweep,
        Preset::PoolingStudy,
        Preset::SharingStudy,
        Preset::ScaleSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Calibration => "calibration",
            Preset::StreamPolicies => "stream-policies",
            Preset::LatencySweep => "latency-sweep",
            Preset::PoolingStudy => "pooling-study",
            Preset::SharingStudy => "sharing-study",
            Preset::ScaleSweep => "scale-sweep",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let s = if s == "calibrate" { "calibration" } else { s };
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::validation("preset", format!("unknown preset `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetOptions {
    pub threads: usize,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            threads: 1,
            seed: None,
            overrides: Vec::new(),
        }
    }
}

impl PresetOptions {
    pub fn with_overrides(threads: usize, overrides: &[&str]) -> Self {
        PresetOptions {
            threads,
            seed: None,
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn split(&self) -> (Vec<String>, Vec<String>) {
        let (params, base): (Vec<_>, Vec<_>) = self
            .overrides
            .iter()
            .cloned()
            .partition(|o| o.starts_with("preset."));
        (
            params
                .into_iter()
                .map(|o| o["preset.".len()..].to_string())
                .collect(),
            base,
        )
    }
}

/// Parameters of the calibration preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationParams {
    /// Measurement window after warm-up.
    pub window_ns: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams { window_ns: 200_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamPoliciesParams {
    pub nodes: u32,
    #[serde(with = "crate::config::bytes")]
    pub array_bytes: u64,
    pub policies: Vec<PolicyKind>,
    /// Device-level calibration window used for the aggregate comparison.
    pub calibration_window_ns: u64,
}

impl Default for StreamPoliciesParams {
    fn default() -> Self {
        StreamPoliciesParams {
            nodes: 8,
            array_bytes: 4 << 20,
            policies: vec![
                PolicyKind::MemBindLocal,
                PolicyKind::MemBindRemote,
                PolicyKind::Interleave,
            ],
            calibration_window_ns: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySweepParams {
    pub latencies_ns: Vec<f64>,
    #[serde(with = "crate::config::bytes")]
    pub array_bytes: u64,
}

impl Default for LatencySweepParams {
    fn default() -> Self {
        LatencySweepParams {
            latencies_ns: vec![0.0, 170.0, 250.0],
            array_bytes: 4 << 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingParams {
    #[serde(with = "crate::config::bytes")]
    pub local_capacity: u64,
    /// Footprint as a multiple of local capacity.
    pub ratios: Vec<f64>,
    pub compute_cost: u32,
    /// Walk order. Pointer chasing issues dependent loads, so the walk is
    /// bound by access latency the way irregular pooled applications are.
    pub pattern: Pattern,
}

impl Default for PoolingParams {
    fn default() -> Self {
        PoolingParams {
            local_capacity: 16 << 20,
            ratios: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            compute_cost: 4,
            pattern: Pattern::PointerChase { seed: 7 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharingParams {
    pub readers: u32,
    pub vertices: u32,
    pub edges: u64,
}

impl Default for SharingParams {
    fn default() -> Self {
        SharingParams {
            readers: 3,
            vertices: 8192,
            edges: 65536,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleParams {
    pub node_counts: Vec<u32>,
    #[serde(with = "crate::config::bytes")]
    pub array_bytes: u64,
}

impl Default for ScaleParams {
    fn default() -> Self {
        ScaleParams {
            node_counts: vec![1, 2, 4, 8, 16],
            array_bytes: 1 << 20,
        }
    }
}

fn params<T: Serialize + DeserializeOwned + Default>(overrides: &[String]) -> Result<T> {
    let mut value = toml::Value::try_from(T::default())
        .map_err(|e| SimError::validation("preset", e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| SimError::validation("preset", e.message().to_string()))
}

/// One cluster run of a preset.
pub struct VariantRun {
    pub label: String,
    pub config: ClusterConfig,
    pub output: RunOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamPoint {
    pub policy: PolicyKind,
    pub kernel: String,
    /// Workload-reported bandwidth of each node.
    pub node_gbps: Vec<f64>,
    pub mean_node_gbps: f64,
    /// Remote controller bytes of all nodes over the span of their ROIs.
    pub aggregate_remote_gbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub latency_ns: f64,
    /// Link bytes over ROI time, summed over the STREAM kernels.
    pub link_gbps: f64,
    pub workload_gbps: f64,
    /// Credit-limited ceiling: credits * 64 B / minimum round trip.
    pub bound_gbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingPoint {
    pub ratio: f64,
    pub footprint: u64,
    pub remote_fraction: f64,
    pub ipc_preferred: f64,
    pub ipc_baseline: f64,
    pub relative_ipc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReaderCheck {
    pub node: usize,
    pub digests_shared: Vec<(String, String)>,
    pub digests_local: Vec<(String, String)>,
    /// Measured remote split per kernel.
    pub remote_split: Vec<(String, f64)>,
    /// The same split counted by the functional phase.
    pub oracle_split: Vec<(String, f64)>,
    pub store_rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingCheck {
    pub reference: Vec<(String, String)>,
    pub checksum_before: String,
    pub checksum_after: String,
    pub readers: Vec<ReaderCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub nodes: u32,
    pub threads: usize,
    pub serial_s: f64,
    pub parallel_s: f64,
    pub parallel_efficiency: f64,
}

/// Preset-specific derived results; all deterministic except `Scale`,
/// which only feeds the wallclock report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Details {
    Calibration(CalibrationReport),
    Stream {
        calibration: CalibrationReport,
        points: Vec<StreamPoint>,
    },
    Latency {
        points: Vec<LatencyPoint>,
    },
    Pooling {
        points: Vec<PoolingPoint>,
    },
    Sharing(SharingCheck),
    Scale {
        points: Vec<ScalePoint>,
    },
}

pub struct PresetReport {
    pub preset: Preset,
    pub options: PresetOptions,
    pub runs: Vec<VariantRun>,
    pub details: Details,
    pub wallclock_s: f64,
}

impl PresetReport {
    pub fn csv(&self) -> String {
        let mut s = String::from(StatSnapshot::CSV_HEADER);
        if let Details::Calibration(c) = &self.details {
            let id = &self.manifest_hash()[..16];
            for (metric, v) in [
                ("peak_gbps", c.peak_gbps),
                ("sustained_gbps", c.sustained_gbps),
                ("ratio", c.ratio),
            ] {
                s.push_str(&format!(
                    "{id},0,remote_ctrl,{metric},calibration,{}\n",
                    fmt_f(v)
                ));
            }
            s.push_str(&format!(
                "{id},0,remote_ctrl,measured_bytes,calibration,{}\n",
                c.measured_bytes
            ));
        }
        for r in &self.runs {
            s.push_str(&r.output.snapshot.to_csv_rows());
        }
        s
    }

    pub fn summary(&self) -> serde_json::Value {
        let runs: Vec<serde_json::Value> = self
            .runs
            .iter()
            .map(|r| serde_json::json!({ "variant": r.label, "summary": r.output.snapshot.summary_json() }))
            .collect();
        let details = match &self.details {
            Details::Scale { .. } => serde_json::Value::Null,
            d => serde_json::to_value(d).expect("details serialize"),
        };
        serde_json::json!({ "preset": self.preset.name(), "runs": runs, "details": details })
    }

    fn manifest_hash(&self) -> String {
        let opts = PresetOptions {
            threads: 1,
            ..self.options.clone()
        };
        let mut h = Sha256::new();
        h.update(self.preset.name().as_bytes());
        h.update(serde_json::to_vec(&opts).expect("options serialize"));
        hex(&h.finalize())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            preset: self.preset,
            threads: self.options.threads,
            seed: self.options.seed,
            overrides: self.options.overrides.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            variants: self
                .runs
                .iter()
                .map(|r| ManifestVariant {
                    label: r.label.clone(),
                    run_id: r.output.snapshot.run_id.clone(),
                    config_sha256: hex(&Sha256::digest(r.config.to_toml().as_bytes())),
                    seed: r.config.seed,
                })
                .collect(),
            csv_sha256: hex(&Sha256::digest(self.csv().as_bytes())),
        }
    }

    pub fn wallclock(&self) -> serde_json::Value {
        let runs: Vec<_> = self
            .runs
            .iter()
            .map(|r| serde_json::json!({ "variant": r.label, "wallclock_s": r.output.snapshot.wallclock_s }))
            .collect();
        let scale = match &self.details {
            Details::Scale { points } => serde_json::to_value(points).expect("points serialize"),
            _ => serde_json::Value::Null,
        };
        serde_json::json!({ "total_s": self.wallclock_s, "runs": runs, "scale": scale })
    }

    /// Writes `stats.csv`, `summary.json`, `manifest.json` and
    /// `wallclock.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json") + "\n";
        std::fs::write(dir.join("stats.csv"), self.csv())?;
        std::fs::write(dir.join("summary.json"), json(&self.summary()))?;
        std::fs::write(
            dir.join("manifest.json"),
            json(&serde_json::to_value(self.manifest()).expect("manifest")),
        )?;
        std::fs::write(dir.join("wallclock.json"), json(&self.wallclock()))?;
        Ok(())
    }
}

/// Everything needed to regenerate a preset's report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Preset,
    pub threads: usize,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub version: String,
    pub variants: Vec<ManifestVariant>,
    pub csv_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestVariant {
    pub label: String,
    pub run_id: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Manifest {
    pub fn options(&self) -> PresetOptions {
        PresetOptions {
            threads: self.threads,
            seed: self.seed,
            overrides: self.overrides.clone(),
        }
    }
}

/// Base cluster config every preset starts from.
fn base_config(opts: &PresetOptions, base_overrides: &[String]) -> Result<ClusterConfig> {
    let cfg = ClusterConfig {
        seed: opts.seed.unwrap_or(0),
        horizon_ns: None,
        sync: Default::default(),
        link: Default::default(),
        device: Default::default(),
        nodes: vec![NodeGroup::new(1, PagePolicy::local(), WorkloadSpec::Idle)],
        shared: Vec::new(),
    };
    let mut cfg = cfg.with_overrides(base_overrides)?;
    cfg.sync.threads = opts.threads;
    Ok(cfg)
}

fn policy_of(kind: PolicyKind) -> PagePolicy {
    match kind {
        PolicyKind::MemBindLocal => PagePolicy::local(),
        PolicyKind::MemBindRemote => PagePolicy::remote(),
        PolicyKind::Interleave => PagePolicy::interleave(),
        PolicyKind::PreferredLocal => PagePolicy::preferred_local(),
    }
}

fn policy_label(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::MemBindLocal => "local",
        PolicyKind::MemBindRemote => "remote",
        PolicyKind::Interleave => "interleave",
        PolicyKind::PreferredLocal => "preferred",
    }
}

/// Replaces the node groups with one group of `count` nodes, keeping the
/// hardware of the base config's first group.
fn with_nodes(
    base: &ClusterConfig,
    count: u32,
    policy: PagePolicy,
    workload: WorkloadSpec,
) -> ClusterConfig {
    let mut cfg = base.clone();
    let hw = base.nodes[0].hw.clone();
    cfg.nodes = vec![NodeGroup {
        count,
        policy,
        remote_bytes: None,
        hw,
        workload,
    }];
    cfg
}

fn run_config(cfg: &ClusterConfig, label: impl Into<String>) -> Result<VariantRun> {
    cfg.validate()?;
    let state = fast_forward(cfg)?;
    let output = state.run(cfg, Phase::Timing)?;
    Ok(VariantRun {
        label: label.into(),
        config: cfg.clone(),
        output,
    })
}

fn stream(array_bytes: u64) -> WorkloadSpec {
    WorkloadSpec::Stream(StreamSpec {
        array_bytes,
        ..StreamSpec::default()
    })
}

/// Calibration of the device under the base config's DRAM timing.
fn device_calibration(cfg: &ClusterConfig, window_ns: u64) -> Result<CalibrationReport> {
    calibrate(
        &cfg.device.dram,
        cfg.device.channels,
        SimTime::from_ns(window_ns),
    )
}

/// Sum of bytes over sum of durations across the ROIs of one node.
fn rate(snap: &StatSnapshot, node: usize, bytes: impl Fn(&crate::stats::RoiStats) -> u64) -> f64 {
    let rois = &snap.nodes[node].rois;
    let total: u64 = rois.iter().map(&bytes).sum();
    let time = SimTime(rois.iter().map(|r| r.duration().ps()).sum());
    gbps(total, time)
}

pub fn run_preset(preset: Preset, opts: &PresetOptions) -> Result<PresetReport> {
    let started = std::time::Instant::now();
    if opts.threads == 0 {
        return Err(SimError::validation("threads", "must be >= 1"));
    }
    let (param_overrides, base_overrides) = opts.split();
    let base = base_config(opts, &base_overrides)?;
    let (runs, details) = match preset {
        Preset::Calibration => {
            let p: CalibrationParams = params(&param_overrides)?;
            (
                Vec::new(),
                Details::Calibration(device_calibration(&base, p.window_ns)?),
            )
        }
        Preset::StreamPolicies => stream_policies(&base, params(&param_overrides)?)?,
        Preset::LatencySweep => latency_sweep(&base, params(&param_overrides)?)?,
        Preset::PoolingStudy => pooling_study(&base, params(&param_overrides)?)?,
        Preset::SharingStudy => sharing_study(&base, params(&param_overrides)?)?,
        Preset::ScaleSweep => scale_sweep(&base, params(&param_overrides)?)?,
    };
    Ok(PresetReport {
        preset,
        options: opts.clone(),
        runs,
        details,
        wallclock_s: started.elapsed().as_secs_f64(),
    })
}

fn stream_policies(
    base: &ClusterConfig,
    p: StreamPoliciesParams,
) -> Result<(Vec<VariantRun>, Details)> {
    let calibration = device_calibration(base, p.calibration_window_ns)?;
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for &kind in &p.policies {
        let cfg = with_nodes(base, p.nodes, policy_of(kind), stream(p.array_bytes));
        let run = run_config(&cfg, policy_label(kind))?;
        let snap = &run.output.snapshot;
        let kernels: Vec<String> = snap.nodes[0].rois.iter().map(|r| r.label.clone()).collect();
        for k in kernels {
            let rois: Vec<_> = snap
                .nodes
                .iter()
                .map(|n| n.rois.iter().find(|r| r.label == k).expect("kernel ROI"))
                .collect();
            let node_gbps: Vec<f64> = rois
                .iter()
                .map(|r| bandwidth(r, Meter::Workload))
                .collect::<Result<_>>()?;
            let begin = rois.iter().map(|r| r.begin).min().expect("nodes");
            let end = rois.iter().map(|r| r.end).max().expect("nodes");
            let remote: u64 = rois.iter().map(|r| r.remote_ctrl.bytes()).sum();
            points.push(StreamPoint {
                policy: kind,
                kernel: k,
                mean_node_gbps: node_gbps.iter().sum::<f64>() / node_gbps.len() as f64,
                node_gbps,
                aggregate_remote_gbps: gbps(remote, end - begin),
            });
        }
        runs.push(run);
    }
    Ok((
        runs,
        Details::Stream {
            calibration,
            points,
        },
    ))
}

/// Credit-limited link throughput ceiling for `cfg`.
pub fn littles_law_bound(cfg: &ClusterConfig) -> f64 {
    let one_way = cfg.link.latency_ns + 64.0 / cfg.link.bandwidth_gbps;
    let rtt = 2.0 * one_way + cfg.device.dram.t_cl_ns + cfg.device.dram.t_burst_ns();
    cfg.link.credits as f64 * 64.0 / rtt
}

fn latency_sweep(
    base: &ClusterConfig,
    p: LatencySweepParams,
) -> Result<(Vec<VariantRun>, Details)> {
    let cfg = with_nodes(base, 1, PagePolicy::remote(), stream(p.array_bytes));
    cfg.validate()?;
    let bytes = fast_forward(&cfg)?.to_bytes()?;
    let state = ClusterState::from_bytes(&bytes)?;
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for &lat in &p.latencies_ns {
        let mut timing = state.config.clone();
        timing.link.latency_ns = lat;
        timing.sync = base.sync.clone();
        timing.sync.lookahead_ns = None;
        let output = state.run(&timing, Phase::Timing)?;
        let snap = &output.snapshot;
        points.push(LatencyPoint {
            latency_ns: lat,
            link_gbps: rate(snap, 0, |r| r.link.bytes),
            workload_gbps: rate(snap, 0, |r| r.workload_bytes),
            bound_gbps: littles_law_bound(&timing),
        });
        runs.push(VariantRun {
            label: format!("latency_{lat}ns"),
            config: timing,
            output,
        });
    }
    Ok((runs, Details::Latency { points }))
}

fn pooling_study(base: &ClusterConfig, p: PoolingParams) -> Result<(Vec<VariantRun>, Details)> {
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for &ratio in &p.ratios {
        if ratio.is_nan() || ratio <= 0.0 {
            return Err(SimError::validation("preset.ratios", "ratios must be > 0"));
        }
        let footprint =
            ((p.local_capacity as f64 * ratio) as u64).next_multiple_of(crate::fabric::PAGE_SIZE);
        let walker = WorkloadSpec::Walker(WalkerSpec {
            compute_cost: p.compute_cost,
            ..WalkerSpec::new(footprint, p.pattern)
        });
        let mut pref = with_nodes(base, 1, PagePolicy::preferred_local(), walker.clone());
        pref.nodes[0].hw.local_capacity = p.local_capacity;
        let mut baseline = with_nodes(base, 1, PagePolicy::local(), walker);
        baseline.nodes[0].hw.local_capacity = footprint.max(p.local_capacity);
        let pref_run = run_config(&pref, format!("preferred_x{ratio}"))?;
        let base_run = run_config(&baseline, format!("baseline_x{ratio}"))?;
        let roi_p = &pref_run.output.snapshot.nodes[0].rois[0];
        let roi_b = &base_run.output.snapshot.nodes[0].rois[0];
        let (ipc_p, ipc_b) = (roi_p.ipc_proxy(), roi_b.ipc_proxy());
        points.push(PoolingPoint {
            ratio,
            footprint,
            remote_fraction: remote_split(roi_p)?,
            ipc_preferred: ipc_p,
            ipc_baseline: ipc_b,
            relative_ipc: ipc_p / ipc_b,
        });
        runs.push(pref_run);
        runs.push(base_run);
    }
    Ok((runs, Details::Pooling { points }))
}

/// Config of the sharing study: node 0 writes the graph, the rest read it
/// from the shared segment or from private local copies.
pub fn sharing_config(
    base: &ClusterConfig,
    p: &SharingParams,
    placement: GraphPlacement,
) -> ClusterConfig {
    let graph = GraphSpec {
        vertices: p.vertices,
        edges: p.edges,
        seed: 11,
    };
    let segment = "graph".to_string();
    let hw = base.nodes[0].hw.clone();
    let mut cfg = base.clone();
    let writer = NodeGroup {
        hw: hw.clone(),
        ..NodeGroup::new(
            1,
            PagePolicy::local(),
            WorkloadSpec::GraphWriter {
                segment: segment.clone(),
                graph,
            },
        )
    };
    let reader = NodeGroup {
        hw,
        ..NodeGroup::new(
            p.readers,
            PagePolicy::local(),
            WorkloadSpec::GraphReader {
                segment: segment.clone(),
                graph,
                kernels: vec![GraphKernel::Bfs, GraphKernel::Pagerank],
                placement,
            },
        )
    };
    cfg.nodes = vec![writer, reader];
    let readers = match placement {
        GraphPlacement::Shared => (1..=p.readers as usize).collect(),
        GraphPlacement::Local => Vec::new(),
    };
    cfg.shared = vec![SharedSegment {
        name: segment,
        writer: 0,
        readers,
        size: None,
    }];
    cfg
}

fn sharing_study(base: &ClusterConfig, p: SharingParams) -> Result<(Vec<VariantRun>, Details)> {
    if p.readers < 2 {
        return Err(SimError::validation(
            "preset.readers",
            "need at least 2 readers",
        ));
    }
    let shared_cfg = sharing_config(base, &p, GraphPlacement::Shared);
    shared_cfg.validate()?;
    let state = fast_forward(&shared_cfg)?;
    let checksum_before = hex(&state.segment_checksum("graph").expect("segment exists"));
    let oracle = state.run(&shared_cfg, Phase::Functional)?;
    let shared = state.run(&shared_cfg, Phase::Timing)?;
    let range = state.segments["graph"];
    let checksum_after = hex(&shared.shared.checksum(&range));

    let local_cfg = sharing_config(base, &p, GraphPlacement::Local);
    let local = run_config(&local_cfg, "all_local")?;

    let hosts = shared_cfg.hosts();
    let WorkloadSpec::GraphReader { graph, kernels, .. } = &hosts[1].workload else {
        unreachable!("node 1 reads")
    };
    let csr = Csr::generate(graph);
    let reference = kernels
        .iter()
        .map(|k| (k.label().to_string(), reference_digest(*k, &csr)))
        .collect();

    let mut readers = Vec::new();
    for node in 1..hosts.len() {
        let splits = |snap: &StatSnapshot| -> Result<Vec<(String, f64)>> {
            snap.nodes[node]
                .rois
                .iter()
                .map(|r| Ok((r.label.clone(), remote_split(r)?)))
                .collect()
        };
        let Layout::GraphReader(view) = state.layouts[node] else {
            unreachable!("reader layout")
        };
        let mut mem = state.nodes[node].clone();
        let mut port = MemPort::new(&mut mem, SharedAccess::Frozen(&state.shared));
        let store_rejected = matches!(
            port.write_u64(view.graph, 1),
            Err(SimError::ReadOnlyViolation { .. })
        );
        readers.push(ReaderCheck {
            node,
            digests_shared: shared.digests[node].clone(),
            digests_local: local.output.digests[node].clone(),
            remote_split: splits(&shared.snapshot)?,
            oracle_split: splits(&oracle.snapshot)?,
            store_rejected,
        });
    }
    let runs = vec![
        VariantRun {
            label: "shared".into(),
            config: shared_cfg,
            output: shared,
        },
        local,
    ];
    Ok((
        runs,
        Details::Sharing(SharingCheck {
            reference,
            checksum_before,
            checksum_after,
            readers,
        }),
    ))
}

fn scale_sweep(base: &ClusterConfig, p: ScaleParams) -> Result<(Vec<VariantRun>, Details)> {
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for &n in &p.node_counts {
        let mut cfg = with_nodes(base, n, PagePolicy::interleave(), stream(p.array_bytes));
        cfg.sync.threads = 1;
        let serial = run_config(&cfg, format!("nodes_{n}"))?;
        let threads = (n as usize + 1).min(base.sync.threads.max(1));
        let parallel_s = if threads > 1 {
            cfg.sync.threads = threads;
            let par = run_config(&cfg, format!("nodes_{n}"))?;
            if par.output.snapshot.to_csv_rows() != serial.output.snapshot.to_csv_rows() {
                return Err(SimError::InvalidSync(format!(
                    "{n}-node run differs between 1 and {threads} threads"
                )));
            }
            par.output.snapshot.wallclock_s
        } else {
            serial.output.snapshot.wallclock_s
        };
        let serial_s = serial.output.snapshot.wallclock_s;
        points.push(ScalePoint {
            nodes: n,
            threads,
            serial_s,
            parallel_s,
            parallel_efficiency: parallel_efficiency(PeInputs {
                num_processes: threads as u32,
                time_serial_baseline: serial_s,
                time_parallel: parallel_s,
            }),
        });
        runs.push(serial);
    }
    Ok((runs, Details::Scale { points }))
}

/// Runs a single config (no preset) through fast-forward and timing.
pub fn run_single(cfg: &ClusterConfig) -> Result<RunReport> {
    let run = run_config(cfg, "run")?;
    Ok(RunReport { run })
}

/// Report of a plain `run` or `restore`.
pub struct RunReport {
    pub run: VariantRun,
}

impl RunReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let snap = &self.run.output.snapshot;
        let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json") + "\n";
        std::fs::write(dir.join("stats.csv"), snap.to_csv())?;
        std::fs::write(dir.join("summary.json"), json(&snap.summary_json()))?;
        let manifest = serde_json::json!({
            "run_id": snap.run_id,
            "seed": self.run.config.seed,
            "config_sha256": hex(&Sha256::digest(self.run.config.to_toml().as_bytes())),
            "version": env!("CARGO_PKG_VERSION"),
            "csv_sha256": hex(&Sha256::digest(snap.to_csv().as_bytes())),
        });
        std::fs::write(dir.join("manifest.json"), json(&manifest))?;
        std::fs::write(dir.join("config.toml"), self.run.config.to_toml())?;
        std::fs::write(
            dir.join("wallclock.json"),
            json(&serde_json::json!({ "wallclock_s": snap.wallclock_s })),
        )?;
        Ok(())
    }
}
