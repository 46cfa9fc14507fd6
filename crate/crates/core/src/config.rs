//! Cluster configuration: TOML parsing, `key=value` overrides and
//! validation.

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::fabric::{PagePolicy, PolicyKind, PAGE_SIZE};
use crate::memnet::{DramTiming, LinkConfig};
use crate::node::NodeConfig;
use crate::workloads::{GraphPlacement, WorkloadSpec};

/// Byte sizes given either as integers or as strings such as `"4MiB"`.
pub mod bytes {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn parse(s: &str) -> Result<u64, String> {
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let n: u64 = num
            .parse()
            .map_err(|_| format!("invalid byte size `{s}`"))?;
        let mult: u64 = match unit.trim() {
            "" | "B" => 1,
            "KiB" | "K" => 1 << 10,
            "MiB" | "M" => 1 << 20,
            "GiB" | "G" => 1 << 30,
            "TiB" | "T" => 1 << 40,
            other => return Err(format!("unknown size unit `{other}`")),
        };
        n.checked_mul(mult)
            .ok_or_else(|| format!("byte size `{s}` overflows"))
    }

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*v)
    }

    struct BytesVisitor;

    impl Visitor<'_> for BytesVisitor {
        type Value = u64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a byte count or a size string like \"4MiB\"")
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
            u64::try_from(v).map_err(|_| E::custom("byte size must be non-negative"))
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
            parse(v).map_err(E::custom)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        d.deserialize_any(BytesVisitor)
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => s.serialize_u64(*v),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] u64);
            Option::<Wrap>::deserialize(d).map(|o| o.map(|w| w.0))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    /// Defaults to the link's minimum one-way delay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lookahead_ns: Option<f64>,
    pub threads: usize,
}

impl Default for SyncSection {
    fn default() -> Self {
        SyncSection {
            lookahead_ns: None,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    #[serde(with = "bytes")]
    pub base: u64,
    #[serde(with = "bytes")]
    pub capacity: u64,
    pub channels: u32,
    pub xbar_cycle_ps: u64,
    pub dram: DramTiming,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            base: 4 << 30,
            capacity: 16 << 30,
            channels: 4,
            xbar_cycle_ps: 500,
            dram: DramTiming::default(),
        }
    }
}

fn default_count() -> u32 {
    1
}

fn default_policy() -> PagePolicy {
    PagePolicy::local()
}

fn default_workload() -> WorkloadSpec {
    WorkloadSpec::Idle
}

/// One or more identical nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeGroup {
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(default = "default_policy")]
    pub policy: PagePolicy,
    /// Size of this node's pooled device slice; sized to the workload's
    /// policy-placed footprint when absent and the policy uses remote.
    #[serde(
        default,
        with = "bytes::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub remote_bytes: Option<u64>,
    #[serde(default)]
    pub hw: NodeConfig,
    #[serde(default = "default_workload")]
    pub workload: WorkloadSpec,
}

impl NodeGroup {
    pub fn new(count: u32, policy: PagePolicy, workload: WorkloadSpec) -> Self {
        NodeGroup {
            count,
            policy,
            remote_bytes: None,
            hw: NodeConfig::default(),
            workload,
        }
    }
}

/// A shared device segment: one writer, any number of readers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedSegment {
    pub name: String,
    pub writer: usize,
    pub readers: Vec<usize>,
    /// Defaults to the size the writer's graph image needs.
    #[serde(
        default,
        with = "bytes::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub size: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default)]
    pub seed: u64,
    /// Stop simulating at this time even if workloads are unfinished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_ns: Option<f64>,
    #[serde(default)]
    pub sync: SyncSection,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub device: DeviceConfig,
    pub nodes: Vec<NodeGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shared: Vec<SharedSegment>,
}

/// Fully expanded description of one host.
#[derive(Clone, Debug, PartialEq)]
pub struct HostSpec {
    pub hw: NodeConfig,
    pub policy: PagePolicy,
    pub workload: WorkloadSpec,
    pub remote_bytes: u64,
}

fn parse_error(e: &toml::de::Error, text: &str) -> SimError {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    SimError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `raw`,
/// which is read as a TOML value when it parses as one and as a string
/// otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SimError::validation(assignment, "override must look like key=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let segments: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = seg.parse().map_err(|_| {
                    SimError::validation(path, format!("`{seg}` is not an array index"))
                })?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    SimError::validation(path, format!("index {idx} out of range (len {len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(SimError::validation(
                    path,
                    format!("`{seg}` does not name a table"),
                ))
            }
        };
    }
    Err(SimError::validation(path, "empty override path"))
}

impl ClusterConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn parse_str(text: &str, overrides: &[String]) -> Result<ClusterConfig> {
        let cfg: ClusterConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| parse_error(&e, text))?
        } else {
            let mut value: toml::Value = toml::from_str(text).map_err(|e| parse_error(&e, text))?;
            for o in overrides {
                apply_override(&mut value, o)?;
            }
            let merged = toml::to_string(&value)
                .map_err(|e| SimError::validation("override", e.to_string()))?;
            toml::from_str(&merged).map_err(|e| parse_error(&e, &merged))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<ClusterConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// A copy with `key=value` overrides applied, validated.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<ClusterConfig> {
        Self::parse_str(&self.to_toml(), overrides)
    }

    pub fn hosts(&self) -> Vec<HostSpec> {
        let mut out = Vec::new();
        for g in &self.nodes {
            for _ in 0..g.count {
                let remote_bytes = g.remote_bytes.unwrap_or(if g.policy.uses_remote() {
                    g.workload.policy_footprint()
                } else {
                    0
                });
                out.push(HostSpec {
                    hw: g.hw.clone(),
                    policy: PagePolicy {
                        seed: g.policy.seed ^ self.seed,
                        ..g.policy.clone()
                    },
                    workload: g.workload.reseeded(self.seed),
                    remote_bytes,
                });
            }
        }
        out
    }

    pub fn host_count(&self) -> usize {
        self.nodes.iter().map(|g| g.count as usize).sum()
    }

    pub fn lookahead(&self) -> SimTime {
        match self.sync.lookahead_ns {
            Some(ns) => SimTime::from_ns_f64(ns),
            None => self.link.min_delay(),
        }
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon_ns
            .map(SimTime::from_ns_f64)
            .unwrap_or(SimTime::MAX)
    }

    /// Bytes of the shared segment `seg`.
    pub fn segment_size(&self, seg: &SharedSegment) -> u64 {
        if let Some(s) = seg.size {
            return s;
        }
        let hosts = self.hosts();
        match hosts.get(seg.writer).map(|h| &h.workload) {
            Some(WorkloadSpec::GraphWriter { graph, .. }) => graph.segment_bytes(),
            _ => PAGE_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.host_count() == 0 {
            return Err(SimError::validation(
                "nodes",
                "at least one node is required",
            ));
        }
        if self.sync.threads == 0 {
            return Err(SimError::validation("sync.threads", "must be >= 1"));
        }
        self.link.validate()?;
        if let Some(la) = self.sync.lookahead_ns {
            if la.is_nan() || la <= 0.0 {
                return Err(SimError::validation("sync.lookahead_ns", "must be > 0"));
            }
            if SimTime::from_ns_f64(la) > self.link.min_delay() {
                return Err(SimError::validation(
                    "sync.lookahead_ns",
                    "must not exceed the link's minimum delay",
                ));
            }
        }
        if let Some(h) = self.horizon_ns {
            if h.is_nan() || h <= 0.0 {
                return Err(SimError::validation("horizon_ns", "must be > 0"));
            }
        }
        let d = &self.device;
        if d.channels == 0 {
            return Err(SimError::validation("device.channels", "must be >= 1"));
        }
        if d.xbar_cycle_ps == 0 {
            return Err(SimError::validation("device.xbar_cycle_ps", "must be > 0"));
        }
        if !d.base.is_multiple_of(PAGE_SIZE)
            || d.capacity == 0
            || !d.capacity.is_multiple_of(PAGE_SIZE)
        {
            return Err(SimError::validation(
                "device",
                "base and capacity must be positive page multiples",
            ));
        }
        if d.base.checked_add(d.capacity).is_none() {
            return Err(SimError::validation(
                "device.capacity",
                "device range overflows the address space",
            ));
        }
        d.dram.validate()?;

        let hosts = self.hosts();
        let mut claimed: u64 = 0;
        for (i, h) in hosts.iter().enumerate() {
            let key = format!("nodes[{i}]");
            h.hw.validate(&format!("{key}.hw"))?;
            h.policy.validate().map_err(|e| {
                SimError::validation(format!("{key}.policy"), policy_constraint(&e))
            })?;
            h.workload.validate()?;
            if h.hw.local_capacity > d.base {
                return Err(SimError::validation(
                    format!("{key}.hw.local_capacity"),
                    "local memory must fit below the device base address",
                ));
            }
            if h.remote_bytes % PAGE_SIZE != 0 {
                return Err(SimError::validation(
                    format!("{key}.remote_bytes"),
                    "must be a whole number of pages",
                ));
            }
            if h.policy.uses_remote() && h.remote_bytes == 0 && h.workload.policy_footprint() > 0 {
                return Err(SimError::validation(
                    format!("{key}.policy"),
                    "policy places pages remotely but the node has no remote binding",
                ));
            }
            if h.policy.kind == PolicyKind::MemBindLocal
                || h.policy.kind == PolicyKind::PreferredLocal
            {
                let local_need = if h.policy.kind == PolicyKind::MemBindLocal {
                    h.workload.policy_footprint()
                } else {
                    0
                };
                if local_need + h.workload.local_footprint() > h.hw.local_capacity {
                    return Err(SimError::validation(
                        format!("{key}.hw.local_capacity"),
                        "workload does not fit in local memory",
                    ));
                }
            }
            claimed += h.remote_bytes;
            match (&h.workload, h.workload.segment()) {
                (WorkloadSpec::GraphWriter { .. }, Some(name)) => {
                    let seg = self.shared.iter().find(|s| s.name == name);
                    if seg.map(|s| s.writer) != Some(i) {
                        return Err(SimError::validation(
                            format!("{key}.workload.segment"),
                            format!("host {i} is not the writer of segment `{name}`"),
                        ));
                    }
                }
                (
                    WorkloadSpec::GraphReader {
                        placement: GraphPlacement::Shared,
                        ..
                    },
                    Some(name),
                ) => {
                    let seg = self.shared.iter().find(|s| s.name == name);
                    if !seg.is_some_and(|s| s.readers.contains(&i)) {
                        return Err(SimError::validation(
                            format!("{key}.workload.segment"),
                            format!("host {i} is not a reader of segment `{name}`"),
                        ));
                    }
                }
                _ => {}
            }
        }
        for (j, s) in self.shared.iter().enumerate() {
            let key = format!("shared[{j}]");
            if s.writer >= hosts.len() || s.readers.iter().any(|&r| r >= hosts.len()) {
                return Err(SimError::validation(
                    key,
                    "writer and readers must name existing hosts",
                ));
            }
            if s.readers.contains(&s.writer) {
                return Err(SimError::validation(
                    key,
                    "the writer cannot also be a reader",
                ));
            }
            let size = self.segment_size(s);
            if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
                return Err(SimError::validation(
                    format!("{key}.size"),
                    "must be a positive page multiple",
                ));
            }
            claimed += size;
        }
        if claimed > d.capacity {
            return Err(SimError::validation(
                "device.capacity",
                format!(
                    "bindings need {claimed} bytes but the device holds {}",
                    d.capacity
                ),
            ));
        }
        Ok(())
    }

    /// Checks that `other` describes the same topology and memory image,
    /// so a checkpoint of `self` can be restored under it.
    pub fn topology_conflict(&self, other: &ClusterConfig) -> Option<String> {
        if self.host_count() != other.host_count() {
            return Some(format!(
                "node count {} != {}",
                other.host_count(),
                self.host_count()
            ));
        }
        if self.device.base != other.device.base || self.device.capacity != other.device.capacity {
            return Some("device address range differs".into());
        }
        if self.shared != other.shared {
            return Some("shared segments differ".into());
        }
        for (i, (a, b)) in self.hosts().iter().zip(other.hosts()).enumerate() {
            if a.workload != b.workload || a.policy != b.policy || a.remote_bytes != b.remote_bytes
            {
                return Some(format!(
                    "node {i}: workload, policy or remote binding differs"
                ));
            }
            if a.hw.local_capacity != b.hw.local_capacity || a.hw.cores != b.hw.cores {
                return Some(format!("node {i}: core count or local capacity differs"));
            }
        }
        None
    }
}

fn policy_constraint(e: &SimError) -> String {
    match e {
        SimError::InvalidPolicy(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[nodes]]
[nodes.workload]
kind = "stream"
array_bytes = "4MiB"
"#;

    #[test]
    fn byte_strings() {
        assert_eq!(bytes::parse("4MiB").unwrap(), 4 << 20);
        assert_eq!(bytes::parse("160GiB").unwrap(), 160 << 30);
        assert_eq!(bytes::parse("4096").unwrap(), 4096);
        assert!(bytes::parse("4 parsecs").is_err());
    }

    #[test]
    fn minimal_config_gets_node_defaults() {
        let cfg = ClusterConfig::parse_str(MINIMAL, &[]).unwrap();
        let h = &cfg.hosts()[0];
        assert_eq!(h.hw.cores, 8);
        assert_eq!(h.hw.freq_ghz, 4.0);
        assert_eq!(h.hw.l1d.size, 32 << 10);
        assert_eq!(h.hw.l2.size, 512 << 10);
        assert_eq!(h.hw.l3.size, 8 << 20);
        assert_eq!(h.hw.local_channels, 1);
        assert_eq!(cfg.device.channels, 4);
    }

    #[test]
    fn round_trip() {
        let cfg = ClusterConfig::parse_str(MINIMAL, &[]).unwrap();
        let again = ClusterConfig::parse_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn parse_error_has_position() {
        let err = ClusterConfig::parse_str("seed = 1\nnodes = [\n", &[]).unwrap_err();
        assert!(
            matches!(err, SimError::Parse { line, .. } if line >= 2),
            "{err:?}"
        );
        let err = ClusterConfig::parse_str("seed = \"x\"\nnodes = []\n", &[]).unwrap_err();
        assert!(matches!(err, SimError::Parse { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn interleave_with_single_region_is_rejected() {
        let text = format!(
            "{MINIMAL}[nodes.policy]\nkind = \"interleave\"\ninterleave_set = [\"Local\"]\n"
        );
        let err = ClusterConfig::parse_str(&text, &[]).unwrap_err();
        match err {
            SimError::Validation { constraint, .. } => {
                assert_eq!(constraint, "interleave requires >= 2 regions")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_remote_binding_is_rejected() {
        let text = format!(
            "{MINIMAL}remote_bytes = \"32GiB\"\n[nodes.policy]\nkind = \"mem_bind_remote\"\n"
        );
        let text = text
            .replace("[[nodes]]\n", "[[nodes]]\nremote_bytes = \"32GiB\"\n")
            .replace("remote_bytes = \"32GiB\"\n[nodes.policy]", "[nodes.policy]");
        let err = ClusterConfig::parse_str(&text, &[]).unwrap_err();
        assert!(
            matches!(err, SimError::Validation { ref key, .. } if key == "device.capacity"),
            "{err:?}"
        );
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = ClusterConfig::parse_str(
            MINIMAL,
            &["link.latency_ns=250".into(), "nodes.0.count=3".into()],
        )
        .unwrap();
        assert_eq!(cfg.link.latency_ns, 250.0);
        assert_eq!(cfg.host_count(), 3);
        let err = ClusterConfig::parse_str(MINIMAL, &["nodes.5.count=1".into()]).unwrap_err();
        assert!(matches!(err, SimError::Validation { .. }));
    }
}
