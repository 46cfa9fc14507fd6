//! Fast-forwards a remote-pinned STREAM node once, checkpoints it, and
//! restores the same image under several link latencies.
//!
//! `cargo run --release --example latency_sweep [latency_ns...]`

use dmsim::stats::{bandwidth, Meter};
use dmsim::{fast_forward, ClusterConfig, ClusterState, Phase};

const CONFIG: &str = r#"
[[nodes]]
policy = { kind = "mem_bind_remote" }
[nodes.workload]
kind = "stream"
array_bytes = "4MiB"
"#;

fn main() -> anyhow::Result<()> {
    let mut latencies: Vec<f64> = std::env::args()
        .skip(1)
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    if latencies.is_empty() {
        latencies = vec![0.0, 170.0, 250.0];
    }
    let cfg = ClusterConfig::parse_str(CONFIG, &[])?;
    let path = std::env::temp_dir().join("dmsim-latency-sweep.ckpt");
    fast_forward(&cfg)?.save(&path)?;
    let state = ClusterState::load(&path)?;
    println!("{:>10} {:>8} {:>10}", "latency", "kernel", "GB/s");
    for lat in latencies {
        let timing = cfg.with_overrides(&[format!("link.latency_ns={lat}")])?;
        let out = state.run(&timing, Phase::Timing)?;
        for roi in &out.snapshot.nodes[0].rois {
            println!(
                "{:>8} ns {:>8} {:>10.2}",
                lat,
                roi.label,
                bandwidth(roi, Meter::Link)?
            );
        }
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
