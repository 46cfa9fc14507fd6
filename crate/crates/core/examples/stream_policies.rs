//! STREAM on every node of a cluster under local, remote and interleaved
//! page placement, with the aggregate remote bandwidth set against the
//! device's calibrated sustained bandwidth.
//!
//! `cargo run --release --example stream_policies [nodes]`

use dmsim::presets::Details;
use dmsim::{run_preset, Preset, PresetOptions};

fn main() -> anyhow::Result<()> {
    let nodes = std::env::args().nth(1).unwrap_or_else(|| "8".into());
    let opts = PresetOptions {
        overrides: vec![format!("preset.nodes={nodes}")],
        ..Default::default()
    };
    let report = run_preset(Preset::StreamPolicies, &opts)?;
    let Details::Stream {
        calibration,
        points,
    } = &report.details
    else {
        unreachable!("stream preset")
    };
    println!(
        "device sustained {:.2} GB/s of {:.1} peak",
        calibration.sustained_gbps, calibration.peak_gbps
    );
    println!(
        "{:<16} {:<6} {:>14} {:>18}",
        "policy", "kernel", "per-node GB/s", "aggregate remote"
    );
    for p in points {
        println!(
            "{:<16} {:<6} {:>14.2} {:>18.2}",
            format!("{:?}", p.policy),
            p.kernel,
            p.mean_node_gbps,
            p.aggregate_remote_gbps
        );
    }
    Ok(())
}
