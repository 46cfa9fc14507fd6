//! Loads a cluster config file with overrides, runs it, and prints the
//! per-ROI statistics and the CSV report.
//!
//! `cargo run --release --example config_file [config.toml] [key=value...]`

use dmsim::presets::run_single;
use dmsim::stats::{bandwidth, remote_split, Meter};
use dmsim::ClusterConfig;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| "configs/reference.toml".into());
    let overrides: Vec<String> = args.collect();
    let cfg = ClusterConfig::load(path.as_ref(), &overrides)?;
    let report = run_single(&cfg)?;
    let snap = &report.run.output.snapshot;
    for (node, roi) in snap.all_rois() {
        println!(
            "node {node} {:<9} {:>10.1} ns  ipc {:.3}  remote split {:.3}  link {:.2} GB/s",
            roi.label,
            roi.duration().as_ns(),
            roi.ipc_proxy(),
            remote_split(roi).unwrap_or(0.0),
            bandwidth(roi, Meter::Link)?
        );
    }
    println!(
        "{} CSV rows, run id {}",
        snap.to_csv().lines().count() - 1,
        snap.run_id
    );
    Ok(())
}
