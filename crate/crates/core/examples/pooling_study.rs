//! Footprint walker under preferred-local placement: as the footprint
//! outgrows local DRAM, pages spill to the pooled device and IPC drops
//! relative to a node with enough local DRAM.
//!
//! `cargo run --release --example pooling_study`

use dmsim::presets::Details;
use dmsim::{run_preset, Preset, PresetOptions};

fn main() -> anyhow::Result<()> {
    let report = run_preset(Preset::PoolingStudy, &PresetOptions::default())?;
    let Details::Pooling { points } = &report.details else {
        unreachable!("pooling preset")
    };
    println!(
        "{:>6} {:>12} {:>16} {:>13}",
        "ratio", "footprint", "remote fraction", "relative IPC"
    );
    for p in points {
        println!(
            "{:>6} {:>10} K {:>16.3} {:>13.3}",
            p.ratio,
            p.footprint >> 10,
            p.remote_fraction,
            p.relative_ipc
        );
    }
    Ok(())
}
