//! One writer builds a graph in a shared segment; readers run BFS and
//! PageRank over it read-only. Results are checked against a reference
//! implementation and against private all-local copies.
//!
//! `cargo run --release --example sharing_study`

use dmsim::presets::Details;
use dmsim::{run_preset, Preset, PresetOptions};

fn main() -> anyhow::Result<()> {
    let report = run_preset(Preset::SharingStudy, &PresetOptions::default())?;
    let Details::Sharing(check) = &report.details else {
        unreachable!("sharing preset")
    };
    println!("segment checksum before {}", check.checksum_before);
    println!("segment checksum after  {}", check.checksum_after);
    for r in &check.readers {
        let ok = r.digests_shared == check.reference && r.digests_local == check.reference;
        println!(
            "node {}: digests {}",
            r.node,
            if ok { "match" } else { "DIFFER" }
        );
        for ((kernel, split), (_, oracle)) in r.remote_split.iter().zip(&r.oracle_split) {
            println!("  {kernel:<9} remote split {split:.4} (functional count {oracle:.4})");
        }
        println!("  reader store rejected: {}", r.store_rejected);
    }
    Ok(())
}
