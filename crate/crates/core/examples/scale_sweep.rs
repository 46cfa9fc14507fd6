//! Interleaved STREAM on growing clusters, run serially and partitioned
//! across threads, reporting parallel efficiency of the simulator itself.
//!
//! `cargo run --release --example scale_sweep [threads]`

use dmsim::{run_preset, Preset, PresetOptions};

fn main() -> anyhow::Result<()> {
    let threads = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(8);
    let report = run_preset(
        Preset::ScaleSweep,
        &PresetOptions {
            threads,
            ..Default::default()
        },
    )?;
    let wall = report.wallclock();
    println!(
        "{:>6} {:>8} {:>10} {:>10} {:>6}",
        "nodes", "threads", "serial s", "parallel s", "PE"
    );
    for p in wall["scale"].as_array().into_iter().flatten() {
        println!(
            "{:>6} {:>8} {:>10.3} {:>10.3} {:>6.3}",
            p["nodes"],
            p["threads"],
            p["serial_s"].as_f64().unwrap_or(0.0),
            p["parallel_s"].as_f64().unwrap_or(0.0),
            p["parallel_efficiency"].as_f64().unwrap_or(0.0)
        );
    }
    Ok(())
}
