//! Saturates the remote memory device with linear reads and compares the
//! sustained bandwidth with the formula peak.
//!
//! `cargo run --release --example calibrate [channels]`

use dmsim::engine::SimTime;
use dmsim::memnet::{calibrate, DramTiming};

fn main() -> anyhow::Result<()> {
    let channels: u32 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(4);
    let timing = DramTiming::default();
    let report = calibrate(&timing, channels, SimTime::from_ns(200_000))?;
    println!("channels        {}", report.channels);
    println!("peak            {:.3} GB/s", report.peak_gbps);
    println!("sustained       {:.3} GB/s", report.sustained_gbps);
    println!("sustained/peak  {:.4}", report.ratio);
    println!(
        "measured        {} bytes over {} ns",
        report.measured_bytes, report.window_ns
    );
    Ok(())
}
