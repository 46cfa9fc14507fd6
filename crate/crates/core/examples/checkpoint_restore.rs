//! Checkpoints a fast-forwarded cluster, restores it, and shows that a
//! restored run reproduces a direct run byte for byte. Also shows the
//! errors for a timing config that changes the topology.
//!
//! `cargo run --release --example checkpoint_restore [config.toml]`

use dmsim::{fast_forward, ClusterConfig, ClusterState, Phase};

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "configs/sharing.toml".into());
    let cfg = ClusterConfig::load(path.as_ref(), &[])?;
    let state = fast_forward(&cfg)?;
    let ckpt = std::env::temp_dir().join("dmsim-example.ckpt");
    state.save(&ckpt)?;
    println!("checkpoint: {} bytes", std::fs::metadata(&ckpt)?.len());

    let direct = state.run(&cfg, Phase::Timing)?;
    let restored = ClusterState::load(&ckpt)?.run(&cfg, Phase::Timing)?;
    let same = direct.snapshot.to_csv() == restored.snapshot.to_csv();
    println!("restored run identical to direct run: {same}");

    let bigger = cfg.with_overrides(&["nodes.0.hw.cores=4".into()])?;
    match ClusterState::load(&ckpt)?.run(&bigger, Phase::Timing) {
        Err(e) => println!("changed topology rejected: {e}"),
        Ok(_) => println!("changed topology unexpectedly accepted"),
    }
    std::fs::remove_file(&ckpt)?;
    Ok(())
}
