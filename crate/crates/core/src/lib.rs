//! Parallel discrete-event simulator for clusters of compute nodes that
//! share a pooled, disaggregated memory device over a latency-bearing link.
//!
//! The usual flow is [`lifecycle::fast_forward`] to build a memory image,
//! optionally [`lifecycle::ClusterState::save`] it as a checkpoint, then
//! [`lifecycle::ClusterState::run`] it under a timing configuration. The
//! [`presets`] module packages the case studies as runnable experiments.

pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod fabric;
pub mod lifecycle;
pub mod memnet;
pub mod memory;
pub mod node;
pub mod presets;
pub mod stats;
pub mod workloads;

pub use config::ClusterConfig;
pub use engine::SimTime;
pub use error::{Result, SimError};
pub use lifecycle::{fast_forward, ClusterState, Phase};
pub use presets::{run_preset, Preset, PresetOptions, PresetReport};
pub use stats::StatSnapshot;
