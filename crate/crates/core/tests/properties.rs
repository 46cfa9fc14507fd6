//! End-to-end properties of timing runs on small randomized clusters.

use proptest::prelude::*;

use dmsim::cluster::RunOutput;
use dmsim::memory::{DataPort, MemPort, SharedAccess};
use dmsim::stats::{gbps, Meter};
use dmsim::workloads::Layout;
use dmsim::{fast_forward, ClusterConfig, Phase};

const POLICIES: [&str; 4] = [
    r#"{ kind = "mem_bind_local" }"#,
    r#"{ kind = "mem_bind_remote" }"#,
    r#"{ kind = "interleave", interleave_set = ["Local", "Remote"] }"#,
    r#"{ kind = "preferred_local" }"#,
];

fn stream_group(count: u32, policy: usize, kib: u64, local_kib: u64) -> String {
    format!(
        "[[nodes]]\ncount = {count}\npolicy = {}\n[nodes.hw]\ncores = 4\nlocal_capacity = \"{local_kib}KiB\"\n\
         [nodes.workload]\nkind = \"stream\"\narray_bytes = \"{kib}KiB\"\n",
        POLICIES[policy]
    )
}

fn walker_group(policy: usize, kib: u64, local_kib: u64, pattern: &str) -> String {
    format!(
        "[[nodes]]\npolicy = {}\n[nodes.hw]\ncores = 2\nlocal_capacity = \"{local_kib}KiB\"\n\
         [nodes.workload]\nkind = \"walker\"\nfootprint = \"{kib}KiB\"\npattern = {pattern}\n",
        POLICIES[policy]
    )
}

fn run(cfg: &ClusterConfig) -> RunOutput {
    fast_forward(cfg).unwrap().run(cfg, Phase::Timing).unwrap()
}

fn threads(cfg: &ClusterConfig, n: usize) -> ClusterConfig {
    cfg.with_overrides(&[format!("sync.threads={n}")]).unwrap()
}

fn cluster() -> impl Strategy<Value = ClusterConfig> {
    (
        1u32..=2,
        0usize..4,
        prop::sample::select(vec![64u64, 128, 256]),
        0usize..4,
        prop::sample::select(vec![
            r#"{ kind = "random", seed = 3 }"#,
            r#"{ kind = "pointer_chase", seed = 5 }"#,
        ]),
        prop::sample::select(vec![0.0f64, 50.0, 170.0, 400.0]),
        0..=i64::MAX as u64,
    )
        .prop_map(|(count, sp, kib, wp, pattern, lat, seed)| {
            let text = format!(
                "seed = {seed}\n[link]\nlatency_ns = {lat}\n{}{}",
                stream_group(count, sp, kib, 1024),
                walker_group(wp, 192, if wp == 3 { 128 } else { 1024 }, pattern)
            );
            ClusterConfig::parse_str(&text, &[]).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn runs_conserve_bytes_and_ignore_thread_count(cfg in cluster()) {
        let serial = run(&cfg);
        let snap = &serial.snapshot;
        prop_assert!(snap.complete);
        prop_assert!(snap.conservation_holds());
        let again = run(&cfg);
        prop_assert_eq!(snap.to_csv(), again.snapshot.to_csv());
        let parallel = run(&threads(&cfg, cfg.host_count() + 1));
        prop_assert_eq!(snap.to_csv(), parallel.snapshot.to_csv());
        prop_assert_eq!(&serial.digests, &parallel.digests);

        let device_peak = dmsim::memnet::peak_bandwidth(&cfg.device.dram, cfg.device.channels);
        for (host, h) in cfg.hosts().iter().enumerate() {
            prop_assert!(serial.peak_outstanding[host] <= h.hw.outstanding_misses);
            let local_peak = dmsim::memnet::peak_bandwidth(&cfg.device.dram, h.hw.local_channels);
            for roi in &snap.nodes[host].rois {
                prop_assert!(dmsim::stats::bandwidth(roi, Meter::Link).unwrap() <= cfg.link.bandwidth_gbps);
                prop_assert!(dmsim::stats::bandwidth(roi, Meter::RemoteController).unwrap() <= device_peak);
                prop_assert!(dmsim::stats::bandwidth(roi, Meter::LocalController).unwrap() <= local_peak);
            }
        }
    }

    #[test]
    fn higher_link_latency_never_raises_bandwidth(
        policy in 1usize..3,
        kib in prop::sample::select(vec![128u64, 256]),
        lo in 0.0f64..300.0,
        extra in 1.0f64..300.0,
    ) {
        let cfg = ClusterConfig::parse_str(&stream_group(1, policy, kib, 4096), &[]).unwrap();
        let state = fast_forward(&cfg).unwrap();
        let rate = |lat: f64| {
            let timing = cfg.with_overrides(&[format!("link.latency_ns={lat}")]).unwrap();
            let out = state.run(&timing, Phase::Timing).unwrap();
            let rois = &out.snapshot.nodes[0].rois;
            let bytes: u64 = rois.iter().map(|r| r.workload_bytes).sum();
            let time = rois.iter().map(|r| r.duration()).fold(dmsim::SimTime::ZERO, |a, b| a + b);
            gbps(bytes, time)
        };
        prop_assert!(rate(lo + extra) <= rate(lo));
    }
}

#[test]
fn timing_and_functional_phases_leave_identical_data() {
    let text = format!(
        "{}{}",
        stream_group(1, 2, 256, 512),
        walker_group(3, 192, 128, r#"{ kind = "pointer_chase", seed = 5 }"#)
    );
    let cfg = ClusterConfig::parse_str(&text, &[]).unwrap();
    let state = fast_forward(&cfg).unwrap();
    let timed = state.run(&cfg, Phase::Timing).unwrap();
    let functional = state.run(&cfg, Phase::Functional).unwrap();
    for (t, f) in timed.memories.iter().zip(&functional.memories) {
        for (store_t, store_f) in [(&t.local, &f.local), (&t.pooled, &f.pooled)] {
            prop_assert_eq_frames(store_t, store_f);
        }
    }
    assert_eq!(timed.digests, functional.digests);
}

fn prop_assert_eq_frames(a: &dmsim::memory::PageStore, b: &dmsim::memory::PageStore) {
    assert_eq!(a.frames(), b.frames());
    for f in a.frames() {
        assert_eq!(a.page(f), b.page(f), "frame {f:#x} differs");
    }
}

#[test]
fn stream_arrays_hold_kernel_results_after_timing() {
    // alpha = 3 from a=1, b=2, c=0: copy c=1, scale b=3, add c=4, triad a=15.
    let cfg = ClusterConfig::parse_str(&stream_group(2, 2, 128, 512), &[]).unwrap();
    let state = fast_forward(&cfg).unwrap();
    let out = state.run(&cfg, Phase::Timing).unwrap();
    for (node, mut mem) in out.memories.into_iter().enumerate() {
        let Layout::Stream(arr) = state.layouts[node] else {
            panic!("stream layout")
        };
        let mut port = MemPort::new(&mut mem, SharedAccess::Frozen(&out.shared));
        for i in 0..(128 << 10) / 8 {
            assert_eq!(port.read_f64(arr.a + i * 8).unwrap(), 15.0);
            assert_eq!(port.read_f64(arr.b + i * 8).unwrap(), 3.0);
            assert_eq!(port.read_f64(arr.c + i * 8).unwrap(), 4.0);
        }
    }
}

#[test]
fn roi_counters_hold_only_kernel_operations() {
    let kib = 256;
    let n = kib * 1024 / 8;
    for policy in 0..4 {
        let cfg = ClusterConfig::parse_str(&stream_group(1, policy, kib, 4096), &[]).unwrap();
        let out = run(&cfg);
        for roi in &out.snapshot.nodes[0].rois {
            let arrays = if matches!(roi.label.as_str(), "copy" | "scale") {
                2
            } else {
                3
            };
            assert_eq!(roi.local_ops + roi.remote_ops, arrays * n, "{}", roi.label);
            assert_eq!(roi.workload_bytes, arrays * 8 * n, "{}", roi.label);
            assert_eq!(roi.compute_ops, 0);
        }
    }
}

#[test]
fn remote_read_latency_covers_the_link_round_trip() {
    let cfg = ClusterConfig::parse_str(
        &stream_group(1, 1, 128, 512),
        &["link.latency_ns=300".into()],
    )
    .unwrap();
    let out = run(&cfg);
    for roi in &out.snapshot.nodes[0].rois {
        assert!(roi.latency.count() > 0);
        // Samples below 512 ns land in buckets 0..=8; 2 x 300 ns is a floor.
        assert!(
            roi.latency.buckets[..9].iter().all(|&c| c == 0),
            "{}: {:?}",
            roi.label,
            roi.latency.buckets
        );
    }
}

#[test]
fn arch_profile_labels_do_not_change_remote_counters() {
    let base = stream_group(1, 1, 128, 512);
    let arm = ClusterConfig::parse_str(&base, &["nodes.0.hw.arch_profile=\"arm\"".into()]).unwrap();
    let riscv =
        ClusterConfig::parse_str(&base, &["nodes.0.hw.arch_profile=\"riscv\"".into()]).unwrap();
    let (a, b) = (run(&arm), run(&riscv));
    for (ra, rb) in a.snapshot.nodes[0]
        .rois
        .iter()
        .zip(&b.snapshot.nodes[0].rois)
    {
        assert_eq!(ra.remote_ctrl, rb.remote_ctrl);
        assert_eq!(ra.link.bytes, rb.link.bytes);
        assert_eq!(ra.end, rb.end);
    }
    assert_eq!(a.snapshot.nodes[0].arch_profile, "arm");
}
