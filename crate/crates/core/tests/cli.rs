//! The `dmsim` binary: subcommands, exit codes and report files.

use std::path::Path;
use std::process::{Command, Output};

const SMALL_SHARING: [&str; 4] = [
    "--override",
    "preset.vertices=1024",
    "--override",
    "preset.edges=8192",
];

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn dmsim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmsim"))
        .args(args)
        .env("DMSIM_OUT", out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn bad_invocations_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["run"],
        &["run", "--preset", "x", "--config", "y"],
        &["ckpt"],
        &["run", "--threads", "many"],
    ] {
        assert_eq!(code(&dmsim(args, dir.path())), 2, "{args:?}");
    }
}

#[test]
fn config_errors_map_to_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[[nodes]\n").unwrap();
    let broken = broken.to_str().unwrap();
    assert_eq!(code(&dmsim(&["run", "--config", broken], dir.path())), 3);

    let sharing = configs().join("sharing.toml");
    let sharing = sharing.to_str().unwrap();
    let too_many = dmsim(
        &[
            "run",
            "--config",
            sharing,
            "--override",
            "shared.0.readers=[1, 2, 7]",
        ],
        dir.path(),
    );
    assert_eq!(
        code(&too_many),
        4,
        "{}",
        String::from_utf8_lossy(&too_many.stderr)
    );
    assert_eq!(
        code(&dmsim(&["run", "--preset", "no-such-preset"], dir.path())),
        4
    );
}

#[test]
fn checkpoint_then_restore_with_conflicts_and_damage() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("graph.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let sharing = configs().join("sharing.toml");
    let sharing = sharing.to_str().unwrap();

    let saved = dmsim(&["ckpt", "--config", sharing, "--ckpt", ckpt_s], dir.path());
    assert_eq!(
        code(&saved),
        0,
        "{}",
        String::from_utf8_lossy(&saved.stderr)
    );
    let restored = dmsim(
        &[
            "restore",
            "--ckpt",
            ckpt_s,
            "--override",
            "link.latency_ns=250",
        ],
        dir.path(),
    );
    assert_eq!(
        code(&restored),
        0,
        "{}",
        String::from_utf8_lossy(&restored.stderr)
    );
    assert!(dir.path().join("stats.csv").exists());

    let conflict = dmsim(
        &[
            "restore",
            "--ckpt",
            ckpt_s,
            "--override",
            "nodes.1.hw.cores=2",
        ],
        dir.path(),
    );
    assert_eq!(code(&conflict), 5);

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&ckpt, bytes).unwrap();
    let damaged = dmsim(&["restore", "--ckpt", ckpt_s], dir.path());
    assert_eq!(code(&damaged), 5);
    assert!(String::from_utf8_lossy(&damaged.stderr).contains("corrupt"));
}

#[test]
fn default_output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("reports");
    let mut args = vec!["run", "--preset", "sharing-study"];
    args.extend(SMALL_SHARING);
    let run = dmsim(&args, &out);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for file in [
        "stats.csv",
        "summary.json",
        "manifest.json",
        "wallclock.json",
    ] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());

    let report = dmsim(&["report"], &out);
    assert_eq!(
        code(&report),
        0,
        "{}",
        String::from_utf8_lossy(&report.stderr)
    );
    assert!(String::from_utf8_lossy(&report.stdout).contains("identical"));

    let csv = out.join("stats.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push_str("tampered\n");
    std::fs::write(&csv, text).unwrap();
    assert_eq!(code(&dmsim(&["report"], &out)), 1);
}

#[test]
fn calibrate_prints_peak_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dmsim(
        &["calibrate", "--override", "device.channels=1"],
        dir.path(),
    );
    assert_eq!(code(&cal), 0, "{}", String::from_utf8_lossy(&cal.stderr));
    let stdout = String::from_utf8_lossy(&cal.stdout);
    assert!(stdout.contains("peak 19.200 GB/s"), "{stdout}");
    assert!(stdout.contains("ratio"));
}
