//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dmsim::presets::{run_single, Manifest, RunReport, VariantRun};
use dmsim::{
    fast_forward, run_preset, ClusterConfig, ClusterState, Phase, Preset, PresetOptions, SimError,
};

const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_CHECKPOINT: u8 = 5;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(
    name = "dmsim",
    version,
    about = "Disaggregated-memory cluster simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Cluster config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads for the timing simulation.
    #[arg(long)]
    threads: Option<usize>,
    /// Cluster seed, mixed into every workload and policy seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, env = "DMSIM_OUT", default_value = "dmsim-out")]
    out: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// `key=value` override, repeatable (e.g. link.latency_ns=250).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Measure sustained device bandwidth against the formula peak.
    Calibrate(Common),
    /// Fast-forward and run a config or preset under timing.
    Run(Common),
    /// Fast-forward a config and write a checkpoint.
    Ckpt(Common),
    /// Restore a checkpoint and run it under (optionally overridden) timing.
    Restore(Common),
    /// Regenerate a report from its manifest and compare it with the original.
    Report(Common),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SimError>() {
        Some(SimError::Parse { .. }) => EXIT_PARSE,
        Some(SimError::Validation { .. } | SimError::InvalidPolicy(_)) => EXIT_VALIDATION,
        Some(
            SimError::VersionMismatch { .. }
            | SimError::CheckpointCorrupt(_)
            | SimError::ConfigConflict(_),
        ) => EXIT_CHECKPOINT,
        _ if err.downcast_ref::<clap::Error>().is_some() => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(c: &Common) -> anyhow::Result<ClusterConfig> {
    let Some(path) = &c.config else {
        bail!(usage("--config is required"))
    };
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(t) = c.threads {
        overrides.push(format!("sync.threads={t}"));
    }
    let cfg = ClusterConfig::load(path, &overrides)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(cfg)
}

fn usage(msg: &str) -> clap::Error {
    clap::Error::raw(
        clap::error::ErrorKind::MissingRequiredArgument,
        format!("{msg}\n"),
    )
}

fn preset_options(c: &Common) -> PresetOptions {
    PresetOptions {
        threads: c.threads.unwrap_or(1),
        seed: c.seed,
        overrides: c.overrides.clone(),
    }
}

fn print_run(run: &VariantRun) {
    let snap = &run.output.snapshot;
    for n in &snap.nodes {
        for r in &n.rois {
            let bw = dmsim::stats::bandwidth(r, dmsim::stats::Meter::Workload).unwrap_or(0.0);
            let split = dmsim::stats::remote_split(r).unwrap_or(0.0);
            println!(
                "{} node {} {:<10} {:>12.1} ns  ipc {:.3}  remote {:.3}  workload {:.2} GB/s",
                run.label,
                n.node,
                r.label,
                r.duration().as_ns(),
                r.ipc_proxy(),
                split,
                bw
            );
        }
    }
}

fn run_preset_cmd(name: &str, c: &Common) -> anyhow::Result<()> {
    let preset: Preset = name.parse()?;
    let report = run_preset(preset, &preset_options(c))?;
    report.write(&c.out)?;
    if let dmsim::presets::Details::Calibration(cal) = &report.details {
        println!(
            "peak {:.3} GB/s  sustained {:.3} GB/s  ratio {:.4}",
            cal.peak_gbps, cal.sustained_gbps, cal.ratio
        );
    }
    for r in &report.runs {
        print_run(r);
    }
    println!("reports written to {}", c.out.display());
    Ok(())
}

fn cmd_calibrate(c: &Common) -> anyhow::Result<()> {
    let mut c = c.clone();
    if let Some(path) = &c.config {
        let cfg = ClusterConfig::load(path, &[])?;
        c.overrides
            .insert(0, format!("device.channels={}", cfg.device.channels));
        let dram = toml::Value::try_from(&cfg.device.dram)?;
        if let toml::Value::Table(t) = dram {
            for (k, v) in t {
                c.overrides.insert(0, format!("device.dram.{k}={v}"));
            }
        }
    }
    run_preset_cmd("calibration", &c)
}

fn cmd_run(c: &Common) -> anyhow::Result<()> {
    match (&c.preset, &c.config) {
        (Some(p), None) => run_preset_cmd(p, c),
        (None, Some(_)) => {
            let cfg = load_config(c)?;
            let report = run_single(&cfg)?;
            report.write(&c.out)?;
            print_run(&report.run);
            Ok(())
        }
        _ => bail!(usage("run needs exactly one of --config or --preset")),
    }
}

fn cmd_ckpt(c: &Common) -> anyhow::Result<()> {
    let cfg = load_config(c)?;
    let Some(path) = &c.ckpt else {
        bail!(usage("--ckpt is required"))
    };
    let state = fast_forward(&cfg)?;
    state.save(path)?;
    println!(
        "checkpoint of {} nodes written to {}",
        state.nodes.len(),
        path.display()
    );
    Ok(())
}

fn cmd_restore(c: &Common) -> anyhow::Result<()> {
    let Some(path) = &c.ckpt else {
        bail!(usage("--ckpt is required"))
    };
    let state = ClusterState::load(path)?;
    let mut overrides = c.overrides.clone();
    if let Some(t) = c.threads {
        overrides.push(format!("sync.threads={t}"));
    }
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    let timing = match &c.config {
        Some(p) => ClusterConfig::load(p, &overrides)?,
        None => state.config.with_overrides(&overrides)?,
    };
    let output = state.run(&timing, Phase::Timing)?;
    let report = RunReport {
        run: VariantRun {
            label: "restore".into(),
            config: timing,
            output,
        },
    };
    report.write(&c.out)?;
    print_run(&report.run);
    Ok(())
}

fn cmd_report(c: &Common) -> anyhow::Result<()> {
    let dir: &Path = &c.out;
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .with_context(|| format!("reading manifest in {}", dir.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let original = std::fs::read_to_string(dir.join("stats.csv"))?;
    let mut opts = manifest.options();
    if let Some(t) = c.threads {
        opts.threads = t;
    }
    let report = run_preset(manifest.preset, &opts)?;
    let regenerated = report.csv();
    if regenerated != original {
        bail!(
            "regenerated report differs from {}",
            dir.join("stats.csv").display()
        );
    }
    println!(
        "{}: {} variants regenerated, stats.csv identical",
        manifest.preset,
        report.runs.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Calibrate(c) => cmd_calibrate(c),
        Command::Run(c) => cmd_run(c),
        Command::Ckpt(c) => cmd_ckpt(c),
        Command::Restore(c) => cmd_restore(c),
        Command::Report(c) => cmd_report(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
