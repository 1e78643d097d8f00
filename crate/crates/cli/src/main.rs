use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pmdedup::client::UploadMode;
use pmdedup::par::ExecPolicy;
use pmdedup::sim::config::RunConfig;
use pmdedup::sim::experiments::{decay_experiment, sweep, SweepAxis};
use pmdedup::sim::runner::run_experiment;
use pmdedup::sim::workload::{manifest_csv, FileKind, SnapshotSpec, Workload};

#[derive(Parser)]
#[command(name = "pmdedup", version, about = "Edge-assisted secure deduplication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the workload with a named profile (LAB, FSL, MS, UBUNTU, GCC).
    #[arg(long)]
    profile: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run every data-parallel stage on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(name) = &self.profile {
            cfg.workload = SnapshotSpec::profile(name, cfg.workload.base_size)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn exec(&self) -> ExecPolicy {
        if self.sequential {
            ExecPolicy::Sequential
        } else {
            ExecPolicy::default()
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Replay the workload under each mode and write per-upload metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Restricts the run to these modes; repeatable.
        #[arg(long)]
        mode: Vec<UploadMode>,
    },
    /// Write the workload's files and a per-chunk ground-truth manifest.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a run over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep_axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        sweep_values: Vec<f64>,
        #[arg(long)]
        mode: Vec<UploadMode>,
    },
    /// Share-index hit ratio per snapshot with rebuilds at fixed points.
    Decay {
        #[command(flatten)]
        common: Common,
        /// Snapshots after which the share-index is rebuilt.
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        refresh_after: Vec<u32>,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn report_violations(violations: &[String]) -> ExitCode {
    if violations.is_empty() {
        return ExitCode::SUCCESS;
    }
    for v in violations {
        eprintln!("violation: {v}");
    }
    eprintln!("{} invariant violation(s)", violations.len());
    ExitCode::from(1)
}

fn run(common: &Common, modes: &[UploadMode]) -> Result<ExitCode> {
    let mut cfg = common.load()?;
    if !modes.is_empty() {
        cfg.modes = modes.to_vec();
    }
    let exp = run_experiment(&cfg, common.exec())?;
    let out = common.out_dir()?;
    write(&out.join("results.csv"), &exp.csv_bytes()?)?;
    write(&out.join("summary.csv"), &exp.summary_csv_bytes()?)?;
    println!(
        "profile {} dedup ratio {:.2} (mutation rate {:.4}), cloud ratio {}",
        exp.profile, exp.realized_ratio, exp.mutation_rate, exp.cloud_ratio
    );
    println!(
        "{:<16} {:>8} {:>14} {:>14} {:>12} {:>12}",
        "mode", "uploads", "overall ms/GiB", "bytes sent", "check ms", "edge hits"
    );
    for r in &exp.runs {
        let s = &r.summary;
        println!(
            "{:<16} {:>8} {:>14.1} {:>14} {:>12.1} {:>12.3}",
            r.mode.label(),
            s.uploads,
            s.per_gib_ms(s.overall),
            s.bytes_sent,
            s.check.as_millis_f64(),
            s.edge_hit_ratio()
        );
    }
    Ok(report_violations(&exp.violations()))
}

fn gen(common: &Common) -> Result<ExitCode> {
    let cfg = common.load()?;
    let exec = common.exec();
    let workload = Workload::generate(&cfg.workload, cfg.seed, exec)?;
    let trace = workload.trace(exec);
    let out = common.out_dir()?;
    for (s, files) in workload.snapshots().iter().enumerate() {
        let dir = out.join(format!("snapshot-{s:03}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, f) in files.iter().enumerate() {
            let name = match f.kind {
                FileKind::Cold { file } => format!("{i:05}-cold-{file}.bin"),
                FileKind::Hot { file, version } => format!("{i:05}-hot-{file}-v{version}.bin"),
            };
            write(&dir.join(name), &workload.file_bytes(f))?;
        }
    }
    write(&out.join("manifest.csv"), &manifest_csv(&trace)?)?;
    let mut spec = workload.spec().clone();
    spec.mutation_rate = Some(workload.mutation_rate());
    let resolved = RunConfig {
        workload: spec,
        ..cfg
    };
    write(&out.join("workload.toml"), resolved.to_toml_string()?.as_bytes())?;
    let stats = trace.stats();
    println!(
        "{} snapshots, {} bytes, {} unique, dedup ratio {:.3}",
        workload.snapshots().len(),
        stats.total_bytes,
        stats.unique_bytes,
        stats.dedup_ratio()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(common: &Common, axis: SweepAxis, values: &[f64], modes: &[UploadMode]) -> Result<ExitCode> {
    let mut cfg = common.load()?;
    if !modes.is_empty() {
        cfg.modes = modes.to_vec();
    }
    let result = sweep(&cfg, axis, values, common.exec())?;
    let path = common.out_dir()?.join(format!("sweep_{}.csv", axis.label()));
    write(&path, &result.csv)?;
    println!("wrote {}", path.display());
    Ok(report_violations(&result.violations))
}

fn decay(common: &Common, refresh_after: &[u32]) -> Result<ExitCode> {
    let cfg = common.load()?;
    let curve = decay_experiment(&cfg, refresh_after, common.exec())?;
    let path = common.out_dir()?.join("decay.csv");
    write(&path, &curve.csv_bytes()?)?;
    for p in &curve.points {
        println!("{:>4} {:.4} {:.4}", p.snapshot, p.cms, p.cms_locality);
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { common, mode } => run(&common, &mode),
        Command::Gen { common } => gen(&common),
        Command::Sweep {
            common,
            sweep_axis,
            sweep_values,
            mode,
        } => {
            if sweep_values.iter().any(|v| !v.is_finite()) {
                bail!("sweep values must be finite");
            }
            run_sweep(&common, sweep_axis, &sweep_values, &mode)
        }
        Command::Decay { common, refresh_after } => decay(&common, &refresh_after),
        Command::Config { common } => {
            print!("{}", common.load()?.to_toml_string()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
