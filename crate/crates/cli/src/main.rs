use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use icache_cli::report::{write_csv, Report};
use icache_cli::{compare, render, run_experiment, sweep, Experiment, ExperimentConfig, FrequencyMode, OUT_ENV};
use icache_core::{format_events, ArchKind, ClusterDefaults};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "icache-sim", version, about = "Instruction-cache cluster simulator")]
struct Cli {
    /// Also write per-architecture event logs (run only).
    #[arg(long, global = true)]
    emit_events: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate every selected architecture once and write a report.
    Run(RunArgs),
    /// Simulate architectures x synthetic steps.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512,1024")]
        steps: Vec<u32>,
    },
    /// Summarize report.json files against a baseline.
    Compare {
        #[arg(long, default_value = "PR")]
        baseline: ArchKind,
        /// Cluster constants used for the frequency columns.
        #[arg(long)]
        defaults: Option<PathBuf>,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to these architectures (repeatable).
    #[arg(long = "arch")]
    arch: Vec<ArchKind>,
    #[arg(long)]
    seed: Option<u32>,
    #[arg(long)]
    freq: Option<FrequencyMode>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn experiment(&self) -> Result<(Experiment, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.arch.is_empty() {
            cfg.architectures = self.arch.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.freq {
            cfg.frequency = f;
        }
        let out = self.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok((Experiment::prepare(cfg)?, out))
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (exp, out) = args.experiment()?;
            let (report, events) = run_experiment(&exp, cli.emit_events)?;
            let mut written = report.write(&out)?;
            for (kind, ev) in events {
                let path = out.join(format!("events_{}.log", kind.name()));
                fs::write(&path, format_events(&ev)).with_context(|| format!("cannot write {}", path.display()))?;
                written.push(path);
            }
            for r in &report.rows {
                info!("{}: {} cycles, ipc {:.3}", r.kind, r.cycles, r.ipc);
            }
            print_written(&written);
        }
        Command::Sweep { common, steps } => {
            let (exp, out) = common.experiment()?;
            let report = sweep(&exp, &steps)?;
            print_written(&report.write(&out)?);
        }
        Command::Compare { baseline, defaults, out, reports } => {
            let defaults = match defaults {
                Some(p) => ClusterDefaults::from_toml(&fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?)?,
                None => ClusterDefaults::builtin(),
            };
            let loaded = reports.iter().map(|p| Report::read_json(p)).collect::<Result<Vec<_>>>()?;
            let rows = compare(&loaded, baseline, &defaults)?;
            print!("{}", render(&rows, baseline));
            let out = out.unwrap_or_else(|| PathBuf::from("out"));
            fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            let path = Path::new(&out).join("compare.csv");
            write_csv(&path, &rows)?;
            print_written(&[path]);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(err) = run(Cli::parse()) {
        eprintln!("icache-sim: {err:#}");
        std::process::exit(1);
    }
}
