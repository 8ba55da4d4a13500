//! Experiment description and the runs behind `run` and `sweep`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use icache_core::power::{activity, total_energy};
use icache_core::{
    generate_synthetic, parse_trace_file, ArchKind, ArchitectureConfig, ClusterDefaults, Event, PowerLut, SimStats,
    Simulator, SyntheticSpec, TraceSet,
};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::report::{Report, ReportMeta, ReportRow, SweepReport, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyMode {
    /// Every architecture clocked at the common fixed frequency.
    #[default]
    Fixed,
    /// Every architecture at its own maximum frequency.
    Max,
}

impl fmt::Display for FrequencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrequencyMode::Fixed => "fixed",
            FrequencyMode::Max => "max",
        })
    }
}

impl FromStr for FrequencyMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(FrequencyMode::Fixed),
            "max" => Ok(FrequencyMode::Max),
            other => bail!("unknown frequency mode `{other}` (expected fixed or max)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    Synthetic(SyntheticSpec),
    /// Path to a text trace; relative paths resolve against the config file.
    Trace(PathBuf),
}

impl Default for WorkloadSource {
    fn default() -> Self {
        WorkloadSource::Synthetic(SyntheticSpec::default())
    }
}

/// What the user asked for, as read from the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architectures: Vec<ArchKind>,
    pub cores: usize,
    pub workload: WorkloadSource,
    pub frequency: FrequencyMode,
    pub seed: u32,
    pub out_dir: Option<PathBuf>,
    /// Alternative power table; the bundled one is used otherwise.
    pub power_lut: Option<PathBuf>,
    /// Alternative cluster constants (geometries, latencies, frequencies).
    pub defaults: Option<PathBuf>,
    pub measured_iteration: Option<u32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            architectures: ArchKind::ALL.to_vec(),
            cores: 8,
            workload: WorkloadSource::default(),
            frequency: FrequencyMode::Fixed,
            seed: 0,
            out_dir: None,
            power_lut: None,
            defaults: None,
            measured_iteration: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let WorkloadSource::Trace(p) = &mut cfg.workload {
            rebase(p);
        }
        for p in [&mut cfg.power_lut, &mut cfg.defaults, &mut cfg.out_dir].into_iter().flatten() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.architectures.is_empty(), "the architecture list is empty");
        ensure!(self.cores > 0, "a cluster needs at least one core");
        if let WorkloadSource::Synthetic(spec) = &self.workload {
            spec.validate()?;
        }
        if self.measured_iteration == Some(0) {
            bail!("measured_iteration is 1-based");
        }
        Ok(())
    }
}

/// A config with its files read and its workload built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub defaults: ClusterDefaults,
    pub lut: PowerLut,
    pub workload: TraceSet,
    pub workload_label: String,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let defaults = match &config.defaults {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read defaults {}", p.display()))?;
                ClusterDefaults::from_toml(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ClusterDefaults::builtin(),
        };
        let lut = match &config.power_lut {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read power table {}", p.display()))?;
                PowerLut::parse(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => PowerLut::builtin(),
        };
        let (workload, workload_label) = load_workload(&config.workload, config.cores)?;
        ensure!(
            workload.cores() == config.cores,
            "workload has {} cores but the config asks for {}",
            workload.cores(),
            config.cores
        );
        Ok(Self { config, defaults, lut, workload, workload_label })
    }

    pub fn arch_config(&self, kind: ArchKind) -> ArchitectureConfig {
        let mut cfg = ArchitectureConfig::from_defaults(&self.defaults, kind, self.config.cores).with_seed(self.config.seed);
        if let Some(m) = self.config.measured_iteration {
            cfg.measured_iteration = m;
        }
        cfg
    }

    /// One simulation, optionally keeping its event log.
    pub fn simulate(&self, kind: ArchKind, keep_events: bool) -> Result<(SimStats, Vec<Event>)> {
        run_kind(self.arch_config(kind), &self.workload, keep_events)
    }

    pub fn row(&self, kind: ArchKind, stats: &SimStats, footprint: u32) -> Result<ReportRow> {
        build_row(self, kind, stats, footprint)
    }

    pub fn meta(&self) -> ReportMeta {
        ReportMeta {
            workload: self.workload_label.clone(),
            footprint_bytes: self.workload.footprint_bytes,
            cores: self.config.cores,
            seed: self.config.seed,
            frequency: self.config.frequency,
        }
    }
}

fn load_workload(source: &WorkloadSource, cores: usize) -> Result<(TraceSet, String)> {
    match source {
        WorkloadSource::Synthetic(spec) => {
            let spec = SyntheticSpec { total_cores: cores as u32, ..*spec };
            let w = generate_synthetic(&spec, 0)?;
            Ok((w, format!("synthetic step={} buffer={} iterations={}", spec.step, spec.buffer_size, spec.iterations)))
        }
        WorkloadSource::Trace(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read trace {}", path.display()))?;
            let w = parse_trace_file(&text).with_context(|| format!("in {}", path.display()))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((w, format!("trace {name}")))
        }
    }
}

fn run_kind(cfg: ArchitectureConfig, workload: &TraceSet, keep_events: bool) -> Result<(SimStats, Vec<Event>)> {
    let kind = cfg.kind;
    let mut sim = Simulator::build(cfg, workload).with_context(|| format!("cannot build {kind}"))?;
    if keep_events {
        sim.enable_event_log();
    }
    let stats = sim.run().with_context(|| format!("{kind} simulation failed"))?;
    debug!("{kind}: {stats:?}");
    Ok((stats, sim.take_events()))
}

/// Rounds a ratio to a percentage with one decimal.
pub fn percent(ratio: f64) -> f64 {
    (ratio * 1000.0).round() / 10.0
}

fn build_row(exp: &Experiment, kind: ArchKind, stats: &SimStats, footprint: u32) -> Result<ReportRow> {
    let cores = exp.config.cores;
    let fixed_mhz = exp.defaults.fixed_frequency_mhz as f64;
    let max_mhz = exp.defaults.max_frequency_mhz(kind, cores) as f64;
    let freq_mhz = match exp.config.frequency {
        FrequencyMode::Fixed => fixed_mhz,
        FrequencyMode::Max => max_mhz,
    };
    let act = activity(stats, cores);
    let params = exp.lut.params(kind, act, freq_mhz, fixed_mhz)?;
    let energy = total_energy(stats, &params)?;
    let mips = |mhz: f64| stats.instructions_retired as f64 * mhz / stats.cycles as f64;
    Ok(ReportRow {
        kind,
        cores,
        footprint_bytes: footprint,
        frequency_mhz: freq_mhz,
        cycles: stats.cycles,
        instructions: stats.instructions_retired,
        ipc: stats.ipc(),
        l1_miss_pct: percent(stats.l1_miss_rate()),
        l15_miss_pct: percent(stats.l15_miss_rate()),
        l2_refills: stats.l2_refills,
        prefetch_issued: stats.prefetch_issued,
        prefetch_filtered: stats.prefetch_filtered,
        prefetch_useful: stats.prefetch_useful,
        prefetch_dropped: stats.prefetch_dropped,
        bank_conflict_cycles: stats.bank_conflict_cycles,
        core_stall_cycles: stats.core_stall_cycles,
        throughput_fixed_mips: mips(fixed_mhz),
        throughput_max_mips: mips(max_mhz),
        cluster_power: params.cluster_power,
        energy: energy.total_energy,
        efficiency: energy.efficiency,
    })
}

/// Runs every configured architecture on the configured workload.
/// Event logs are returned only when asked for.
pub fn run_experiment(exp: &Experiment, keep_events: bool) -> Result<(Report, Vec<(ArchKind, Vec<Event>)>)> {
    let results: Vec<(ArchKind, SimStats, Vec<Event>)> = exp
        .config
        .architectures
        .par_iter()
        .map(|&kind| {
            info!("running {kind} on {}", exp.workload_label);
            exp.simulate(kind, keep_events).map(|(s, e)| (kind, s, e))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(results.len());
    let mut events = Vec::new();
    for (kind, stats, ev) in results {
        rows.push(exp.row(kind, &stats, exp.workload.footprint_bytes)?);
        if keep_events {
            events.push((kind, ev));
        }
    }
    Ok((Report::new(exp.meta(), rows), events))
}

/// Runs architectures x synthetic steps concurrently; rows come back sorted
/// by step, then architecture, regardless of completion order.
pub fn sweep(exp: &Experiment, steps: &[u32]) -> Result<SweepReport> {
    ensure!(!steps.is_empty(), "no steps to sweep");
    let base = match &exp.config.workload {
        WorkloadSource::Synthetic(spec) => *spec,
        WorkloadSource::Trace(_) => bail!("a sweep needs a synthetic workload"),
    };
    let mut jobs = Vec::new();
    for &step in steps {
        let spec = SyntheticSpec { step, total_cores: exp.config.cores as u32, ..base };
        spec.validate().with_context(|| format!("step {step}"))?;
        for &kind in &exp.config.architectures {
            jobs.push((step, kind, spec));
        }
    }
    let mut results: Vec<(u32, ArchKind, SimStats, u32)> = jobs
        .par_iter()
        .map(|&(step, kind, spec)| {
            info!("sweeping {kind} at step {step}");
            let w = generate_synthetic(&spec, 0)?;
            let (stats, _) = run_kind(exp.arch_config(kind), &w, false)?;
            Ok((step, kind, stats, w.footprint_bytes))
        })
        .collect::<Result<_>>()?;
    results.sort_by_key(|(step, kind, _, _)| (*step, *kind));
    let rows = results
        .iter()
        .map(|(step, kind, stats, fp)| Ok(SweepRow { step: *step, row: exp.row(*kind, stats, *fp)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport::new(exp.meta(), rows))
}
