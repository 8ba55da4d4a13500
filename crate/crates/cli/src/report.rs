//! Report rows and their CSV/JSON files.
//!
//! CSV and JSON are both written from the same serde structs, so the numbers
//! in the two formats are always the same text.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use icache_core::power::normalize;
use icache_core::{ArchKind, EnergyReport};
use serde::{Deserialize, Serialize};

use crate::experiment::FrequencyMode;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const NORMALIZED_CSV: &str = "report_normalized.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub workload: String,
    pub footprint_bytes: u32,
    pub cores: usize,
    pub seed: u32,
    pub frequency: FrequencyMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: ArchKind,
    pub cores: usize,
    pub footprint_bytes: u32,
    /// Clock used for the energy figures.
    pub frequency_mhz: f64,
    pub cycles: u64,
    pub instructions: u64,
    pub ipc: f64,
    pub l1_miss_pct: f64,
    pub l15_miss_pct: f64,
    pub l2_refills: u64,
    pub prefetch_issued: u64,
    pub prefetch_filtered: u64,
    pub prefetch_useful: u64,
    pub prefetch_dropped: u64,
    pub bank_conflict_cycles: u64,
    pub core_stall_cycles: u64,
    pub throughput_fixed_mips: f64,
    pub throughput_max_mips: f64,
    pub cluster_power: f64,
    pub energy: f64,
    pub efficiency: f64,
}

impl ReportRow {
    pub fn throughput_mips(&self, mode: FrequencyMode) -> f64 {
        match mode {
            FrequencyMode::Fixed => self.throughput_fixed_mips,
            FrequencyMode::Max => self.throughput_max_mips,
        }
    }

    fn energy_report(&self, mode: FrequencyMode) -> EnergyReport {
        let time = self.cycles as f64 / (self.frequency_mhz * 1e6);
        EnergyReport {
            total_energy: self.energy,
            time,
            throughput: self.throughput_mips(mode),
            efficiency: self.efficiency,
            power: self.energy / time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub kind: ArchKind,
    pub baseline: ArchKind,
    pub cycles: f64,
    pub throughput: f64,
    pub max_throughput: f64,
    pub power: f64,
    pub energy: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

/// PR when present, otherwise the first architecture listed.
pub fn default_baseline<'a>(kinds: impl IntoIterator<Item = &'a ArchKind>) -> Option<ArchKind> {
    let kinds: Vec<ArchKind> = kinds.into_iter().copied().collect();
    if kinds.contains(&ArchKind::Pr) {
        Some(ArchKind::Pr)
    } else {
        kinds.first().copied()
    }
}

impl Report {
    pub fn new(meta: ReportMeta, mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by_key(|r| r.kind);
        Self { meta, rows }
    }

    pub fn row(&self, kind: ArchKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn normalized(&self, baseline: ArchKind) -> Result<Vec<NormalizedRow>> {
        let mode = self.meta.frequency;
        let reports: BTreeMap<ArchKind, EnergyReport> =
            self.rows.iter().map(|r| (r.kind, r.energy_report(mode))).collect();
        let norm = normalize(&reports, baseline)?;
        let base = self.row(baseline).expect("normalize checked the baseline");
        Ok(self
            .rows
            .iter()
            .map(|r| {
                let n = &norm[&r.kind];
                NormalizedRow {
                    kind: r.kind,
                    baseline,
                    cycles: r.cycles as f64 / base.cycles as f64,
                    throughput: n.throughput,
                    max_throughput: r.throughput_max_mips / base.throughput_max_mips,
                    power: n.power,
                    energy: n.total_energy,
                    efficiency: n.efficiency,
                }
            })
            .collect())
    }

    /// Writes the CSV, JSON and normalized CSV files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let csv_path = dir.join(REPORT_CSV);
        write_csv(&csv_path, &self.rows)?;
        let json_path = dir.join(REPORT_JSON);
        write_json(&json_path, self)?;
        let mut written = vec![csv_path, json_path];
        if let Some(baseline) = default_baseline(self.rows.iter().map(|r| &r.kind)) {
            let path = dir.join(NORMALIZED_CSV);
            write_csv(&path, &self.normalized(baseline)?)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("cannot open report {}", path.display()))?;
        serde_json::from_reader(file).with_context(|| format!("{} is not a report", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub step: u32,
    #[serde(flatten)]
    pub row: ReportRow,
}

/// Flat CSV record of a sweep row plus its normalized throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub kind: ArchKind,
    pub step: u32,
    pub footprint_bytes: u32,
    pub cycles: u64,
    pub instructions: u64,
    pub ipc: f64,
    pub l1_miss_pct: f64,
    pub l15_miss_pct: f64,
    pub l2_refills: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub throughput_mips: f64,
    pub norm_throughput: f64,
    pub energy: f64,
    pub norm_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub meta: ReportMeta,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn new(meta: ReportMeta, mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by_key(|r| (r.step, r.row.kind));
        Self { meta, rows }
    }

    pub fn get(&self, kind: ArchKind, step: u32) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.step == step && r.row.kind == kind).map(|r| &r.row)
    }

    /// Everything relative to the baseline architecture at the smallest step.
    pub fn records(&self) -> Vec<SweepRecord> {
        let mode = self.meta.frequency;
        let first_step = self.rows.iter().map(|r| r.step).min();
        let baseline = default_baseline(self.rows.iter().map(|r| &r.row.kind))
            .zip(first_step)
            .and_then(|(k, s)| self.get(k, s));
        self.rows
            .iter()
            .map(|r| {
                let t = r.row.throughput_mips(mode);
                let (norm_throughput, norm_efficiency) = match baseline {
                    Some(b) => (t / b.throughput_mips(mode), r.row.efficiency / b.efficiency),
                    None => (f64::NAN, f64::NAN),
                };
                SweepRecord {
                    kind: r.row.kind,
                    step: r.step,
                    footprint_bytes: r.row.footprint_bytes,
                    cycles: r.row.cycles,
                    instructions: r.row.instructions,
                    ipc: r.row.ipc,
                    l1_miss_pct: r.row.l1_miss_pct,
                    l15_miss_pct: r.row.l15_miss_pct,
                    l2_refills: r.row.l2_refills,
                    prefetch_issued: r.row.prefetch_issued,
                    prefetch_useful: r.row.prefetch_useful,
                    throughput_mips: t,
                    norm_throughput,
                    energy: r.row.energy,
                    norm_efficiency,
                }
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let csv_path = dir.join(SWEEP_CSV);
        write_csv(&csv_path, &self.records())?;
        let json_path = dir.join(SWEEP_JSON);
        write_json(&json_path, self)?;
        Ok(vec![csv_path, json_path])
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}
