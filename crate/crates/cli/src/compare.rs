//! Summary matrix of several reports against a baseline architecture.

use std::fmt::Write as _;

use anyhow::{bail, ensure, Result};
use icache_core::{ArchKind, ClusterDefaults};
use serde::{Deserialize, Serialize};

use crate::report::Report;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub kind: ArchKind,
    pub cores: usize,
    pub freq_8: f64,
    pub freq_16: f64,
    /// Throughput at each kind's own maximum frequency.
    pub max_performance: f64,
    pub power: f64,
    pub efficiency: f64,
}

pub fn compare(reports: &[Report], baseline: ArchKind, defaults: &ClusterDefaults) -> Result<Vec<CompareRow>> {
    ensure!(!reports.is_empty(), "nothing to compare");
    let first = &reports[0].meta;
    for r in &reports[1..] {
        if r.meta.workload != first.workload || r.meta.seed != first.seed {
            bail!(
                "reports disagree on the workload: `{}` seed {} vs `{}` seed {}",
                first.workload,
                first.seed,
                r.meta.workload,
                r.meta.seed
            );
        }
    }
    let freq = |kind: ArchKind, cores: usize| defaults.max_frequency_mhz(kind, cores) as f64;
    let mut rows = Vec::new();
    for report in reports {
        let cores = report.meta.cores;
        let norm = report.normalized(baseline)?;
        for n in norm {
            rows.push(CompareRow {
                kind: n.kind,
                cores,
                freq_8: freq(n.kind, 8) / freq(baseline, 8),
                freq_16: freq(n.kind, 16) / freq(baseline, 16),
                max_performance: n.max_throughput,
                power: n.power,
                efficiency: n.efficiency,
            });
        }
    }
    rows.sort_by_key(|r| (r.cores, r.kind));
    Ok(rows)
}

/// Fixed-width text rendering of the comparison matrix.
pub fn render(rows: &[CompareRow], baseline: ArchKind) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "normalized to {baseline}");
    let _ = writeln!(
        out,
        "{:<14}{:>6}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "kind", "cores", "f(8)", "f(16)", "MxP", "P", "1/E"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14}{:>6}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}",
            r.kind.name(),
            r.cores,
            r.freq_8,
            r.freq_16,
            r.max_performance,
            r.power,
            r.efficiency
        );
    }
    out
}
