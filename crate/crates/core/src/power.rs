//! Energy, throughput and normalization over simulation counters.
//!
//! Energy is cluster plus L2 leakage power integrated over the run time, plus
//! a fixed energy per L2 refill. The arithmetic is generic over the float
//! type; the lookup table itself stores `f64`.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ArchKind;
use crate::engine::SimStats;

const BUILTIN_LUT: &str = include_str!("../data/power_lut.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("frequency must be positive")]
    ZeroFrequency,
    #[error("no cycles were measured")]
    ZeroCycles,
    #[error("baseline {0} is missing from the reports")]
    MissingBaseline(ArchKind),
    #[error("baseline {kind} has a zero {metric}")]
    ZeroBaseline { kind: ArchKind, metric: &'static str },
    #[error("power table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("power table has no entry for {0}")]
    NoEntry(ArchKind),
    #[error("parameter {0} must be finite and non-negative")]
    Negative(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams<T> {
    pub cluster_power: T,
    pub l2_leakage_power: T,
    pub l2_per_read_energy: T,
    /// Hertz.
    pub frequency: T,
}

impl<T: Float> PowerParams<T> {
    pub fn validate(&self) -> Result<(), PowerError> {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        if !ok(self.cluster_power) {
            return Err(PowerError::Negative("cluster_power"));
        }
        if !ok(self.l2_leakage_power) {
            return Err(PowerError::Negative("l2_leakage_power"));
        }
        if !ok(self.l2_per_read_energy) {
            return Err(PowerError::Negative("l2_per_read_energy"));
        }
        if !(self.frequency > T::zero()) || !self.frequency.is_finite() {
            return Err(PowerError::ZeroFrequency);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport<T> {
    pub total_energy: T,
    /// Seconds.
    pub time: T,
    /// Instructions per second.
    pub throughput: T,
    /// Inverse of the total energy.
    pub efficiency: T,
    /// Average power over the run.
    pub power: T,
}

fn cast<T: Float>(v: u64) -> T {
    T::from(v).expect("counter fits the float type")
}

/// Energy of a run of `cycles` cycles with `refills` L2 line reads.
pub fn energy<T: Float>(cycles: u64, refills: u64, p: &PowerParams<T>) -> Result<T, PowerError> {
    p.validate()?;
    let time = cast::<T>(cycles) / p.frequency;
    Ok((p.cluster_power + p.l2_leakage_power) * time + cast::<T>(refills) * p.l2_per_read_energy)
}

pub fn total_energy<T: Float>(stats: &SimStats, p: &PowerParams<T>) -> Result<EnergyReport<T>, PowerError> {
    if stats.cycles == 0 {
        return Err(PowerError::ZeroCycles);
    }
    let total = energy(stats.cycles, stats.l2_refills, p)?;
    let time = cast::<T>(stats.cycles) / p.frequency;
    Ok(EnergyReport {
        total_energy: total,
        time,
        throughput: throughput(stats, p.frequency)?,
        efficiency: T::one() / total,
        power: total / time,
    })
}

/// Instructions per second at `frequency` hertz.
pub fn throughput<T: Float>(stats: &SimStats, frequency: T) -> Result<T, PowerError> {
    if stats.cycles == 0 {
        return Err(PowerError::ZeroCycles);
    }
    if !(frequency > T::zero()) {
        return Err(PowerError::ZeroFrequency);
    }
    Ok(cast::<T>(stats.instructions_retired) * frequency / cast::<T>(stats.cycles))
}

/// Share of core-cycles that retired an instruction.
pub fn activity(stats: &SimStats, cores: usize) -> f64 {
    if stats.cycles == 0 || cores == 0 {
        return 0.0;
    }
    (stats.instructions_retired as f64 / (stats.cycles as f64 * cores as f64)).clamp(0.0, 1.0)
}

/// Divides every metric by the baseline's; the baseline row becomes all ones.
pub fn normalize<T: Float>(
    reports: &BTreeMap<ArchKind, EnergyReport<T>>,
    baseline: ArchKind,
) -> Result<BTreeMap<ArchKind, EnergyReport<T>>, PowerError> {
    let b = reports.get(&baseline).ok_or(PowerError::MissingBaseline(baseline))?;
    let metrics = [
        ("total_energy", b.total_energy),
        ("time", b.time),
        ("throughput", b.throughput),
        ("efficiency", b.efficiency),
        ("power", b.power),
    ];
    if let Some((metric, _)) = metrics.iter().find(|(_, v)| *v == T::zero()) {
        return Err(PowerError::ZeroBaseline { kind: baseline, metric });
    }
    Ok(reports
        .iter()
        .map(|(k, r)| {
            (
                *k,
                EnergyReport {
                    total_energy: r.total_energy / b.total_energy,
                    time: r.time / b.time,
                    throughput: r.throughput / b.throughput,
                    efficiency: r.efficiency / b.efficiency,
                    power: r.power / b.power,
                },
            )
        })
        .collect())
}

/// Cluster power per (architecture, activity bucket) plus the L2 terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLut {
    entries: BTreeMap<(ArchKind, u8), f64>,
    pub l2_leakage: f64,
    pub l2_read_energy: f64,
    pub units: String,
}

impl PowerLut {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LUT).expect("bundled power table parses")
    }

    /// Reads `kind bucket value` records, `l2_leakage v`, `l2_read_energy v`
    /// and a `units ...` header; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PowerError> {
        let mut entries = BTreeMap::new();
        let (mut leak, mut read, mut units) = (None, None, None);
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let err = |msg: &str| PowerError::Table { line, msg: msg.to_string() };
            let num = |s: &str| -> Result<f64, PowerError> {
                let v: f64 = s.parse().map_err(|_| err("not a number"))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(err("values must be finite and non-negative"));
                }
                Ok(v)
            };
            let f: Vec<&str> = t.split_whitespace().collect();
            match f.as_slice() {
                ["units", rest @ ..] => units = Some(rest.join(" ")),
                ["l2_leakage", v] => leak = Some(num(v)?),
                ["l2_read_energy", v] => read = Some(num(v)?),
                [kind, bucket, v] => {
                    let kind: ArchKind = kind.parse().map_err(|_| err("unknown architecture"))?;
                    let b = num(bucket)?;
                    if b > 1.0 {
                        return Err(err("activity bucket must lie in [0, 1]"));
                    }
                    entries.insert((kind, bucket_index(b)), num(v)?);
                }
                _ => return Err(err("expected `<kind> <bucket> <power>`")),
            }
        }
        let missing = |what: &str| PowerError::Table { line: 0, msg: format!("missing `{what}`") };
        Ok(Self {
            entries,
            l2_leakage: leak.ok_or_else(|| missing("l2_leakage"))?,
            l2_read_energy: read.ok_or_else(|| missing("l2_read_energy"))?,
            units: units.ok_or_else(|| missing("units"))?,
        })
    }

    /// Cluster power at the bucket nearest to `activity`.
    pub fn cluster_power(&self, kind: ArchKind, activity: f64) -> Result<f64, PowerError> {
        let want = bucket_index(activity.clamp(0.0, 1.0));
        self.entries
            .range((kind, 0)..=(kind, 10))
            .min_by_key(|((_, b), _)| (*b as i16 - want as i16).abs())
            .map(|(_, v)| *v)
            .ok_or(PowerError::NoEntry(kind))
    }

    /// Parameters for one run. Cluster power in the table holds at
    /// `reference_mhz`; dynamic power scales linearly with frequency.
    pub fn params(
        &self,
        kind: ArchKind,
        activity: f64,
        frequency_mhz: f64,
        reference_mhz: f64,
    ) -> Result<PowerParams<f64>, PowerError> {
        if !(frequency_mhz > 0.0) || !(reference_mhz > 0.0) {
            return Err(PowerError::ZeroFrequency);
        }
        Ok(PowerParams {
            cluster_power: self.cluster_power(kind, activity)? * frequency_mhz / reference_mhz,
            l2_leakage_power: self.l2_leakage,
            l2_per_read_energy: self.l2_read_energy,
            frequency: frequency_mhz * 1e6,
        })
    }
}

fn bucket_index(activity: f64) -> u8 {
    (activity * 10.0).round() as u8
}
