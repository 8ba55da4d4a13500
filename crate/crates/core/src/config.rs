//! Architecture kinds and the configuration that wires a cluster together.
//!
//! All geometry, latency and frequency constants come from a TOML defaults
//! file bundled with the crate; callers can supply their own.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, CacheGeometry};
use crate::frontend::FrontendMode;

const BUILTIN_DEFAULTS: &str = include_str!("../data/defaults.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse defaults: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown architecture `{0}`")]
    UnknownKind(String),
    #[error("no defaults for architecture {0}")]
    MissingKind(ArchKind),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] CacheError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArchKind {
    Pr,
    Sp,
    Mp,
    Hier,
    HierPre,
    HierOpt,
    HierPreOpt,
}

impl ArchKind {
    pub const ALL: [ArchKind; 7] = [
        ArchKind::Pr,
        ArchKind::Sp,
        ArchKind::Mp,
        ArchKind::Hier,
        ArchKind::HierPre,
        ArchKind::HierOpt,
        ArchKind::HierPreOpt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::Pr => "PR",
            ArchKind::Sp => "SP",
            ArchKind::Mp => "MP",
            ArchKind::Hier => "HIER",
            ArchKind::HierPre => "HIER_PRE",
            ArchKind::HierOpt => "HIER_OPT",
            ArchKind::HierPreOpt => "HIER_PRE_OPT",
        }
    }

    pub fn is_hierarchical(&self) -> bool {
        matches!(self, ArchKind::Hier | ArchKind::HierPre | ArchKind::HierOpt | ArchKind::HierPreOpt)
    }

    pub fn has_prefetch(&self) -> bool {
        matches!(self, ArchKind::HierPre | ArchKind::HierPreOpt)
    }

    pub fn frontend_mode(&self) -> FrontendMode {
        match self {
            ArchKind::HierOpt | ArchKind::HierPreOpt => FrontendMode::Optimized,
            _ => FrontendMode::Legacy,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| ConfigError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSpec {
    pub total_bytes: u32,
    pub banks: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDefaults {
    pub l1: BankSpec,
    #[serde(default)]
    pub l15: Option<BankSpec>,
    pub refill_cycles: u64,
    pub max_mhz_8: u32,
    pub max_mhz_16: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDefaults {
    pub fixed_frequency_mhz: u32,
    pub ways: u32,
    pub line_bytes: u32,
    pub prand_seed: u32,
    pub measured_iteration: u32,
    pub response_buffer: bool,
    pub request_buffer: bool,
    pub l15_bank_latency: u64,
    pub arch: BTreeMap<ArchKind, ArchDefaults>,
}

impl ClusterDefaults {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_DEFAULTS).expect("bundled defaults parse")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let d: ClusterDefaults = toml::from_str(text)?;
        for kind in ArchKind::ALL {
            if !d.arch.contains_key(&kind) {
                return Err(ConfigError::MissingKind(kind));
            }
        }
        Ok(d)
    }

    pub fn arch(&self, kind: ArchKind) -> &ArchDefaults {
        &self.arch[&kind]
    }

    /// Table of maximum frequencies, picking the 8-core column for up to
    /// eight cores and the 16-core column above that.
    pub fn max_frequency_mhz(&self, kind: ArchKind, cores: usize) -> u32 {
        let a = self.arch(kind);
        if cores <= 8 {
            a.max_mhz_8
        } else {
            a.max_mhz_16
        }
    }
}

/// Everything needed to build one simulated cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub kind: ArchKind,
    pub cores: usize,
    /// First cache level seen by a core: private bank (PR, HIER*) or the
    /// shared banks (SP, MP).
    pub l1_geometry: CacheGeometry,
    pub l15_geometry: Option<CacheGeometry>,
    pub l2_refill_cycles: u64,
    pub max_frequency_mhz: u32,
    pub fixed_frequency_mhz: u32,
    pub prand_seed: u32,
    pub prefetch: bool,
    pub response_buffer: bool,
    pub request_buffer: bool,
    pub l15_bank_latency: u64,
    /// Core `k` starts `k * start_skew` cycles late.
    pub start_skew: u64,
    /// 1-based execution whose counters are reported.
    pub measured_iteration: u32,
}

impl ArchitectureConfig {
    pub fn new(kind: ArchKind, cores: usize) -> Self {
        Self::from_defaults(&ClusterDefaults::builtin(), kind, cores)
    }

    pub fn from_defaults(d: &ClusterDefaults, kind: ArchKind, cores: usize) -> Self {
        let a = d.arch(kind);
        let geom = |b: &BankSpec| CacheGeometry {
            total_bytes: b.total_bytes,
            ways: d.ways,
            line_bytes: d.line_bytes,
            banks: b.banks,
        };
        Self {
            kind,
            cores,
            l1_geometry: geom(&a.l1),
            l15_geometry: a.l15.as_ref().map(geom),
            l2_refill_cycles: a.refill_cycles,
            max_frequency_mhz: d.max_frequency_mhz(kind, cores),
            fixed_frequency_mhz: d.fixed_frequency_mhz,
            prand_seed: d.prand_seed,
            prefetch: kind.has_prefetch(),
            response_buffer: d.response_buffer,
            request_buffer: d.request_buffer,
            l15_bank_latency: d.l15_bank_latency,
            start_skew: 0,
            measured_iteration: d.measured_iteration,
        }
    }

    pub fn with_seed(mut self, seed: u32) -> Self {
        self.prand_seed = seed;
        self
    }

    pub fn frontend_mode(&self) -> FrontendMode {
        self.kind.frontend_mode()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cores == 0 {
            return Err(ConfigError::Invalid("a cluster needs at least one core".into()));
        }
        self.l1_geometry.validate()?;
        match (self.kind.is_hierarchical(), &self.l15_geometry) {
            (true, None) => return Err(ConfigError::Invalid(format!("{} needs an L1.5 geometry", self.kind))),
            (false, Some(_)) => return Err(ConfigError::Invalid(format!("{} has no L1.5 level", self.kind))),
            (true, Some(g)) => g.validate()?,
            _ => {}
        }
        if self.kind == ArchKind::Pr && self.l1_geometry.banks != 1 {
            return Err(ConfigError::Invalid("a private cache has exactly one bank".into()));
        }
        if self.prefetch && !self.kind.is_hierarchical() {
            return Err(ConfigError::Invalid(format!("{} has no prefetch unit", self.kind)));
        }
        let min_refill = if self.kind.is_hierarchical() { 4 } else { 2 };
        if self.l2_refill_cycles < min_refill {
            return Err(ConfigError::Invalid(format!("refill of {} cycles is too short", self.l2_refill_cycles)));
        }
        if self.fixed_frequency_mhz == 0 || self.max_frequency_mhz == 0 {
            return Err(ConfigError::Invalid("frequencies must be non-zero".into()));
        }
        if self.measured_iteration == 0 {
            return Err(ConfigError::Invalid("measured iteration is 1-based".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_defaults_match_published_constants() {
        let d = ClusterDefaults::builtin();
        let refill: Vec<u64> = ArchKind::ALL.iter().map(|k| d.arch(*k).refill_cycles).collect();
        assert_eq!(refill, vec![15, 17, 19, 19, 19, 19, 19]);
        let f8: Vec<u32> = ArchKind::ALL.iter().map(|k| d.max_frequency_mhz(*k, 8)).collect();
        assert_eq!(f8, vec![378, 350, 357, 372, 372, 429, 429]);
        let f16: Vec<u32> = ArchKind::ALL.iter().map(|k| d.max_frequency_mhz(*k, 16)).collect();
        assert_eq!(f16, vec![363, 320, 306, 354, 354, 399, 399]);
        assert_eq!(d.fixed_frequency_mhz, 200);
    }

    #[test]
    fn geometries_per_kind() {
        let pr = ArchitectureConfig::new(ArchKind::Pr, 8);
        assert_eq!(pr.l1_geometry.sets(), 8);
        let sp = ArchitectureConfig::new(ArchKind::Sp, 8);
        assert_eq!((sp.l1_geometry.banks, sp.l1_geometry.sets()), (8, 8));
        let mp = ArchitectureConfig::new(ArchKind::Mp, 8);
        assert_eq!((mp.l1_geometry.banks, mp.l1_geometry.sets()), (2, 32));
        let h = ArchitectureConfig::new(ArchKind::HierPre, 16);
        assert_eq!(h.l15_geometry.map(|g| (g.banks, g.sets())), Some((2, 32)));
        assert!(h.prefetch);
        assert_eq!(h.max_frequency_mhz, 354);
        for k in ArchKind::ALL {
            ArchitectureConfig::new(k, 8).validate().unwrap();
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ArchKind::ALL {
            assert_eq!(k.name().parse::<ArchKind>().unwrap(), k);
        }
        assert_eq!("hier-pre-opt".parse::<ArchKind>().unwrap(), ArchKind::HierPreOpt);
        assert!("L3".parse::<ArchKind>().is_err());
    }

    #[test]
    fn mode_and_prefetch_follow_kind() {
        assert_eq!(ArchKind::HierOpt.frontend_mode(), FrontendMode::Optimized);
        assert_eq!(ArchKind::HierPre.frontend_mode(), FrontendMode::Legacy);
        assert!(ArchKind::HierPreOpt.has_prefetch() && !ArchKind::HierOpt.has_prefetch());
    }

    #[test]
    fn invalid_combinations_rejected() {
        let mut c = ArchitectureConfig::new(ArchKind::Sp, 8);
        c.l15_geometry = ArchitectureConfig::new(ArchKind::Hier, 8).l15_geometry;
        assert!(c.validate().is_err());
        let mut c = ArchitectureConfig::new(ArchKind::Hier, 8);
        c.l15_geometry = None;
        assert!(c.validate().is_err());
        let mut c = ArchitectureConfig::new(ArchKind::Pr, 8);
        c.prefetch = true;
        assert!(c.validate().is_err());
    }
}
