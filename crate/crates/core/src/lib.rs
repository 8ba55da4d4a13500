//! Cycle-stepped simulator of the instruction-fetch path of a small SPMD
//! processor cluster.
//!
//! Seven cache organisations are modelled: private per-core banks (`PR`), a
//! single-ported shared cache behind a crossbar (`SP`), a multi-ported shared
//! cache (`MP`), and a two-level private L1 plus shared L1.5 with and without
//! next-line prefetching and an optimized fetch stage (`HIER*`).
//!
//! ```
//! use icache_core::{generate_synthetic, simulate, ArchKind, ArchitectureConfig, SyntheticSpec};
//!
//! let workload = generate_synthetic(&SyntheticSpec::with_step(32), 0).unwrap();
//! let stats = simulate(ArchitectureConfig::new(ArchKind::Hier, 8), &workload).unwrap();
//! assert_eq!(stats.l1_misses, 0);
//! ```

pub mod cache;
pub mod config;
pub mod engine;
pub mod frontend;
pub mod interconnect;
pub mod power;
pub mod prefetch;
pub mod workload;

pub use cache::{decode_address, prand_next, reassemble, AddressParts, Cache, CacheBank, CacheGeometry, Lookup};
pub use config::{ArchKind, ArchitectureConfig, ClusterDefaults};
pub use engine::{format_events, simulate, Event, EventKind, SimError, SimStats, Simulator};
pub use frontend::{branch_penalty, FrontendMode};
pub use power::{PowerError, PowerLut};
pub use workload::{
    generate_synthetic, parse_trace_file, trace_stats, FlowKind, SyntheticSpec, TraceRecord, TraceSet, TraceStats,
};

/// Double-precision energy report, the default used by the experiment driver.
pub type EnergyReport = power::EnergyReport<f64>;
pub type EnergyReportF32 = power::EnergyReport<f32>;
pub type PowerParams = power::PowerParams<f64>;
pub type PowerParamsF32 = power::PowerParams<f32>;
