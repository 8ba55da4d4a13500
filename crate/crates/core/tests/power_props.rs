use std::collections::BTreeMap;

use icache_core::power::{energy, normalize, total_energy, EnergyReport};
use icache_core::{ArchKind, PowerParams, SimStats};
use proptest::prelude::*;

/// Energy written out term by term, independent of the library's grouping.
fn reference_energy(cycles: u64, refills: u64, cluster: f64, leak: f64, read: f64, hz: f64) -> f64 {
    let seconds = cycles as f64 / hz;
    cluster * seconds + leak * seconds + refills as f64 * read
}

#[test]
fn published_example_is_exact() {
    let p = PowerParams { cluster_power: 2e-3, l2_leakage_power: 0.5e-3, l2_per_read_energy: 10e-12, frequency: 200e6 };
    let e = energy(1_000_000, 1000, &p).unwrap();
    assert!((e - 12.51e-6).abs() <= 1e-12 * 12.51e-6);
}

fn report() -> impl Strategy<Value = EnergyReport<f64>> {
    (1e-9f64..1e3, 1e-9f64..1e3, 1e-9f64..1e3, 1e-9f64..1e3, 1e-9f64..1e3).prop_map(|(a, b, c, d, e)| EnergyReport {
        total_energy: a,
        time: b,
        throughput: c,
        efficiency: d,
        power: e,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn energy_matches_reference(
        cycles in 1u64..1_000_000_000,
        refills in 0u64..10_000_000,
        cluster in 0.0f64..10.0,
        leak in 0.0f64..1.0,
        read in 0.0f64..1e-6,
        mhz in 1.0f64..1000.0,
    ) {
        let hz = mhz * 1e6;
        let p = PowerParams { cluster_power: cluster, l2_leakage_power: leak, l2_per_read_energy: read, frequency: hz };
        let got = energy(cycles, refills, &p).unwrap();
        let want = reference_energy(cycles, refills, cluster, leak, read, hz);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn energy_is_monotonic_in_cycles_and_refills(cycles in 1u64..1_000_000, refills in 0u64..1000, extra in 1u64..1000) {
        let p = PowerParams { cluster_power: 1.0, l2_leakage_power: 0.05, l2_per_read_energy: 1.5e-9, frequency: 2e8 };
        let base = energy(cycles, refills, &p).unwrap();
        prop_assert!(energy(cycles + extra, refills, &p).unwrap() > base);
        prop_assert!(energy(cycles, refills + extra, &p).unwrap() > base);
    }

    #[test]
    fn report_fields_are_consistent(cycles in 1u64..1_000_000, instr in 1u64..8_000_000, refills in 0u64..1000) {
        let stats = SimStats { cycles, instructions_retired: instr, l2_refills: refills, ..SimStats::default() };
        let p = PowerParams { cluster_power: 1.02f64, l2_leakage_power: 0.05, l2_per_read_energy: 1.5e-9, frequency: 429e6 };
        let r = total_energy(&stats, &p).unwrap();
        prop_assert!((r.efficiency * r.total_energy - 1.0).abs() < 1e-12);
        prop_assert!((r.power * r.time - r.total_energy).abs() <= 1e-12 * r.total_energy);
        prop_assert!((r.throughput * r.time - instr as f64).abs() <= 1e-9 * instr as f64);
    }

    #[test]
    fn normalizing_twice_is_stable(rows in proptest::collection::vec(report(), 7)) {
        let m: BTreeMap<ArchKind, EnergyReport<f64>> = ArchKind::ALL.into_iter().zip(rows).collect();
        let once = normalize(&m, ArchKind::Pr).unwrap();
        let twice = normalize(&once, ArchKind::Pr).unwrap();
        for k in ArchKind::ALL {
            let (a, b) = (once[&k], twice[&k]);
            prop_assert!((a.throughput - b.throughput).abs() <= 1e-12 * a.throughput);
            prop_assert!((a.total_energy - b.total_energy).abs() <= 1e-12 * a.total_energy);
        }
    }

    #[test]
    fn normalizing_keeps_the_best_kind(rows in proptest::collection::vec(report(), 7), base in 0usize..7) {
        let m: BTreeMap<ArchKind, EnergyReport<f64>> = ArchKind::ALL.into_iter().zip(rows).collect();
        let best = |m: &BTreeMap<ArchKind, EnergyReport<f64>>| {
            m.iter().max_by(|a, b| a.1.efficiency.total_cmp(&b.1.efficiency)).map(|(k, _)| *k)
        };
        let n = normalize(&m, ArchKind::ALL[base]).unwrap();
        prop_assert_eq!(best(&m), best(&n));
    }
}
