mod common;

use std::collections::{HashMap, HashSet};

use icache_core::{
    generate_synthetic, ArchKind, ArchitectureConfig, Event, EventKind, SimStats, Simulator, SyntheticSpec, TraceSet,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn workload(seed: u64, cores: usize, len: usize, span: u32) -> TraceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TraceSet::new((0..cores).map(|_| common::random_trace(&mut rng, len, span, 8)).collect()).unwrap()
}

fn run_logged(cfg: ArchitectureConfig, w: &TraceSet) -> (SimStats, Vec<Event>) {
    let mut sim = Simulator::build(cfg, w).unwrap();
    sim.enable_event_log();
    let stats = sim.run().unwrap();
    (stats, sim.take_events())
}

fn kind_strategy() -> impl Strategy<Value = ArchKind> {
    proptest::sample::select(ArchKind::ALL.to_vec())
}

/// Replays fills and evictions of every private cache and checks that no
/// prefetch went out for a resident line and every prefetch fill had been
/// asked for by a demand fetch.
fn check_prefetch_log(events: &[Event], capacity: usize) -> Result<(), String> {
    let mut resident: HashMap<usize, HashSet<u32>> = HashMap::new();
    let mut confirmed: HashMap<(usize, u32), u32> = HashMap::new();
    for e in events {
        let lines = resident.entry(e.core).or_default();
        // A fill logs its victim right after itself.
        if e.kind != EventKind::L1Evict && lines.len() > capacity {
            return Err(format!("core {} holds {} lines before {e}", e.core, lines.len()));
        }
        match e.kind {
            EventKind::PrefetchIssue if lines.contains(&e.addr) => {
                return Err(format!("prefetch of resident line: {e}"));
            }
            EventKind::PrefetchHitBuffer | EventKind::PrefetchWait => {
                *confirmed.entry((e.core, e.addr)).or_default() += 1;
            }
            EventKind::PrefetchFill => {
                let c = confirmed.entry((e.core, e.addr)).or_default();
                if *c == 0 {
                    return Err(format!("unconfirmed prefetch installed: {e}"));
                }
                *c -= 1;
                lines.insert(e.addr);
            }
            EventKind::L1Fill => {
                lines.insert(e.addr);
            }
            EventKind::L1Evict => {
                if !lines.remove(&e.addr) {
                    return Err(format!("evicted a line that was not resident: {e}"));
                }
            }
            _ => {}
        }
    }
    match resident.values().map(HashSet::len).max() {
        Some(n) if n > capacity => Err(format!("{n} lines resident at the end")),
        _ => Ok(()),
    }
}

#[test]
fn synthetic_runs_are_reproducible() {
    let w = generate_synthetic(&SyntheticSpec::with_step(64), 0).unwrap();
    for kind in ArchKind::ALL {
        let a = run_logged(ArchitectureConfig::new(kind, 8), &w);
        let b = run_logged(ArchitectureConfig::new(kind, 8), &w);
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn disabled_prefetch_behaves_like_plain_hierarchy() {
    for step in [32, 64, 256] {
        let w = generate_synthetic(&SyntheticSpec::with_step(step), 0).unwrap();
        let mut off = ArchitectureConfig::new(ArchKind::HierPre, 8);
        off.prefetch = false;
        assert_eq!(run_logged(off, &w), run_logged(ArchitectureConfig::new(ArchKind::Hier, 8), &w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_record_retires_once_in_order(
        seed in any::<u64>(), kind in kind_strategy(), cores in 1usize..4, len in 1usize..250,
    ) {
        let w = workload(seed, cores, len, 1024);
        let cfg = ArchitectureConfig::new(kind, cores);
        let executions = cfg.measured_iteration as usize;
        let (stats, events) = run_logged(cfg, &w);
        prop_assert_eq!(stats.instructions_retired, (cores * len) as u64);
        for core in 0..cores {
            let retired: Vec<u32> =
                events.iter().filter(|e| e.core == core && e.kind == EventKind::Retire).map(|e| e.addr).collect();
            let expected: Vec<u32> = w.per_core[core].iter().map(|r| r.pc).cycle().take(len * executions).collect();
            prop_assert_eq!(retired, expected);
        }
        prop_assert!(stats.cycles >= len as u64);
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), kind in kind_strategy(), prand in 0u32..256) {
        let w = workload(seed, 3, 200, 2048);
        let cfg = ArchitectureConfig::new(kind, 3).with_seed(prand);
        prop_assert_eq!(run_logged(cfg.clone(), &w), run_logged(cfg, &w));
    }

    #[test]
    fn shared_level_traffic_balances(seed in any::<u64>(), prefetch in any::<bool>(), opt in any::<bool>(), cores in 1usize..5) {
        let kind = match (prefetch, opt) {
            (false, false) => ArchKind::Hier,
            (true, false) => ArchKind::HierPre,
            (false, true) => ArchKind::HierOpt,
            (true, true) => ArchKind::HierPreOpt,
        };
        let w = workload(seed, cores, 300, 3072);
        let s = icache_core::simulate(ArchitectureConfig::new(kind, cores), &w).unwrap();
        prop_assert_eq!(s.l15_hits + s.l15_misses + s.prefetch_wait_unfinished, s.l1_misses + s.prefetch_issued);
        prop_assert_eq!(s.prefetch_useful, s.prefetch_hit_buffer + s.prefetch_wait_unfinished);
        prop_assert!(s.l2_refills <= s.l15_misses);
        if !prefetch {
            prop_assert_eq!(s.prefetch_issued + s.prefetch_useful + s.prefetch_filtered, 0);
        }
    }

    #[test]
    fn prefetch_never_pollutes(seed in any::<u64>(), cores in 1usize..4, span in 64u32..4096, opt in any::<bool>()) {
        let w = workload(seed, cores, 300, span & !3);
        let kind = if opt { ArchKind::HierPreOpt } else { ArchKind::HierPre };
        let cfg = ArchitectureConfig::new(kind, cores);
        let capacity = cfg.l1_geometry.lines() as usize;
        let (_, events) = run_logged(cfg, &w);
        prop_assert_eq!(check_prefetch_log(&events, capacity), Ok(()));
    }

    #[test]
    fn single_core_prefetch_never_slows_down(seed in any::<u64>(), span in 64u32..4096) {
        let w = workload(seed, 1, 400, span & !3);
        let plain = icache_core::simulate(ArchitectureConfig::new(ArchKind::Hier, 1), &w).unwrap();
        let pre = icache_core::simulate(ArchitectureConfig::new(ArchKind::HierPre, 1), &w).unwrap();
        prop_assert!(pre.cycles <= plain.cycles, "{} > {}", pre.cycles, plain.cycles);
    }

    #[test]
    fn private_caches_hold_at_most_capacity(seed in any::<u64>(), kind in kind_strategy()) {
        let w = workload(seed, 2, 300, 4096);
        let cfg = ArchitectureConfig::new(kind, 2);
        let capacity = cfg.l1_geometry.lines() as usize;
        let (_, events) = run_logged(cfg, &w);
        let evictions = events.iter().filter(|e| e.kind == EventKind::L1Evict).count();
        let fills = events.iter().filter(|e| matches!(e.kind, EventKind::L1Fill | EventKind::PrefetchFill)).count();
        if kind.is_hierarchical() || kind == ArchKind::Pr {
            prop_assert!(fills - evictions <= 2 * capacity);
        } else {
            prop_assert_eq!(fills, 0);
        }
    }
}
