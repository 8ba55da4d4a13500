use icache_core::interconnect::{Crossbar, PortKind, XbarRequest};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn request(source: usize, bank: u32, id: u16) -> XbarRequest {
    XbarRequest { source, port: PortKind::Fetch, transfer_id: id, line_addr: bank * 16, dest_bank: bank }
}

/// Every source keeps presenting until granted, then picks a fresh bank with
/// probability `load`. Returns the longest wait observed.
fn longest_wait(sources: usize, banks: u32, load: f64, cycles: u64, seed: u64, response_buffer: bool) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Crossbar::new(sources, banks, 1, response_buffer);
    let mut pending: Vec<Option<(XbarRequest, u64)>> = vec![None; sources];
    let mut next_id = 0u16;
    let mut worst = 0;
    for now in 0..cycles {
        for r in x.step(now) {
            assert_eq!(r.completion_cycle - r.grant_cycle, x.hit_latency());
            assert_eq!(r.completion_cycle, now);
        }
        for (s, p) in pending.iter_mut().enumerate() {
            if p.is_none() && rng.gen_bool(load) {
                *p = Some((request(s, rng.gen_range(0..banks), next_id), now));
                next_id = next_id.wrapping_add(1);
            }
        }
        let live: Vec<(XbarRequest, u64)> = pending.iter().flatten().copied().collect();
        let reqs: Vec<XbarRequest> = live.iter().map(|(r, _)| *r).collect();
        let grants = x.arbitrate(&reqs).unwrap();
        let mut busy: Vec<u32> = reqs.iter().map(|r| r.dest_bank).collect();
        busy.sort_unstable();
        busy.dedup();
        assert_eq!(grants.len(), busy.len(), "every requested bank grants once");
        for g in grants {
            let (r, since) = live[g];
            worst = worst.max(now - since);
            x.issue(r, now, 0);
            pending[r.source] = None;
        }
    }
    worst
}

#[test]
fn latency_is_exact_and_waits_are_bounded() {
    for (i, (sources, banks, buffered)) in [(8, 8, false), (8, 2, true), (16, 2, true), (4, 1, false)].into_iter().enumerate() {
        let w = longest_wait(sources, banks, 1.0, 20_000, i as u64, buffered);
        assert!(w < sources as u64, "{sources}x{banks}: waited {w}");
    }
}

#[test]
fn sixteen_streams_saturate_two_banks() {
    let mut x = Crossbar::new(16, 2, 1, true);
    let reqs: Vec<XbarRequest> = (0..16).map(|s| request(s, (s % 2) as u32, s as u16)).collect();
    for _ in 0..100 {
        assert_eq!(x.arbitrate(&reqs).unwrap().len(), 2);
    }
}

proptest! {
    #[test]
    fn no_source_waits_for_a_full_round(
        seed in any::<u64>(), sources in 1usize..17, banks in 1u32..9, load in 0.1f64..1.0,
    ) {
        let w = longest_wait(sources, banks, load, 2_000, seed, seed % 2 == 0);
        prop_assert!(w < sources as u64);
    }
}
