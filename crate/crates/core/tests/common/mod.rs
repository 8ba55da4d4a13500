#![allow(dead_code)]

use icache_core::{FlowKind, TraceRecord};
use rand::Rng;

/// A control-flow consistent trace wandering over `span` bytes of code.
/// `branchiness` is the chance (in percent) that a record redirects.
pub fn random_trace(rng: &mut impl Rng, len: usize, span: u32, branchiness: u32) -> Vec<TraceRecord> {
    let words = span / 4;
    let mut pc = rng.gen_range(0..words) * 4;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let at_end = pc + 4 >= span;
        let roll = rng.gen_range(0..100);
        let kind = if at_end || roll < branchiness {
            let target = rng.gen_range(0..words) * 4;
            if rng.gen_bool(0.5) {
                FlowKind::Jump { target }
            } else {
                FlowKind::CondTaken { target }
            }
        } else if roll < branchiness + 5 {
            FlowKind::CondNotTaken
        } else {
            FlowKind::Linear
        };
        let r = TraceRecord { pc, kind };
        pc = r.successor();
        out.push(r);
    }
    out
}
