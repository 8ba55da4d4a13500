//! Core-to-bank interconnect: per-bank round-robin arbitration, a fixed
//! latency response pipeline and the per-core out-of-order fetch/prefetch port.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InterconnectError {
    #[error("response with unknown transfer id {0}")]
    UnknownTransfer(u16),
    #[error("request for bank {bank} but the interconnect has {banks} banks")]
    BadBank { bank: u32, banks: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortKind {
    Fetch,
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XbarRequest {
    pub source: usize,
    pub port: PortKind,
    pub transfer_id: u16,
    pub line_addr: u32,
    pub dest_bank: u32,
}

/// Per-bank round-robin arbitration.
///
/// A source that lost the previous cycles keeps its seniority: requesters are
/// ranked by how many consecutive cycles they have been waiting on the bank,
/// and ties go to the first source after the bank's last grant.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    sources: usize,
    last: Vec<usize>,
    waiting: Vec<Vec<u32>>,
}

impl RoundRobin {
    /// Pointers start at the last source so source 0 wins the first round.
    pub fn new(sources: usize, banks: usize) -> Self {
        assert!(sources > 0, "an arbiter needs at least one source");
        Self { sources, last: vec![sources - 1; banks], waiting: vec![vec![0; sources]; banks] }
    }

    pub fn pointer(&self, bank: usize) -> usize {
        self.last[bank]
    }

    pub fn set_pointer(&mut self, bank: usize, source: usize) {
        self.last[bank] = source % self.sources;
    }

    /// Picks the winner among `requesters` and records the grant.
    pub fn pick(&mut self, bank: usize, requesters: &[usize]) -> Option<usize> {
        let n = self.sources;
        let start = self.last[bank];
        let waiting = &mut self.waiting[bank];
        let winner = requesters
            .iter()
            .copied()
            .filter(|&s| s < n)
            .min_by_key(|&s| (std::cmp::Reverse(waiting[s]), (s + n - start - 1) % n));
        let mut next = vec![0; n];
        for &s in requesters.iter().filter(|&&s| s < n && Some(s) != winner) {
            next[s] = waiting[s] + 1;
        }
        *waiting = next;
        let winner = winner?;
        self.last[bank] = winner;
        Some(winner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlight {
    pub request: XbarRequest,
    pub grant_cycle: u64,
    pub completion_cycle: u64,
}

/// An N x M crossbar with one grant per bank per cycle.
#[derive(Debug, Clone)]
pub struct Crossbar {
    banks: u32,
    arbiter: RoundRobin,
    bank_latency: u64,
    response_buffer: bool,
    pipeline: Vec<InFlight>,
}

impl Crossbar {
    pub fn new(sources: usize, banks: u32, bank_latency: u64, response_buffer: bool) -> Self {
        Self {
            banks,
            arbiter: RoundRobin::new(sources, banks as usize),
            bank_latency,
            response_buffer,
            pipeline: Vec::new(),
        }
    }

    pub fn banks(&self) -> u32 {
        self.banks
    }

    /// Grant-to-delivery latency of a bank hit.
    pub fn hit_latency(&self) -> u64 {
        self.bank_latency + self.response_buffer as u64
    }

    pub fn arbiter(&self) -> &RoundRobin {
        &self.arbiter
    }

    /// Returns the indices into `requests` that won their bank this cycle.
    /// Losers are left to the caller, who presents them again next cycle.
    pub fn arbitrate(&mut self, requests: &[XbarRequest]) -> Result<Vec<usize>, InterconnectError> {
        let mut by_bank: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in requests.iter().enumerate() {
            if r.dest_bank >= self.banks {
                return Err(InterconnectError::BadBank { bank: r.dest_bank, banks: self.banks });
            }
            by_bank.entry(r.dest_bank).or_default().push(i);
        }
        let mut grants = Vec::with_capacity(by_bank.len());
        for (bank, idxs) in by_bank {
            let sources: Vec<usize> = idxs.iter().map(|&i| requests[i].source).collect();
            if let Some(src) = self.arbiter.pick(bank as usize, &sources) {
                // One request per source per bank per cycle.
                let i = idxs.iter().copied().find(|&i| requests[i].source == src).expect("winner is a requester");
                grants.push(i);
            }
        }
        grants.sort_unstable();
        Ok(grants)
    }

    /// Puts a granted request in flight; `extra` adds cycles behind the bank
    /// (for example a refill from the next level).
    pub fn issue(&mut self, request: XbarRequest, grant_cycle: u64, extra: u64) -> u64 {
        let completion_cycle = grant_cycle + self.hit_latency() + extra;
        self.pipeline.push(InFlight { request, grant_cycle, completion_cycle });
        completion_cycle
    }

    /// Removes and returns everything completing at `now`, in issue order.
    pub fn step(&mut self, now: u64) -> Vec<InFlight> {
        let (due, rest): (Vec<_>, Vec<_>) = self.pipeline.drain(..).partition(|f| f.completion_cycle == now);
        self.pipeline = rest;
        due
    }

    pub fn in_flight(&self) -> usize {
        self.pipeline.len()
    }
}

/// What happened to a response handed back through a core port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortResponse {
    pub port: PortKind,
    pub transfer_id: u16,
    pub line: u32,
    /// Lost to a fetch response arriving in the same cycle.
    pub dropped: bool,
}

/// A core's single request port towards the shared level, carrying fetches
/// and prefetches with distinct transfer ids.
#[derive(Debug, Clone, Default)]
pub struct OooPort {
    next_id: u16,
    outstanding: BTreeMap<u16, (PortKind, u32)>,
}

impl OooPort {
    pub fn new() -> Self {
        Self::default()
    }

    /// Chooses which candidate uses the port this cycle; fetches go first.
    pub fn select(fetch: Option<u32>, prefetch: Option<u32>) -> Option<(PortKind, u32)> {
        fetch.map(|l| (PortKind::Fetch, l)).or(prefetch.map(|l| (PortKind::Prefetch, l)))
    }

    /// Allocates a transfer id for a request leaving through the port.
    pub fn open(&mut self, port: PortKind, line: u32) -> u16 {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        self.outstanding.insert(id, (port, line));
        id
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Demultiplexes the responses arriving in one cycle. When a fetch and a
    /// prefetch arrive together the prefetch is marked dropped.
    pub fn complete(&mut self, ids: &[u16]) -> Result<Vec<PortResponse>, InterconnectError> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let (port, line) = self.outstanding.remove(&id).ok_or(InterconnectError::UnknownTransfer(id))?;
            out.push(PortResponse { port, transfer_id: id, line, dropped: false });
        }
        if out.iter().any(|r| r.port == PortKind::Fetch) {
            for r in out.iter_mut().filter(|r| r.port == PortKind::Prefetch) {
                r.dropped = true;
            }
        }
        Ok(out)
    }
}
