//! The cycle loop: frontends, caches, interconnects, prefetch units and the
//! L2 model assembled into one of the seven cluster architectures.
//!
//! Each cycle runs the same phases in order:
//! 1. completions due this cycle (L2 returns, crossbar responses, core data);
//! 2. frontends retire and present requests;
//! 3. the L1 to L1.5 ports present demands and prefetches, banks arbitrate,
//!    winners look up the shared level;
//! 4. private-port lookups (PR, MP, HIER L1) and prefetch decisions;
//! 5. pending line installs drain, one per bank, refills first.
//!
//! Counters are attributed to the execution (epoch) of the record that caused
//! the event, so warm-up traffic never leaks into the measured window.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Cache, CacheError, CacheGeometry};
use crate::config::{ArchKind, ArchitectureConfig, ConfigError};
use crate::frontend::{CoreProgram, FetchRequest, Frontend, FrontendError};
use crate::interconnect::{Crossbar, InterconnectError, OooPort, PortKind, XbarRequest};
use crate::prefetch::{Decision, MatchOutcome, PrefetchError, PrefetchUnit, ResponseOutcome};
use crate::workload::{TraceSet, LINE_BYTES};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("workload has {found} cores but the configuration has {expected}")]
    CoreMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cycle {cycle}: cache: {source}")]
    Cache { cycle: u64, source: CacheError },
    #[error("cycle {cycle}, core {core}: fetch stage: {source}")]
    Frontend { cycle: u64, core: usize, source: FrontendError },
    #[error("cycle {cycle}, core {core}: prefetch unit: {source}")]
    Prefetch { cycle: u64, core: usize, source: PrefetchError },
    #[error("cycle {cycle}, core {core}: interconnect: {source}")]
    Interconnect { cycle: u64, core: usize, source: InterconnectError },
    #[error("no forward progress by cycle {0}")]
    NoProgress(u64),
}

/// Hardware-style counters for the measured execution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub cycles: u64,
    pub instructions_retired: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l15_hits: u64,
    pub l15_misses: u64,
    pub l2_refills: u64,
    pub prefetch_issued: u64,
    pub prefetch_filtered: u64,
    pub prefetch_useful: u64,
    pub prefetch_hit_buffer: u64,
    pub prefetch_wait_unfinished: u64,
    pub prefetch_dropped: u64,
    pub core_stall_cycles: u64,
    pub bank_conflict_cycles: u64,
}

impl SimStats {
    /// Cluster instructions per cycle.
    pub fn ipc(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.instructions_retired as f64 / self.cycles as f64
        }
    }

    pub fn l1_miss_rate(&self) -> f64 {
        ratio(self.l1_misses, self.l1_hits + self.l1_misses)
    }

    pub fn l15_miss_rate(&self) -> f64 {
        ratio(self.l15_misses, self.l15_hits + self.l15_misses)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Retire,
    Fetch,
    L1Hit,
    L1Miss,
    L15Request,
    L15Hit,
    L15Miss,
    Deliver,
    L1Fill,
    L1Evict,
    SharedFill,
    PrefetchIssue,
    PrefetchFiltered,
    PrefetchHitBuffer,
    PrefetchWait,
    PrefetchDiscard,
    PrefetchDrop,
    PrefetchFill,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Retire => "retire",
            EventKind::Fetch => "fetch",
            EventKind::L1Hit => "l1_hit",
            EventKind::L1Miss => "l1_miss",
            EventKind::L15Request => "l15_req",
            EventKind::L15Hit => "l15_hit",
            EventKind::L15Miss => "l15_miss",
            EventKind::Deliver => "deliver",
            EventKind::L1Fill => "l1_fill",
            EventKind::L1Evict => "l1_evict",
            EventKind::SharedFill => "shared_fill",
            EventKind::PrefetchIssue => "pf_issue",
            EventKind::PrefetchFiltered => "pf_filtered",
            EventKind::PrefetchHitBuffer => "pf_hit_buffer",
            EventKind::PrefetchWait => "pf_wait",
            EventKind::PrefetchDiscard => "pf_discard",
            EventKind::PrefetchDrop => "pf_drop",
            EventKind::PrefetchFill => "pf_fill",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub cycle: u64,
    pub core: usize,
    pub kind: EventKind,
    pub addr: u32,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} 0x{:08x}", self.cycle, self.core, self.kind.name(), self.addr)
    }
}

/// Renders events in the line-oriented `cycle core event addr` format.
pub fn format_events(events: &[Event]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FetchMeta {
    id: u64,
    line: u32,
    epoch: u32,
}

impl From<FetchRequest> for FetchMeta {
    fn from(r: FetchRequest) -> Self {
        Self { id: r.id, line: r.line, epoch: r.epoch }
    }
}

#[derive(Debug, Clone, Copy)]
enum Scheduled {
    CoreData { core: usize, fetch: FetchMeta },
    SharedFill { line: u32 },
    PrivateFill { core: usize, line: u32 },
}

/// Install queues of one cache, one queue per bank, refills ahead of prefetch fills.
#[derive(Debug, Clone)]
struct InstallQueues {
    refill: Vec<VecDeque<u32>>,
    prefetch: Vec<VecDeque<u32>>,
}

impl InstallQueues {
    fn new(banks: usize) -> Self {
        Self { refill: vec![VecDeque::new(); banks], prefetch: vec![VecDeque::new(); banks] }
    }

    fn contains(&self, line: u32) -> bool {
        self.refill.iter().chain(&self.prefetch).any(|q| q.contains(&line))
    }

    fn is_empty(&self) -> bool {
        self.refill.iter().chain(&self.prefetch).all(VecDeque::is_empty)
    }
}

#[derive(Debug, Clone)]
struct CacheUnit {
    cache: Cache,
    queues: InstallQueues,
}

impl CacheUnit {
    fn new(geometry: CacheGeometry, seed_base: u32) -> Result<Self, CacheError> {
        Ok(Self { queues: InstallQueues::new(geometry.banks as usize), cache: Cache::new(geometry, seed_base)? })
    }

    /// A lookup sees lines whose data has arrived but not yet been written.
    fn present(&self, line: u32) -> bool {
        self.cache.contains(line) || self.queues.contains(line)
    }

    fn queue(&mut self, line: u32, prefetch: bool) {
        let bank = self.cache.geometry().bank_of(line) as usize;
        let q = if prefetch { &mut self.queues.prefetch[bank] } else { &mut self.queues.refill[bank] };
        q.push_back(line);
    }

    /// Writes at most one line per bank; returns (line, evicted line, was prefetch).
    fn drain(&mut self) -> Result<Vec<(u32, Option<u32>, bool)>, CacheError> {
        let mut done = Vec::new();
        for bank in 0..self.queues.refill.len() {
            let (line, prefetch) = match self.queues.refill[bank].pop_front() {
                Some(l) => (l, false),
                None => match self.queues.prefetch[bank].pop_front() {
                    Some(l) => (l, true),
                    None => continue,
                },
            };
            // Several misses to one shared line each refill it; keep the first copy.
            if self.cache.contains(line) {
                continue;
            }
            let ins = self.cache.insert(line)?;
            let g = *self.cache.geometry();
            let evicted = ins.evicted_tag.map(|tag| {
                let p = crate::cache::decode_address(line, &g);
                crate::cache::reassemble(&crate::cache::AddressParts { tag, offset: 0, ..p }, &g)
            });
            done.push((line, evicted, prefetch));
        }
        Ok(done)
    }
}

#[derive(Debug, Clone, Copy)]
struct Demand {
    ready_at: u64,
    fetch: FetchMeta,
}

#[derive(Debug, Clone, Copy)]
struct Transfer {
    line: u32,
    epoch: u32,
    fetch: Option<FetchMeta>,
}

/// Per-core state between a private L1 and the shared L1.5.
#[derive(Debug, Clone)]
struct HierPort {
    pf: PrefetchUnit,
    port: OooPort,
    demands: VecDeque<Demand>,
    presented: Option<XbarRequest>,
    transfers: BTreeMap<u16, Transfer>,
    /// Fetches waiting on the pending prefetch; a redirect can re-request
    /// the same line while an earlier fetch still waits.
    claimed: Vec<FetchMeta>,
    prefetch_epoch: u32,
}

impl HierPort {
    fn idle(&self) -> bool {
        self.demands.is_empty()
            && self.presented.is_none()
            && self.transfers.is_empty()
            && self.claimed.is_empty()
            && self.pf.queued().is_none()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Window {
    start: Option<u64>,
    prev_end: Option<u64>,
    end: Option<u64>,
}

/// One simulated cluster.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ArchitectureConfig,
    programs: Vec<CoreProgram>,
    frontends: Vec<Frontend>,
    private: Vec<CacheUnit>,
    shared: Option<CacheUnit>,
    xbar: Option<Crossbar>,
    hier: Vec<HierPort>,
    sp_waiting: Vec<Option<FetchMeta>>,
    schedule: BTreeMap<u64, Vec<Scheduled>>,
    last_delivery: Vec<u64>,
    windows: Vec<Window>,
    measured: u32,
    stats: SimStats,
    now: u64,
    events: Option<Vec<Event>>,
    cycle_limit: u64,
}

impl Simulator {
    pub fn build(cfg: ArchitectureConfig, workload: &TraceSet) -> Result<Self, SimError> {
        cfg.validate()?;
        if workload.cores() != cfg.cores {
            return Err(SimError::CoreMismatch { expected: cfg.cores, found: workload.cores() });
        }
        let n = cfg.cores;
        let cache_err = |source| SimError::Cache { cycle: 0, source };
        let mut private = Vec::new();
        let mut shared = None;
        let mut xbar = None;
        match cfg.kind {
            ArchKind::Pr => {
                for k in 0..n {
                    private.push(CacheUnit::new(cfg.l1_geometry, cfg.prand_seed + k as u32).map_err(cache_err)?);
                }
            }
            ArchKind::Sp | ArchKind::Mp => {
                shared = Some(CacheUnit::new(cfg.l1_geometry, cfg.prand_seed).map_err(cache_err)?);
                if cfg.kind == ArchKind::Sp {
                    xbar = Some(Crossbar::new(n, cfg.l1_geometry.banks, 1, false));
                }
            }
            _ => {
                let l15 = cfg.l15_geometry.expect("validated");
                for k in 0..n {
                    private.push(CacheUnit::new(cfg.l1_geometry, cfg.prand_seed + k as u32).map_err(cache_err)?);
                }
                shared = Some(CacheUnit::new(l15, cfg.prand_seed).map_err(cache_err)?);
                xbar = Some(Crossbar::new(n, l15.banks, cfg.l15_bank_latency, cfg.response_buffer));
            }
        }
        let hier = if cfg.kind.is_hierarchical() {
            (0..n)
                .map(|_| HierPort {
                    pf: PrefetchUnit::new(cfg.prefetch),
                    port: OooPort::new(),
                    demands: VecDeque::new(),
                    presented: None,
                    transfers: BTreeMap::new(),
                    claimed: Vec::new(),
                    prefetch_epoch: 0,
                })
                .collect()
        } else {
            Vec::new()
        };
        let executions = cfg.measured_iteration;
        let programs: Vec<CoreProgram> =
            workload.per_core.iter().map(|t| CoreProgram::new(t.clone(), executions)).collect();
        let longest = programs.iter().map(|p| p.total() as u64).max().unwrap_or(0);
        let cycle_limit = 64 + longest * (cfg.l2_refill_cycles + 8) * (n as u64 + 1) + cfg.start_skew * n as u64;
        Ok(Self {
            frontends: (0..n).map(|_| Frontend::new(cfg.frontend_mode())).collect(),
            programs,
            private,
            shared,
            xbar,
            hier,
            sp_waiting: vec![None; n],
            schedule: BTreeMap::new(),
            last_delivery: vec![0; n],
            windows: vec![Window::default(); n],
            measured: cfg.measured_iteration - 1,
            stats: SimStats::default(),
            now: 0,
            events: None,
            cycle_limit,
            cfg,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.cfg
    }

    pub fn enable_event_log(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> &[Event] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.events.take().unwrap_or_default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Installs a line into a core's private cache before the run starts.
    pub fn preload_private(&mut self, core: usize, line: u32) -> Result<(), SimError> {
        let unit = self.private.get_mut(core).ok_or_else(|| {
            SimError::Config(ConfigError::Invalid(format!("{} has no private cache for core {core}", self.cfg.kind)))
        })?;
        if !unit.cache.contains(line) {
            unit.cache.insert(line).map_err(|source| SimError::Cache { cycle: 0, source })?;
        }
        Ok(())
    }

    /// Installs a line into the shared cache (SP/MP banks or the L1.5).
    pub fn preload_shared(&mut self, line: u32) -> Result<(), SimError> {
        let kind = self.cfg.kind;
        let unit = self
            .shared
            .as_mut()
            .ok_or_else(|| SimError::Config(ConfigError::Invalid(format!("{kind} has no shared cache"))))?;
        if !unit.cache.contains(line) {
            unit.cache.insert(line).map_err(|source| SimError::Cache { cycle: 0, source })?;
        }
        Ok(())
    }

    /// Runs to completion and returns the counters of the measured execution.
    pub fn run(&mut self) -> Result<SimStats, SimError> {
        while !self.quiescent() {
            if self.now > self.cycle_limit {
                return Err(SimError::NoProgress(self.now));
            }
            self.step()?;
        }
        let starts = self.windows.iter().filter_map(|w| w.start).min();
        let ends = self.windows.iter().filter_map(|w| w.end).max();
        self.stats.cycles = match (starts, ends) {
            (Some(s), Some(e)) => e + 1 - s,
            _ => 0,
        };
        Ok(self.stats)
    }

    fn quiescent(&self) -> bool {
        self.frontends.iter().zip(&self.programs).all(|(f, p)| f.finished(p) && f.in_flight() == 0)
            && self.schedule.is_empty()
            && self.xbar.as_ref().is_none_or(|x| x.in_flight() == 0)
            && self.hier.iter().all(HierPort::idle)
            && self.private.iter().chain(&self.shared).all(|u| u.queues.is_empty())
    }

    fn log(&mut self, core: usize, kind: EventKind, addr: u32) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(Event { cycle: self.now, core, kind, addr });
        }
    }

    fn count(&mut self, epoch: u32, f: impl FnOnce(&mut SimStats)) {
        if epoch == self.measured {
            f(&mut self.stats);
        }
    }

    fn schedule_at(&mut self, cycle: u64, item: Scheduled) {
        self.schedule.entry(cycle).or_default().push(item);
    }

    /// Core responses leave in request order.
    fn schedule_core_data(&mut self, core: usize, cycle: u64, fetch: FetchMeta) {
        let at = cycle.max(self.last_delivery[core]);
        self.last_delivery[core] = at;
        self.schedule_at(at, Scheduled::CoreData { core, fetch });
    }

    fn deliver_now(&mut self, core: usize, fetch: FetchMeta) -> Result<(), SimError> {
        let now = self.now;
        self.log(core, EventKind::Deliver, fetch.line);
        self.frontends[core]
            .deliver(fetch.id, fetch.line)
            .map_err(|source| SimError::Frontend { cycle: now, core, source })
    }

    /// Advances the cluster by one cycle.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.complete()?;
        self.advance_frontends()?;
        match self.cfg.kind {
            ArchKind::Pr | ArchKind::Mp => self.private_ports()?,
            ArchKind::Sp => self.shared_crossbar()?,
            _ => {
                self.hier_ports()?;
                self.hier_l1()?;
            }
        }
        self.drain_installs()?;
        self.now += 1;
        Ok(())
    }

    fn complete(&mut self) -> Result<(), SimError> {
        let due = self.schedule.remove(&self.now).unwrap_or_default();
        let mut core_data = Vec::new();
        for item in due {
            match item {
                Scheduled::SharedFill { line } => {
                    self.shared.as_mut().expect("shared level").queue(line, false);
                }
                Scheduled::PrivateFill { core, line } => self.private[core].queue(line, false),
                Scheduled::CoreData { core, fetch } => core_data.push((core, fetch)),
            }
        }
        if let Some(x) = self.xbar.as_mut() {
            let done = x.step(self.now);
            if self.cfg.kind == ArchKind::Sp {
                for f in done {
                    let core = f.request.source;
                    let fetch = self.sp_waiting[core].take().expect("crossbar response for a waiting core");
                    core_data.push((core, fetch));
                }
            } else {
                let mut by_core: BTreeMap<usize, Vec<u16>> = BTreeMap::new();
                for f in done {
                    by_core.entry(f.request.source).or_default().push(f.request.transfer_id);
                }
                for (core, ids) in by_core {
                    self.hier_responses(core, &ids)?;
                }
            }
        }
        for (core, fetch) in core_data {
            self.deliver_now(core, fetch)?;
        }
        Ok(())
    }

    fn hier_responses(&mut self, core: usize, ids: &[u16]) -> Result<(), SimError> {
        let now = self.now;
        let responses = self.hier[core]
            .port
            .complete(ids)
            .map_err(|source| SimError::Interconnect { cycle: now, core, source })?;
        for r in responses {
            let t = self.hier[core].transfers.remove(&r.transfer_id).expect("transfer bookkeeping");
            match r.port {
                PortKind::Fetch => {
                    let fetch = t.fetch.expect("fetch transfer carries its request");
                    self.private[core].queue(t.line, false);
                    self.deliver_now(core, fetch)?;
                }
                PortKind::Prefetch if r.dropped => {
                    self.log(core, EventKind::PrefetchDrop, t.line);
                    self.count(t.epoch, |s| s.prefetch_dropped += 1);
                    if self.hier[core].pf.drop_response() {
                        let waiting = std::mem::take(&mut self.hier[core].claimed);
                        self.hier[core].demands.extend(waiting.into_iter().map(|fetch| Demand { ready_at: now + 1, fetch }));
                    }
                }
                PortKind::Prefetch => {
                    let outcome = self.hier[core]
                        .pf
                        .on_response(t.line)
                        .map_err(|source| SimError::Prefetch { cycle: now, core, source })?;
                    match outcome {
                        ResponseOutcome::Buffered => {}
                        ResponseOutcome::Discarded => self.log(core, EventKind::PrefetchDiscard, t.line),
                        ResponseOutcome::Claimed => {
                            self.private[core].queue(t.line, true);
                            for fetch in std::mem::take(&mut self.hier[core].claimed) {
                                self.count(fetch.epoch, |s| {
                                    s.prefetch_useful += 1;
                                    s.prefetch_wait_unfinished += 1;
                                });
                                self.deliver_now(core, fetch)?;
                            }
                        }
                    }
                }
            }
            if r.port == PortKind::Prefetch {
                self.restart_prefetch(core);
            }
        }
        Ok(())
    }

    /// A restart keeps the epoch of the fetch that asked for it while busy.
    fn restart_prefetch(&mut self, core: usize) {
        self.hier[core].pf.restart_deferred();
    }

    fn advance_frontends(&mut self) -> Result<(), SimError> {
        let now = self.now;
        for core in 0..self.frontends.len() {
            if now < core as u64 * self.cfg.start_skew {
                continue;
            }
            let prog = &self.programs[core];
            if self.frontends[core].finished(prog) {
                continue;
            }
            let pending_epoch = prog.epoch(self.frontends[core].cursor());
            let out = self.frontends[core]
                .step(prog)
                .map_err(|source| SimError::Frontend { cycle: now, core, source })?;
            if out.stalled {
                self.count(pending_epoch, |s| s.core_stall_cycles += 1);
            }
            if let Some(r) = out.retired {
                self.log(core, EventKind::Retire, r.pc);
                self.count(r.epoch, |s| s.instructions_retired += 1);
                let w = &mut self.windows[core];
                if r.epoch + 1 == self.measured {
                    w.prev_end = Some(now);
                } else if r.epoch == self.measured {
                    if w.start.is_none() {
                        w.start = Some(w.prev_end.map_or(core as u64 * self.cfg.start_skew, |e| e + 1));
                    }
                    w.end = Some(now);
                }
            }
        }
        Ok(())
    }

    /// PR and MP: every core owns its port, so requests never contend.
    fn private_ports(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let refill = self.cfg.l2_refill_cycles;
        for core in 0..self.frontends.len() {
            let Some(req) = self.frontends[core].presented() else { continue };
            self.frontends[core].grant().map_err(|source| SimError::Frontend { cycle: now, core, source })?;
            let fetch = FetchMeta::from(req);
            self.log(core, EventKind::Fetch, req.line);
            let unit = if self.cfg.kind == ArchKind::Pr {
                &self.private[core]
            } else {
                self.shared.as_ref().expect("shared banks")
            };
            if unit.present(req.line) {
                self.log(core, EventKind::L1Hit, req.line);
                self.count(req.epoch, |s| s.l1_hits += 1);
                self.schedule_core_data(core, now + 1, fetch);
            } else {
                self.log(core, EventKind::L1Miss, req.line);
                self.count(req.epoch, |s| {
                    s.l1_misses += 1;
                    s.l2_refills += 1;
                });
                let fill = if self.cfg.kind == ArchKind::Pr {
                    Scheduled::PrivateFill { core, line: req.line }
                } else {
                    Scheduled::SharedFill { line: req.line }
                };
                self.schedule_at(now + refill - 1, fill);
                self.schedule_core_data(core, now + refill, fetch);
            }
        }
        Ok(())
    }

    /// SP: all cores reach the shared banks through one crossbar.
    fn shared_crossbar(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let refill = self.cfg.l2_refill_cycles;
        let geometry = self.cfg.l1_geometry;
        let mut requests = Vec::new();
        let mut metas = Vec::new();
        for core in 0..self.frontends.len() {
            if let Some(req) = self.frontends[core].presented() {
                requests.push(XbarRequest {
                    source: core,
                    port: PortKind::Fetch,
                    transfer_id: req.id as u16,
                    line_addr: req.line,
                    dest_bank: geometry.bank_of(req.line),
                });
                metas.push(FetchMeta::from(req));
            }
        }
        if requests.is_empty() {
            return Ok(());
        }
        let xbar = self.xbar.as_mut().expect("crossbar");
        let grants = xbar
            .arbitrate(&requests)
            .map_err(|source| SimError::Interconnect { cycle: now, core: requests[0].source, source })?;
        for (i, (req, fetch)) in requests.iter().zip(&metas).enumerate() {
            let core = req.source;
            if !grants.contains(&i) {
                self.count(fetch.epoch, |s| s.bank_conflict_cycles += 1);
                continue;
            }
            self.frontends[core].grant().map_err(|source| SimError::Frontend { cycle: now, core, source })?;
            self.log(core, EventKind::Fetch, fetch.line);
            self.sp_waiting[core] = Some(*fetch);
            let hit = self.shared.as_ref().expect("shared banks").present(fetch.line);
            let extra = if hit {
                self.log(core, EventKind::L1Hit, fetch.line);
                self.count(fetch.epoch, |s| s.l1_hits += 1);
                0
            } else {
                self.log(core, EventKind::L1Miss, fetch.line);
                self.count(fetch.epoch, |s| {
                    s.l1_misses += 1;
                    s.l2_refills += 1;
                });
                self.schedule_at(now + refill - 1, Scheduled::SharedFill { line: fetch.line });
                refill - 1
            };
            self.xbar.as_mut().expect("crossbar").issue(*req, now, extra);
        }
        Ok(())
    }

    /// HIER: each core's L1-to-L1.5 port presents one request, banks arbitrate.
    fn hier_ports(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let l15 = self.cfg.l15_geometry.expect("hierarchical");
        for core in 0..self.hier.len() {
            if self.hier[core].presented.is_some() {
                continue;
            }
            let demand = self.hier[core].demands.front().filter(|d| d.ready_at <= now).copied();
            let choice = OooPort::select(demand.map(|d| d.fetch.line), self.hier[core].pf.queued());
            let Some((port, line)) = choice else { continue };
            let transfer = match port {
                PortKind::Fetch => {
                    let d = self.hier[core].demands.pop_front().expect("selected demand");
                    Transfer { line, epoch: d.fetch.epoch, fetch: Some(d.fetch) }
                }
                PortKind::Prefetch => {
                    self.hier[core].pf.take_queued();
                    let epoch = self.hier[core].prefetch_epoch;
                    // Probe the tags again: a refill may have brought the line in.
                    if self.private[core].present(line) {
                        self.log(core, EventKind::PrefetchFiltered, line);
                        self.count(epoch, |s| s.prefetch_filtered += 1);
                        if self.hier[core].pf.cancel() {
                            for fetch in std::mem::take(&mut self.hier[core].claimed) {
                                self.count(fetch.epoch, |s| {
                                    s.prefetch_useful += 1;
                                    s.prefetch_wait_unfinished += 1;
                                });
                                self.schedule_core_data(core, now + 1, fetch);
                            }
                        }
                        self.restart_prefetch(core);
                        continue;
                    }
                    Transfer { line, epoch, fetch: None }
                }
            };
            let h = &mut self.hier[core];
            let transfer_id = h.port.open(port, line);
            h.transfers.insert(transfer_id, transfer);
            h.presented =
                Some(XbarRequest { source: core, port, transfer_id, line_addr: line, dest_bank: l15.bank_of(line) });
        }

        let requests: Vec<XbarRequest> = self.hier.iter().filter_map(|h| h.presented).collect();
        if requests.is_empty() {
            return Ok(());
        }
        let grants = self
            .xbar
            .as_mut()
            .expect("crossbar")
            .arbitrate(&requests)
            .map_err(|source| SimError::Interconnect { cycle: now, core: requests[0].source, source })?;
        let refill = self.cfg.l2_refill_cycles;
        for (i, req) in requests.iter().enumerate() {
            let core = req.source;
            let t = self.hier[core].transfers[&req.transfer_id];
            if !grants.contains(&i) {
                self.count(t.epoch, |s| s.bank_conflict_cycles += 1);
                continue;
            }
            self.hier[core].presented = None;
            let kind = if req.port == PortKind::Prefetch { EventKind::PrefetchIssue } else { EventKind::L15Request };
            self.log(core, kind, req.line_addr);
            if req.port == PortKind::Prefetch {
                self.count(t.epoch, |s| s.prefetch_issued += 1);
            }
            let hit = self.shared.as_ref().expect("L1.5").present(req.line_addr);
            let xbar = self.xbar.as_mut().expect("crossbar");
            let hit_latency = xbar.hit_latency();
            let extra = if hit {
                0
            } else {
                // End-to-end refill counts from the L1 lookup, one cycle before this grant.
                refill - 1 - hit_latency
            };
            xbar.issue(*req, now, extra);
            if hit {
                self.log(core, EventKind::L15Hit, req.line_addr);
                self.count(t.epoch, |s| s.l15_hits += 1);
            } else {
                self.log(core, EventKind::L15Miss, req.line_addr);
                self.count(t.epoch, |s| {
                    s.l15_misses += 1;
                    s.l2_refills += 1;
                });
                self.schedule_at(now + extra, Scheduled::SharedFill { line: req.line_addr });
            }
        }
        Ok(())
    }

    /// HIER: private L1 lookups (dual-ported when prefetching) and prefetch decisions.
    fn hier_l1(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let demand_delay = 1 + self.cfg.request_buffer as u64;
        for core in 0..self.frontends.len() {
            let Some(req) = self.frontends[core].presented() else { continue };
            self.frontends[core].grant().map_err(|source| SimError::Frontend { cycle: now, core, source })?;
            let fetch = FetchMeta::from(req);
            let line = req.line;
            self.log(core, EventKind::Fetch, line);
            self.hier[core].pf.observe_fetch(line);
            let next = line.wrapping_add(LINE_BYTES);
            let unit = &self.private[core];
            let (hit, next_hit) = (unit.present(line), unit.present(next));
            if hit {
                self.log(core, EventKind::L1Hit, line);
                self.count(req.epoch, |s| s.l1_hits += 1);
                self.schedule_core_data(core, now + 1, fetch);
            } else {
                match self.hier[core].pf.matches(line) {
                    MatchOutcome::HitBuffer => {
                        self.hier[core].pf.consume_buffer();
                        self.private[core].queue(line, true);
                        self.log(core, EventKind::PrefetchHitBuffer, line);
                        self.count(req.epoch, |s| {
                            s.l1_hits += 1;
                            s.prefetch_useful += 1;
                            s.prefetch_hit_buffer += 1;
                        });
                        self.schedule_core_data(core, now + 1, fetch);
                    }
                    MatchOutcome::WaitUnfinished => {
                        self.hier[core].pf.claim();
                        self.hier[core].claimed.push(fetch);
                        self.log(core, EventKind::L1Miss, line);
                        self.log(core, EventKind::PrefetchWait, line);
                        self.count(req.epoch, |s| s.l1_misses += 1);
                    }
                    MatchOutcome::NoMatch => {
                        self.log(core, EventKind::L1Miss, line);
                        self.count(req.epoch, |s| s.l1_misses += 1);
                        self.hier[core].demands.push_back(Demand { ready_at: now + demand_delay, fetch });
                    }
                }
            }
            let next_lookup = if next_hit { crate::cache::Lookup::Hit { way: 0 } } else { crate::cache::Lookup::Miss };
            match self.hier[core].pf.decide(line, next_lookup) {
                Decision::Issue(_) => self.hier[core].prefetch_epoch = req.epoch,
                Decision::Filtered => {
                    self.log(core, EventKind::PrefetchFiltered, next);
                    self.count(req.epoch, |s| s.prefetch_filtered += 1);
                }
                Decision::Busy => self.hier[core].prefetch_epoch = req.epoch,
                Decision::Disabled => {}
            }
        }
        Ok(())
    }

    fn drain_installs(&mut self) -> Result<(), SimError> {
        let now = self.now;
        for core in 0..self.private.len() {
            let done = self.private[core].drain().map_err(|source| SimError::Cache { cycle: now, source })?;
            for (line, evicted, prefetch) in done {
                self.log(core, if prefetch { EventKind::PrefetchFill } else { EventKind::L1Fill }, line);
                if let Some(e) = evicted {
                    self.log(core, EventKind::L1Evict, e);
                }
            }
        }
        if let Some(unit) = self.shared.as_mut() {
            let done = unit.drain().map_err(|source| SimError::Cache { cycle: now, source })?;
            for (line, _, _) in done {
                self.log(0, EventKind::SharedFill, line);
            }
        }
        Ok(())
    }
}

/// Builds and runs one simulation.
pub fn simulate(cfg: ArchitectureConfig, workload: &TraceSet) -> Result<SimStats, SimError> {
    Simulator::build(cfg, workload)?.run()
}
