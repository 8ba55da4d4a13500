//! Instruction-fetch stage models.
//!
//! Both frontends talk to the memory side through the same small protocol: a
//! frontend *presents* at most one new line request per cycle, the engine
//! *grants* it when the port or bank accepts it, and later *delivers* the line
//! tagged with the request id. The engine retires nothing itself; it only
//! asks each frontend to advance one cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{line_of, FlowKind, TraceRecord, LINE_BYTES, WORD_BYTES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrontendError {
    #[error("delivery of line 0x{line:08x} with id {id} matches no outstanding request")]
    UnknownResponse { id: u64, line: u32 },
    #[error("request {id} asked for line 0x{expected:08x} but 0x{found:08x} was delivered")]
    WrongLine { id: u64, expected: u32, found: u32 },
    #[error("grant without a presented request")]
    SpuriousGrant,
    #[error("fetch buffer head 0x{head:08x} does not match pc 0x{pc:08x}")]
    OutOfOrder { head: u32, pc: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrontendMode {
    /// 128-bit fetch with a one-line L0 buffer and its own next-line request.
    Legacy,
    /// 4 x 32-bit ring FIFO with non-blocking requests and a delayed conditional branch.
    Optimized,
}

/// Dropped issue slots after a control-flow record retires.
pub fn branch_penalty(kind: FlowKind, mode: FrontendMode) -> u8 {
    match (kind, mode) {
        (FlowKind::Linear | FlowKind::CondNotTaken, _) => 0,
        (FlowKind::Jump { .. }, _) => 1,
        (FlowKind::CondTaken { .. }, FrontendMode::Legacy) => 2,
        (FlowKind::CondTaken { .. }, FrontendMode::Optimized) => 3,
    }
}

/// One core's trace executed `executions` times back to back.
///
/// Moving from the last record to the first is a taken jump unless the last
/// record already flows into the first one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreProgram {
    records: Vec<TraceRecord>,
    executions: u32,
}

impl CoreProgram {
    pub fn new(records: Vec<TraceRecord>, executions: u32) -> Self {
        assert!(!records.is_empty(), "a core program needs at least one record");
        Self { records, executions }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total(&self) -> usize {
        self.records.len() * self.executions as usize
    }

    pub fn record(&self, index: usize) -> &TraceRecord {
        &self.records[index % self.records.len()]
    }

    pub fn pc(&self, index: usize) -> u32 {
        self.record(index).pc
    }

    pub fn epoch(&self, index: usize) -> u32 {
        (index / self.records.len()) as u32
    }

    /// Control-flow kind of the record at `index`, including the wrap-around.
    pub fn flow(&self, index: usize) -> FlowKind {
        let rec = self.record(index);
        if (index + 1) % self.records.len() != 0 {
            return rec.kind;
        }
        let first = self.records[0].pc;
        if rec.successor() == first {
            rec.kind
        } else {
            FlowKind::Jump { target: first }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchRequest {
    pub id: u64,
    pub line: u32,
    /// Execution index of the record that triggered the request.
    pub epoch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retired {
    pub index: usize,
    pub pc: u32,
    pub epoch: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub retired: Option<Retired>,
    /// Waiting for instruction data (not a branch bubble).
    pub stalled: bool,
    pub bubble: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outstanding {
    id: u64,
    line: u32,
    epoch: u32,
    granted: bool,
    abandoned: bool,
}

/// Legacy fetch stage: one L0 line, one held next line, one request at a time.
#[derive(Debug, Clone)]
pub struct LegacyFetch {
    l0: Option<u32>,
    held: Option<u32>,
    outstanding: Option<Outstanding>,
    bubble: u8,
    cursor: usize,
    next_id: u64,
}

impl Default for LegacyFetch {
    fn default() -> Self {
        Self::new()
    }
}

impl LegacyFetch {
    pub fn new() -> Self {
        Self { l0: None, held: None, outstanding: None, bubble: 0, cursor: 0, next_id: 0 }
    }

    pub fn l0_line(&self) -> Option<u32> {
        self.l0
    }

    fn has_line(&mut self, line: u32) -> bool {
        if self.l0 == Some(line) {
            return true;
        }
        if self.held == Some(line) {
            self.l0 = self.held.take();
            return true;
        }
        false
    }

    fn present(&mut self, line: u32, epoch: u32) {
        let id = self.next_id;
        self.next_id += 1;
        self.outstanding = Some(Outstanding { id, line, epoch, granted: false, abandoned: false });
    }

    fn redirect(&mut self, target_line: u32) {
        if self.held != Some(target_line) {
            self.held = None;
        }
        if let Some(o) = self.outstanding.as_mut() {
            if o.line != target_line {
                if o.granted {
                    o.abandoned = true;
                } else {
                    self.outstanding = None;
                }
            }
        }
    }

    pub fn step(&mut self, prog: &CoreProgram) -> StepOutcome {
        let mut out = StepOutcome::default();
        if self.cursor >= prog.total() {
            return out;
        }
        if self.bubble > 0 {
            self.bubble -= 1;
            out.bubble = true;
        } else if self.has_line(line_of(prog.pc(self.cursor))) {
            let index = self.cursor;
            out.retired = Some(Retired { index, pc: prog.pc(index), epoch: prog.epoch(index) });
            let flow = prog.flow(index);
            self.cursor += 1;
            if flow.is_taken() && self.cursor < prog.total() {
                self.bubble = branch_penalty(flow, FrontendMode::Legacy);
                self.redirect(line_of(prog.pc(self.cursor)));
            }
        } else {
            out.stalled = true;
        }

        if self.cursor < prog.total() && self.outstanding.is_none() {
            let pc = prog.pc(self.cursor);
            let line = line_of(pc);
            let epoch = prog.epoch(self.cursor);
            if !self.has_line(line) {
                self.present(line, epoch);
            } else if self.held.is_none() && pc % LINE_BYTES == LINE_BYTES - WORD_BYTES {
                self.present(line.wrapping_add(LINE_BYTES), epoch);
            }
        }
        out
    }

    pub fn presented(&self) -> Option<FetchRequest> {
        self.outstanding
            .filter(|o| !o.granted)
            .map(|o| FetchRequest { id: o.id, line: o.line, epoch: o.epoch })
    }

    pub fn grant(&mut self) -> Result<(), FrontendError> {
        match self.outstanding.as_mut() {
            Some(o) if !o.granted => {
                o.granted = true;
                Ok(())
            }
            _ => Err(FrontendError::SpuriousGrant),
        }
    }

    pub fn deliver(&mut self, id: u64, line: u32) -> Result<(), FrontendError> {
        match self.outstanding {
            Some(o) if o.id == id && o.granted => {
                if o.line != line {
                    return Err(FrontendError::WrongLine { id, expected: o.line, found: line });
                }
                self.outstanding = None;
                if !o.abandoned {
                    self.held = Some(line);
                }
                Ok(())
            }
            _ => Err(FrontendError::UnknownResponse { id, line }),
        }
    }

    pub fn finished(&self, prog: &CoreProgram) -> bool {
        self.cursor >= prog.total()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.is_some() as usize
    }
}

pub const RING_SLOTS: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Slot {
    addr: u32,
    ready: bool,
}

/// Optimized fetch stage: a four-word ring filled one word per cycle ahead of
/// retirement, with up to four line requests in flight.
#[derive(Debug, Clone)]
pub struct RingFetch {
    slots: [Slot; RING_SLOTS],
    rd: usize,
    count: usize,
    fetch_ptr: Option<u32>,
    l0: Option<u32>,
    outstanding: Vec<Outstanding>,
    bubble: u8,
    cursor: usize,
    next_id: u64,
}

impl Default for RingFetch {
    fn default() -> Self {
        Self::new()
    }
}

impl RingFetch {
    pub fn new() -> Self {
        Self {
            slots: [Slot::default(); RING_SLOTS],
            rd: 0,
            count: 0,
            fetch_ptr: None,
            l0: None,
            outstanding: Vec::with_capacity(RING_SLOTS),
            bubble: 0,
            cursor: 0,
            next_id: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.count
    }

    pub fn buffered(&self) -> Vec<u32> {
        (0..self.count).map(|k| self.slots[(self.rd + k) % RING_SLOTS].addr).collect()
    }

    fn push(&mut self, addr: u32, ready: bool) {
        debug_assert!(self.count < RING_SLOTS);
        let wr = (self.rd + self.count) % RING_SLOTS;
        self.slots[wr] = Slot { addr, ready };
        self.count += 1;
    }

    fn pop(&mut self) {
        self.rd = (self.rd + 1) % RING_SLOTS;
        self.count -= 1;
    }

    fn redirect(&mut self, target: u32) {
        let hit = (0..self.count).find(|k| self.slots[(self.rd + k) % RING_SLOTS].addr == target);
        if let Some(k) = hit {
            self.rd = (self.rd + k) % RING_SLOTS;
            self.count -= k;
            return;
        }
        self.count = 0;
        self.fetch_ptr = Some(target);
        let target_line = line_of(target);
        self.outstanding.retain_mut(|o| {
            if o.line == target_line {
                return true;
            }
            o.abandoned = true;
            o.granted
        });
    }

    fn lookahead(&mut self, prog: &CoreProgram) {
        if self.count >= RING_SLOTS {
            return;
        }
        let addr = *self.fetch_ptr.get_or_insert_with(|| prog.pc(self.cursor));
        let line = line_of(addr);
        if self.l0 == Some(line) {
            self.push(addr, true);
        } else if self.outstanding.iter().any(|o| o.line == line && !o.abandoned) {
            self.push(addr, false);
        } else if self.outstanding.iter().all(|o| o.granted) && self.outstanding.len() < RING_SLOTS {
            let id = self.next_id;
            self.next_id += 1;
            let epoch = prog.epoch(self.cursor);
            self.outstanding.push(Outstanding { id, line, epoch, granted: false, abandoned: false });
            self.push(addr, false);
        } else {
            return;
        }
        self.fetch_ptr = Some(addr.wrapping_add(WORD_BYTES));
    }

    pub fn step(&mut self, prog: &CoreProgram) -> Result<StepOutcome, FrontendError> {
        let mut out = StepOutcome::default();
        if self.cursor >= prog.total() {
            return Ok(out);
        }
        if self.bubble > 0 {
            self.bubble -= 1;
            out.bubble = true;
        } else if self.count > 0 && self.slots[self.rd].ready {
            let index = self.cursor;
            let pc = prog.pc(index);
            let head = self.slots[self.rd].addr;
            if head != pc {
                return Err(FrontendError::OutOfOrder { head, pc });
            }
            out.retired = Some(Retired { index, pc, epoch: prog.epoch(index) });
            self.pop();
            let flow = prog.flow(index);
            self.cursor += 1;
            if flow.is_taken() && self.cursor < prog.total() {
                self.bubble = branch_penalty(flow, FrontendMode::Optimized);
                self.redirect(prog.pc(self.cursor));
            }
        } else {
            out.stalled = true;
        }
        if self.cursor < prog.total() {
            self.lookahead(prog);
        }
        Ok(out)
    }

    pub fn presented(&self) -> Option<FetchRequest> {
        self.outstanding
            .iter()
            .find(|o| !o.granted)
            .map(|o| FetchRequest { id: o.id, line: o.line, epoch: o.epoch })
    }

    pub fn grant(&mut self) -> Result<(), FrontendError> {
        let o = self.outstanding.iter_mut().find(|o| !o.granted).ok_or(FrontendError::SpuriousGrant)?;
        o.granted = true;
        Ok(())
    }

    pub fn deliver(&mut self, id: u64, line: u32) -> Result<(), FrontendError> {
        let pos = self
            .outstanding
            .iter()
            .position(|o| o.id == id && o.granted)
            .ok_or(FrontendError::UnknownResponse { id, line })?;
        let o = self.outstanding.remove(pos);
        if o.line != line {
            return Err(FrontendError::WrongLine { id, expected: o.line, found: line });
        }
        if !o.abandoned {
            self.l0 = Some(line);
            for k in 0..self.count {
                let slot = &mut self.slots[(self.rd + k) % RING_SLOTS];
                if line_of(slot.addr) == line {
                    slot.ready = true;
                }
            }
        }
        Ok(())
    }

    pub fn finished(&self, prog: &CoreProgram) -> bool {
        self.cursor >= prog.total()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }
}

/// Either fetch stage behind one interface.
#[derive(Debug, Clone)]
pub enum Frontend {
    Legacy(LegacyFetch),
    Optimized(RingFetch),
}

impl Frontend {
    pub fn new(mode: FrontendMode) -> Self {
        match mode {
            FrontendMode::Legacy => Frontend::Legacy(LegacyFetch::new()),
            FrontendMode::Optimized => Frontend::Optimized(RingFetch::new()),
        }
    }

    pub fn mode(&self) -> FrontendMode {
        match self {
            Frontend::Legacy(_) => FrontendMode::Legacy,
            Frontend::Optimized(_) => FrontendMode::Optimized,
        }
    }

    pub fn step(&mut self, prog: &CoreProgram) -> Result<StepOutcome, FrontendError> {
        match self {
            Frontend::Legacy(f) => Ok(f.step(prog)),
            Frontend::Optimized(f) => f.step(prog),
        }
    }

    pub fn presented(&self) -> Option<FetchRequest> {
        match self {
            Frontend::Legacy(f) => f.presented(),
            Frontend::Optimized(f) => f.presented(),
        }
    }

    pub fn grant(&mut self) -> Result<(), FrontendError> {
        match self {
            Frontend::Legacy(f) => f.grant(),
            Frontend::Optimized(f) => f.grant(),
        }
    }

    pub fn deliver(&mut self, id: u64, line: u32) -> Result<(), FrontendError> {
        match self {
            Frontend::Legacy(f) => f.deliver(id, line),
            Frontend::Optimized(f) => f.deliver(id, line),
        }
    }

    pub fn finished(&self, prog: &CoreProgram) -> bool {
        match self {
            Frontend::Legacy(f) => f.finished(prog),
            Frontend::Optimized(f) => f.finished(prog),
        }
    }

    pub fn cursor(&self) -> usize {
        match self {
            Frontend::Legacy(f) => f.cursor(),
            Frontend::Optimized(f) => f.cursor(),
        }
    }

    pub fn in_flight(&self) -> usize {
        match self {
            Frontend::Legacy(f) => f.in_flight(),
            Frontend::Optimized(f) => f.in_flight(),
        }
    }
}
