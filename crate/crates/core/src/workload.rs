//! Per-core fetch traces: the record model, the text trace format and the
//! synthetic SPMD loop benchmark.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WORD_BYTES: u32 = 4;
pub const LINE_BYTES: u32 = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("core {core}: record at 0x{pc:08x} must be followed by 0x{expected:08x}, found 0x{found:08x}")]
    Successor { core: usize, pc: u32, expected: u32, found: u32 },
    #[error("core ids must be contiguous from 0; core {0} has no records")]
    MissingCore(usize),
    #[error("address 0x{0:08x} is not word aligned")]
    Misaligned(u32),
    #[error("invalid synthetic benchmark: {0}")]
    Synthetic(String),
    #[error("trace set is empty")]
    Empty,
}

/// Control-flow behaviour of one fetched instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowKind {
    Linear,
    Jump { target: u32 },
    CondTaken { target: u32 },
    CondNotTaken,
}

impl FlowKind {
    pub fn is_taken(&self) -> bool {
        matches!(self, FlowKind::Jump { .. } | FlowKind::CondTaken { .. })
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, FlowKind::CondTaken { .. } | FlowKind::CondNotTaken)
    }

    fn letter(&self) -> char {
        match self {
            FlowKind::Linear => 'L',
            FlowKind::Jump { .. } => 'J',
            FlowKind::CondTaken { .. } => 'B',
            FlowKind::CondNotTaken => 'N',
        }
    }

    fn target(&self) -> Option<u32> {
        match *self {
            FlowKind::Jump { target } | FlowKind::CondTaken { target } => Some(target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceRecord {
    pub pc: u32,
    pub kind: FlowKind,
}

impl TraceRecord {
    pub fn linear(pc: u32) -> Self {
        Self { pc, kind: FlowKind::Linear }
    }

    /// The pc the next record must carry.
    pub fn successor(&self) -> u32 {
        self.kind.target().unwrap_or(self.pc.wrapping_add(WORD_BYTES))
    }
}

pub fn line_of(addr: u32) -> u32 {
    addr & !(LINE_BYTES - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSet {
    pub per_core: Vec<Vec<TraceRecord>>,
    pub footprint_bytes: u32,
}

impl TraceSet {
    /// Validates every core's records and computes the footprint.
    pub fn new(per_core: Vec<Vec<TraceRecord>>) -> Result<Self, WorkloadError> {
        if per_core.is_empty() {
            return Err(WorkloadError::Empty);
        }
        for (core, records) in per_core.iter().enumerate() {
            if records.is_empty() {
                return Err(WorkloadError::MissingCore(core));
            }
            validate_core(core, records)?;
        }
        let footprint_bytes = footprint(&per_core);
        Ok(Self { per_core, footprint_bytes })
    }

    pub fn cores(&self) -> usize {
        self.per_core.len()
    }

    /// Serializes into the line-oriented text format read by [`parse_trace_file`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (core, records) in self.per_core.iter().enumerate() {
            for r in records {
                let _ = write!(out, "{core} 0x{:08X} {}", r.pc, r.kind.letter());
                if let Some(t) = r.kind.target() {
                    let _ = write!(out, " 0x{t:08X}");
                }
                out.push('\n');
            }
        }
        out
    }
}

fn validate_core(core: usize, records: &[TraceRecord]) -> Result<(), WorkloadError> {
    for r in records {
        if r.pc % WORD_BYTES != 0 {
            return Err(WorkloadError::Misaligned(r.pc));
        }
        if let Some(t) = r.kind.target() {
            if t % WORD_BYTES != 0 {
                return Err(WorkloadError::Misaligned(t));
            }
        }
    }
    for pair in records.windows(2) {
        let expected = pair[0].successor();
        if pair[1].pc != expected {
            return Err(WorkloadError::Successor { core, pc: pair[0].pc, expected, found: pair[1].pc });
        }
    }
    Ok(())
}

fn footprint(per_core: &[Vec<TraceRecord>]) -> u32 {
    let lines: BTreeSet<u32> = per_core.iter().flatten().map(|r| line_of(r.pc)).collect();
    lines.len() as u32 * LINE_BYTES
}

/// Parameters of the unrolled element-wise multiply loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub buffer_size: u32,
    pub total_cores: u32,
    pub step: u32,
    pub bytes_per_element: u32,
    pub iterations: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { buffer_size: 8192, total_cores: 8, step: 32, bytes_per_element: 12, iterations: 1 }
    }
}

impl SyntheticSpec {
    pub fn with_step(step: u32) -> Self {
        Self { step, ..Self::default() }
    }

    pub fn body_bytes(&self) -> u32 {
        self.step * self.bytes_per_element
    }

    pub fn loops_per_core(&self) -> u32 {
        self.buffer_size / self.total_cores / self.step
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::Synthetic(m));
        if self.total_cores == 0 || self.step == 0 || self.iterations == 0 {
            return bad("cores, step and iterations must be non-zero".into());
        }
        if self.bytes_per_element == 0 || self.bytes_per_element % WORD_BYTES != 0 {
            return bad(format!("bytes per element {} is not a whole number of words", self.bytes_per_element));
        }
        if self.buffer_size % self.total_cores != 0 {
            return bad(format!("buffer size {} not divisible by {} cores", self.buffer_size, self.total_cores));
        }
        let per_core = self.buffer_size / self.total_cores;
        if per_core == 0 || per_core % self.step != 0 {
            return bad(format!("step {} does not divide the {per_core} elements of each core", self.step));
        }
        Ok(())
    }
}

/// Builds the SPMD loop trace: every core runs the same body of straight-line
/// code closed by a backward conditional branch, not taken on the final pass.
pub fn generate_synthetic(spec: &SyntheticSpec, code_base: u32) -> Result<TraceSet, WorkloadError> {
    spec.validate()?;
    if code_base % LINE_BYTES != 0 {
        return Err(WorkloadError::Synthetic(format!("code base 0x{code_base:08x} is not line aligned")));
    }
    let body_words = spec.body_bytes() / WORD_BYTES;
    let branch_pc = code_base + spec.body_bytes();
    let passes = spec.loops_per_core() * spec.iterations;
    let mut trace = Vec::with_capacity((passes * (body_words + 1)) as usize);
    for pass in 0..passes {
        trace.extend((0..body_words).map(|i| TraceRecord::linear(code_base + i * WORD_BYTES)));
        let kind = if pass + 1 == passes {
            FlowKind::CondNotTaken
        } else {
            FlowKind::CondTaken { target: code_base }
        };
        trace.push(TraceRecord { pc: branch_pc, kind });
    }
    TraceSet::new(vec![trace; spec.total_cores as usize])
}

/// Reads the `<core> <pc> <L|J|B|N> [target]` text format.
pub fn parse_trace_file(text: &str) -> Result<TraceSet, WorkloadError> {
    let mut per_core: Vec<Vec<TraceRecord>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |msg: &str| WorkloadError::Malformed { line, msg: msg.to_string() };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(malformed("expected `<core> <pc> <kind> [target]`"));
        }
        let core: usize = fields[0].parse().map_err(|_| malformed("core id is not a decimal integer"))?;
        let pc = parse_hex(fields[1]).ok_or_else(|| malformed("pc is not a 0x-prefixed hex number"))?;
        let target = match fields.get(3) {
            Some(t) => Some(parse_hex(t).ok_or_else(|| malformed("target is not a 0x-prefixed hex number"))?),
            None => None,
        };
        let kind = match (fields[2], target) {
            ("L", None) => FlowKind::Linear,
            ("N", None) => FlowKind::CondNotTaken,
            ("J", Some(target)) => FlowKind::Jump { target },
            ("B", Some(target)) => FlowKind::CondTaken { target },
            ("L" | "N", Some(_)) => return Err(malformed("kinds L and N take no target")),
            ("J" | "B", None) => return Err(malformed("kinds J and B require a target")),
            _ => return Err(malformed("kind must be one of L, J, B, N")),
        };
        if pc % WORD_BYTES != 0 || target.is_some_and(|t| t % WORD_BYTES != 0) {
            return Err(malformed("addresses must be 4-byte aligned"));
        }
        if per_core.len() <= core {
            per_core.resize_with(core + 1, Vec::new);
        }
        per_core[core].push(TraceRecord { pc, kind });
    }
    TraceSet::new(per_core)
}

fn parse_hex(s: &str) -> Option<u32> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
    u32::from_str_radix(digits, 16).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub footprint_bytes: u32,
    /// Conditional branches (taken or not) per record.
    pub branch_density: f64,
    /// Unconditional jumps per record.
    pub jump_density: f64,
}

pub fn trace_stats(t: &TraceSet) -> TraceStats {
    let all = t.per_core.iter().flatten();
    let (mut total, mut branches, mut jumps) = (0usize, 0usize, 0usize);
    for r in all {
        total += 1;
        branches += r.kind.is_conditional() as usize;
        jumps += matches!(r.kind, FlowKind::Jump { .. }) as usize;
    }
    let total = total.max(1) as f64;
    TraceStats {
        footprint_bytes: t.footprint_bytes,
        branch_density: branches as f64 / total,
        jump_density: jumps as f64 / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_to_body_size() {
        let sizes: Vec<u32> =
            [32, 64, 128, 256, 512, 1024].iter().map(|s| SyntheticSpec::with_step(*s).body_bytes()).collect();
        assert_eq!(sizes, vec![384, 768, 1536, 3072, 6144, 12288]);
    }

    #[test]
    fn step32_loop_count_and_shape() {
        let spec = SyntheticSpec::with_step(32);
        let t = generate_synthetic(&spec, 0).unwrap();
        assert_eq!(t.cores(), 8);
        let core = &t.per_core[0];
        assert_eq!(core.len(), 32 * 97);
        let taken = core.iter().filter(|r| matches!(r.kind, FlowKind::CondTaken { .. })).count();
        assert_eq!(taken, 31);
        assert_eq!(core.last().unwrap().kind, FlowKind::CondNotTaken);
        assert_eq!(core[96], TraceRecord { pc: 384, kind: FlowKind::CondTaken { target: 0 } });
        assert!(t.per_core.iter().all(|c| c == core));
        assert_eq!(t.footprint_bytes, 400);
    }

    #[test]
    fn step64_footprint_between_capacities() {
        let t = generate_synthetic(&SyntheticSpec::with_step(64), 0x1000).unwrap();
        assert_eq!(t.footprint_bytes, 784);
        assert!(t.footprint_bytes > 512 && t.footprint_bytes < 4096);
    }

    #[test]
    fn synthetic_rejects_bad_inputs() {
        assert!(generate_synthetic(&SyntheticSpec::with_step(32), 8).is_err());
        assert!(generate_synthetic(&SyntheticSpec::with_step(48), 0).is_err());
        let spec = SyntheticSpec { total_cores: 3, ..SyntheticSpec::default() };
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn parse_examples() {
        let t = parse_trace_file("0 0x000000B0 L\n").unwrap();
        assert_eq!(t.per_core[0], vec![TraceRecord::linear(0xB0)]);

        let t = parse_trace_file("# loop\n0 0x000000C0 B 0x000000D0\n0 0x000000D0 L\n").unwrap();
        assert_eq!(t.per_core[0][0].kind, FlowKind::CondTaken { target: 0xD0 });

        let err = parse_trace_file("0 0x000000C0 L\n0 0x000000D0 L\n").unwrap_err();
        assert_eq!(err, WorkloadError::Successor { core: 0, pc: 0xC0, expected: 0xC4, found: 0xD0 });
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_trace_file("0 0x0 L\n0 0x4 Q\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Malformed { line: 2, .. }));
        let err = parse_trace_file("0 0x0 J\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Malformed { line: 1, .. }));
        let err = parse_trace_file("0 0x0 L 0x10\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Malformed { line: 1, .. }));
        let err = parse_trace_file("0 0x2 L\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Malformed { line: 1, .. }));
        assert_eq!(parse_trace_file("1 0x0 L\n").unwrap_err(), WorkloadError::MissingCore(0));
        assert_eq!(parse_trace_file("# nothing\n").unwrap_err(), WorkloadError::Empty);
    }

    #[test]
    fn stats_examples() {
        let t = generate_synthetic(&SyntheticSpec::with_step(32), 0).unwrap();
        let s = trace_stats(&t);
        assert!((s.branch_density - 1.0 / 97.0).abs() < 1e-15);
        assert_eq!(s.jump_density, 0.0);

        let linear = TraceSet::new(vec![(0..8).map(|i| TraceRecord::linear(i * 4)).collect()]).unwrap();
        let s = trace_stats(&linear);
        assert_eq!((s.branch_density, s.jump_density), (0.0, 0.0));

        let alternating = TraceSet::new(vec![vec![
            TraceRecord::linear(0),
            TraceRecord { pc: 4, kind: FlowKind::Jump { target: 0x40 } },
            TraceRecord::linear(0x40),
            TraceRecord { pc: 0x44, kind: FlowKind::Jump { target: 0x80 } },
        ]])
        .unwrap();
        assert_eq!(trace_stats(&alternating).jump_density, 0.5);
    }

    #[test]
    fn text_round_trip() {
        let t = generate_synthetic(&SyntheticSpec { buffer_size: 512, ..SyntheticSpec::default() }, 0x80).unwrap();
        assert_eq!(parse_trace_file(&t.to_text()).unwrap(), t);
    }
}
