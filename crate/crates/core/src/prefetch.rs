//! Next-line prefetch control for a private L1 in front of the shared L1.5.
//!
//! The unit owns a single-line prefetch buffer. A line only enters the L1 once
//! a fetch has consumed it, so lines fetched down an abandoned path are never
//! installed.

use thiserror::Error;

use crate::cache::Lookup;
use crate::workload::LINE_BYTES;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrefetchError {
    #[error("prefetch response for 0x{found:08x} while 0x{expected:08x} was pending")]
    WrongLine { expected: u32, found: u32 },
    #[error("prefetch response for 0x{0:08x} without a pending prefetch")]
    NotPending(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchPhase {
    Idle,
    /// A request for `addr` is decided or in flight. `abandoned` means a branch
    /// left its path; `claimed` means a missing fetch waits for it.
    Pending { addr: u32, abandoned: bool, claimed: bool },
    Valid { addr: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Issue(u32),
    Filtered,
    Busy,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    HitBuffer,
    WaitUnfinished,
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseOutcome {
    /// Kept in the buffer, not yet installed.
    Buffered,
    /// A waiting fetch claimed it: respond and install now.
    Claimed,
    /// Its path was abandoned; thrown away.
    Discarded,
}

#[derive(Debug, Clone)]
pub struct PrefetchUnit {
    phase: PrefetchPhase,
    last_fetch: Option<u32>,
    enabled: bool,
    /// Next-line target remembered while busy, issued once the unit frees up.
    deferred: Option<u32>,
    /// Decided but not yet presented to the port.
    queued: Option<u32>,
}

impl PrefetchUnit {
    pub fn new(enabled: bool) -> Self {
        Self { phase: PrefetchPhase::Idle, last_fetch: None, enabled, deferred: None, queued: None }
    }

    pub fn phase(&self) -> PrefetchPhase {
        self.phase
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn queued(&self) -> Option<u32> {
        self.queued
    }

    /// Records a fetch reaching the L1 and reports whether it broke the
    /// sequential stream. On a break, stale buffered data is dropped.
    pub fn observe_fetch(&mut self, line: u32) -> bool {
        let branch = match self.last_fetch {
            Some(last) => line != last && line != last.wrapping_add(LINE_BYTES),
            None => false,
        };
        self.last_fetch = Some(line);
        if branch {
            self.on_branch(line);
        }
        branch
    }

    pub fn on_branch(&mut self, target: u32) {
        match &mut self.phase {
            PrefetchPhase::Valid { addr } if *addr != target => self.phase = PrefetchPhase::Idle,
            PrefetchPhase::Pending { addr, abandoned, claimed } if *addr != target && !*claimed => {
                *abandoned = true;
                self.deferred = None;
            }
            _ => {}
        }
        if let Some(q) = self.queued {
            if q != target && matches!(self.phase, PrefetchPhase::Pending { abandoned: true, .. }) {
                // Not yet presented: nothing to wait for.
                self.queued = None;
                self.phase = PrefetchPhase::Idle;
            }
        }
    }

    /// Chooses what to do after a fetch of `fetch_line`; `next_line` is the
    /// second tag port's lookup of the following line.
    pub fn decide(&mut self, fetch_line: u32, next_line: Lookup) -> Decision {
        if !self.enabled {
            return Decision::Disabled;
        }
        let target = fetch_line.wrapping_add(LINE_BYTES);
        match self.phase {
            PrefetchPhase::Pending { addr, abandoned, .. } => {
                if abandoned || addr != target {
                    self.deferred = Some(target);
                }
                return Decision::Busy;
            }
            PrefetchPhase::Valid { addr } if addr == target => return Decision::Filtered,
            _ => {}
        }
        if next_line.is_hit() {
            return Decision::Filtered;
        }
        self.phase = PrefetchPhase::Pending { addr: target, abandoned: false, claimed: false };
        self.queued = Some(target);
        Decision::Issue(target)
    }

    pub fn matches(&self, fetch_line: u32) -> MatchOutcome {
        match self.phase {
            PrefetchPhase::Valid { addr } if addr == fetch_line => MatchOutcome::HitBuffer,
            PrefetchPhase::Pending { addr, abandoned: false, .. } if addr == fetch_line => MatchOutcome::WaitUnfinished,
            _ => MatchOutcome::NoMatch,
        }
    }

    /// Hands the buffered line to a fetch; the caller installs it.
    pub fn consume_buffer(&mut self) -> Option<u32> {
        match self.phase {
            PrefetchPhase::Valid { addr } => {
                self.phase = PrefetchPhase::Idle;
                Some(addr)
            }
            _ => None,
        }
    }

    pub fn claim(&mut self) -> bool {
        match &mut self.phase {
            PrefetchPhase::Pending { abandoned: false, claimed, .. } => {
                *claimed = true;
                true
            }
            _ => false,
        }
    }

    pub fn is_claimed(&self) -> bool {
        matches!(self.phase, PrefetchPhase::Pending { claimed: true, .. })
    }

    /// Takes the request to present this cycle.
    pub fn take_queued(&mut self) -> Option<u32> {
        self.queued.take()
    }

    /// Puts an unpresented request back (port busy with a fetch this cycle).
    pub fn requeue(&mut self, line: u32) {
        self.queued = Some(line);
    }

    /// Drops the decided request before it was sent (probe filter hit at
    /// presentation). Returns whether a fetch was waiting on it.
    pub fn cancel(&mut self) -> bool {
        let claimed = self.is_claimed();
        self.queued = None;
        self.phase = PrefetchPhase::Idle;
        claimed
    }

    pub fn on_response(&mut self, line: u32) -> Result<ResponseOutcome, PrefetchError> {
        match self.phase {
            PrefetchPhase::Pending { addr, abandoned, claimed } => {
                if addr != line {
                    return Err(PrefetchError::WrongLine { expected: addr, found: line });
                }
                if abandoned {
                    self.phase = PrefetchPhase::Idle;
                    Ok(ResponseOutcome::Discarded)
                } else if claimed {
                    self.phase = PrefetchPhase::Idle;
                    Ok(ResponseOutcome::Claimed)
                } else {
                    self.phase = PrefetchPhase::Valid { addr };
                    Ok(ResponseOutcome::Buffered)
                }
            }
            _ => Err(PrefetchError::NotPending(line)),
        }
    }

    /// The response was lost to a same-cycle fetch response. Returns whether a
    /// fetch was waiting on it.
    pub fn drop_response(&mut self) -> bool {
        let claimed = self.is_claimed();
        self.phase = PrefetchPhase::Idle;
        claimed
    }

    /// Once the unit is free again, turns a remembered restart into a request.
    pub fn restart_deferred(&mut self) -> Option<u32> {
        if matches!(self.phase, PrefetchPhase::Pending { .. }) {
            return None;
        }
        let target = self.deferred.take()?;
        if matches!(self.phase, PrefetchPhase::Valid { addr } if addr == target) {
            return None;
        }
        self.phase = PrefetchPhase::Pending { addr: target, abandoned: false, claimed: false };
        self.queued = Some(target);
        Some(target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_examples() {
        let mut u = PrefetchUnit::new(true);
        assert_eq!(u.decide(0xB0, Lookup::Miss), Decision::Issue(0xC0));
        assert_eq!(u.phase(), PrefetchPhase::Pending { addr: 0xC0, abandoned: false, claimed: false });
        assert_eq!(u.decide(0xB0, Lookup::Miss), Decision::Busy);

        let mut u = PrefetchUnit::new(true);
        assert_eq!(u.decide(0xB0, Lookup::Hit { way: 2 }), Decision::Filtered);
        assert_eq!(PrefetchUnit::new(false).decide(0xB0, Lookup::Miss), Decision::Disabled);
    }

    #[test]
    fn valid_buffer_filters_its_own_line() {
        let mut u = PrefetchUnit::new(true);
        u.decide(0xB0, Lookup::Miss);
        assert_eq!(u.take_queued(), Some(0xC0));
        assert_eq!(u.on_response(0xC0), Ok(ResponseOutcome::Buffered));
        assert_eq!(u.decide(0xB0, Lookup::Miss), Decision::Filtered);
    }

    #[test]
    fn match_examples() {
        let mut u = PrefetchUnit::new(true);
        u.decide(0xB0, Lookup::Miss);
        assert_eq!(u.matches(0xC0), MatchOutcome::WaitUnfinished);
        u.on_response(0xC0).unwrap();
        assert_eq!(u.matches(0xC0), MatchOutcome::HitBuffer);
        assert_eq!(u.matches(0xE0), MatchOutcome::NoMatch);
        assert_eq!(u.consume_buffer(), Some(0xC0));
        assert_eq!(u.phase(), PrefetchPhase::Idle);
    }

    #[test]
    fn branch_discards_valid_buffer() {
        let mut u = PrefetchUnit::new(true);
        u.observe_fetch(0xB0);
        u.decide(0xB0, Lookup::Miss);
        u.take_queued();
        u.on_response(0xC0).unwrap();
        assert!(u.observe_fetch(0x200));
        assert_eq!(u.phase(), PrefetchPhase::Idle);
        assert_eq!(u.consume_buffer(), None);
    }

    #[test]
    fn branch_while_pending_discards_response_then_restarts() {
        let mut u = PrefetchUnit::new(true);
        u.observe_fetch(0xA0);
        assert_eq!(u.decide(0xA0, Lookup::Miss), Decision::Issue(0xB0));
        u.take_queued();
        assert!(u.observe_fetch(0xC0));
        assert_eq!(u.decide(0xC0, Lookup::Miss), Decision::Busy);
        assert_eq!(u.matches(0xB0), MatchOutcome::NoMatch);
        assert_eq!(u.on_response(0xB0), Ok(ResponseOutcome::Discarded));
        assert_eq!(u.restart_deferred(), Some(0xD0));
        assert_eq!(u.take_queued(), Some(0xD0));
    }

    #[test]
    fn sequential_fetches_are_not_branches() {
        let mut u = PrefetchUnit::new(true);
        assert!(!u.observe_fetch(0xB0));
        assert!(!u.observe_fetch(0xB0));
        assert!(!u.observe_fetch(0xC0));
        assert!(u.observe_fetch(0xB0));
    }

    #[test]
    fn claimed_prefetch_survives_branch() {
        let mut u = PrefetchUnit::new(true);
        u.observe_fetch(0xB0);
        u.decide(0xB0, Lookup::Miss);
        u.take_queued();
        u.observe_fetch(0xC0);
        assert_eq!(u.matches(0xC0), MatchOutcome::WaitUnfinished);
        assert!(u.claim());
        u.observe_fetch(0x400);
        assert_eq!(u.on_response(0xC0), Ok(ResponseOutcome::Claimed));
    }

    #[test]
    fn protocol_errors() {
        let mut u = PrefetchUnit::new(true);
        assert_eq!(u.on_response(0x40), Err(PrefetchError::NotPending(0x40)));
        u.decide(0x30, Lookup::Miss);
        assert_eq!(u.on_response(0x50), Err(PrefetchError::WrongLine { expected: 0x40, found: 0x50 }));
    }

    #[test]
    fn dropped_claim_is_reported() {
        let mut u = PrefetchUnit::new(true);
        u.decide(0x30, Lookup::Miss);
        u.claim();
        assert!(u.drop_response());
        assert_eq!(u.phase(), PrefetchPhase::Idle);
    }
}
