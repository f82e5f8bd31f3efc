//! Labeled crash points for fault-injection tests.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    AfterRedo,
    AfterCommit,
    AfterFlushStart,
    BeforeNodeWrite,
    AfterNodeWrite,
    BeforeFlushEnd,
    AfterFlushEnd,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 7] = [
        CrashPoint::AfterRedo,
        CrashPoint::AfterCommit,
        CrashPoint::AfterFlushStart,
        CrashPoint::BeforeNodeWrite,
        CrashPoint::AfterNodeWrite,
        CrashPoint::BeforeFlushEnd,
        CrashPoint::AfterFlushEnd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CrashPoint::AfterRedo => "after-redo",
            CrashPoint::AfterCommit => "after-commit",
            CrashPoint::AfterFlushStart => "after-flush-start",
            CrashPoint::BeforeNodeWrite => "before-node-write",
            CrashPoint::AfterNodeWrite => "after-node-write",
            CrashPoint::BeforeFlushEnd => "before-flush-end",
            CrashPoint::AfterFlushEnd => "after-flush-end",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label() == s)
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap()
    }
}

/// Counts how often each point is passed and fails on the armed occurrence.
#[derive(Debug, Clone, Default)]
pub struct CrashInjector {
    armed: Option<(CrashPoint, u64)>,
    counts: [u64; 7],
}

impl CrashInjector {
    /// Crash on the `nth` (1-based) pass through `point`.
    pub fn arm(&mut self, point: CrashPoint, nth: u64) {
        self.armed = Some((point, nth));
    }

    pub fn disarm(&mut self) {
        self.armed = None;
    }

    pub fn count(&self, point: CrashPoint) -> u64 {
        self.counts[point.index()]
    }

    pub fn reset_counts(&mut self) {
        self.counts = [0; 7];
    }

    pub fn hit(&mut self, point: CrashPoint) -> Result<()> {
        let c = &mut self.counts[point.index()];
        *c += 1;
        match self.armed {
            Some((p, n)) if p == point && n == *c => {
                self.armed = None;
                Err(Error::Crashed(format!("{} #{n}", point.label())))
            }
            _ => Ok(()),
        }
    }
}
