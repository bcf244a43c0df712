//! Crash-point bookkeeping.
//!
//! Every atomic simulator step that touches persistent or architectural
//! state first calls [`CrashCtl::point`]. The call numbers the step and, if a
//! crash was scheduled for that index, refuses it: the step never happens and
//! the caller unwinds with [`Crashed`].

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// A store into a cache line (eADR makes cached data durable).
    Store,
    GlobalTxId,
    CoreRegisters,
    ProfileWrite,
    HomeWrite,
    LogEntryWrite,
    LogHeadAdvance,
    LogTailAdvance,
    EwpqInsert,
    EwpqNullify,
    EwpqToggle,
    ExtensionWrite,
    TagToggle,
    TagInvalidate,
    Migration,
    ValidityClear,
    GcCopy,
    GcRemap,
    RecoveryMigrate,
    RecoveryReset,
    RecoveryClear,
}

/// Returned when a scheduled crash point is reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crashed {
    pub event_index: u64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default)]
pub struct CrashCtl {
    next: u64,
    crash_at: Option<u64>,
    trace: Option<Vec<EventKind>>,
    /// (event index, tx id) of every profile write that set a nonzero TxLen.
    commits: Vec<(u64, u32)>,
}

impl CrashCtl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn crash_at(index: u64) -> Self {
        CrashCtl { crash_at: Some(index), ..Self::default() }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn schedule(&mut self, index: Option<u64>) {
        self.crash_at = index;
    }

    /// Number of points passed so far.
    pub fn events(&self) -> u64 {
        self.next
    }

    pub fn trace(&self) -> Option<&[EventKind]> {
        self.trace.as_deref()
    }

    pub fn point(&mut self, kind: EventKind) -> Result<(), Crashed> {
        let idx = self.next;
        if self.crash_at == Some(idx) {
            return Err(Crashed { event_index: idx, kind });
        }
        self.next += 1;
        if let Some(t) = self.trace.as_mut() {
            t.push(kind);
        }
        Ok(())
    }

    pub(crate) fn note_commit(&mut self, tx_id: u32) {
        self.commits.push((self.next.saturating_sub(1), tx_id));
    }

    /// TxLen writes that landed, in order.
    pub fn landed_commits(&self) -> &[(u64, u32)] {
        &self.commits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crash_refuses_exact_index() {
        let mut c = CrashCtl::crash_at(2);
        assert!(c.point(EventKind::HomeWrite).is_ok());
        assert!(c.point(EventKind::HomeWrite).is_ok());
        let e = c.point(EventKind::ProfileWrite).unwrap_err();
        assert_eq!(e.event_index, 2);
        assert_eq!(e.kind, EventKind::ProfileWrite);
        assert_eq!(c.events(), 2);
    }

    #[test]
    fn trace_records_kinds() {
        let mut c = CrashCtl::new().with_trace();
        c.point(EventKind::GlobalTxId).unwrap();
        c.point(EventKind::ProfileWrite).unwrap();
        assert_eq!(c.trace().unwrap(), &[EventKind::GlobalTxId, EventKind::ProfileWrite]);
    }
}
