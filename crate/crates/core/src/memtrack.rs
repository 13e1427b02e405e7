//! Instrumented accounting of basis-block allocations.
//!
//! The streaming contract is that no basis buffer larger than
//! `block rows x L_p` is ever live, no matter how large the dataset is. Every
//! term-block allocation registers here; tests and the fit pipeline read the
//! peaks back out.

use std::sync::atomic::{AtomicUsize, Ordering};

static LIVE_ENTRIES: AtomicUsize = AtomicUsize::new(0);
static PEAK_LIVE_ENTRIES: AtomicUsize = AtomicUsize::new(0);
static PEAK_SINGLE_ENTRIES: AtomicUsize = AtomicUsize::new(0);
static MAX_ROWS: AtomicUsize = AtomicUsize::new(0);

/// RAII registration of one basis buffer; drops release the live count.
#[derive(Debug)]
pub struct BasisAllocation {
    entries: usize,
}

pub fn track_basis(rows: usize, cols: usize) -> BasisAllocation {
    let entries = rows * cols;
    let live = LIVE_ENTRIES.fetch_add(entries, Ordering::SeqCst) + entries;
    PEAK_LIVE_ENTRIES.fetch_max(live, Ordering::SeqCst);
    PEAK_SINGLE_ENTRIES.fetch_max(entries, Ordering::SeqCst);
    MAX_ROWS.fetch_max(rows, Ordering::SeqCst);
    BasisAllocation { entries }
}

impl Drop for BasisAllocation {
    fn drop(&mut self) {
        LIVE_ENTRIES.fetch_sub(self.entries, Ordering::SeqCst);
    }
}

/// Snapshot of the allocation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemStats {
    /// Largest single basis buffer seen, in f64 entries.
    pub peak_single_entries: usize,
    /// Largest total of simultaneously live basis entries.
    pub peak_live_entries: usize,
    /// Largest row count of any basis buffer.
    pub max_rows: usize,
    /// Basis entries currently live.
    pub live_entries: usize,
}

pub fn stats() -> MemStats {
    MemStats {
        peak_single_entries: PEAK_SINGLE_ENTRIES.load(Ordering::SeqCst),
        peak_live_entries: PEAK_LIVE_ENTRIES.load(Ordering::SeqCst),
        max_rows: MAX_ROWS.load(Ordering::SeqCst),
        live_entries: LIVE_ENTRIES.load(Ordering::SeqCst),
    }
}

/// Resets the peak counters (live counts are left to their owners).
pub fn reset() {
    PEAK_SINGLE_ENTRIES.store(0, Ordering::SeqCst);
    PEAK_LIVE_ENTRIES.store(LIVE_ENTRIES.load(Ordering::SeqCst), Ordering::SeqCst);
    MAX_ROWS.store(0, Ordering::SeqCst);
}
