//! Process-wide call counters used to prove the online path never touches
//! the offline machinery.

use std::sync::atomic::{AtomicU64, Ordering};

static SYNTHESIS_CALLS: AtomicU64 = AtomicU64::new(0);
static TRAINING_CALLS: AtomicU64 = AtomicU64::new(0);

pub(crate) fn record_synthesis() {
    SYNTHESIS_CALLS.fetch_add(1, Ordering::Relaxed);
}

pub(crate) fn record_training() {
    TRAINING_CALLS.fetch_add(1, Ordering::Relaxed);
}

/// Number of `synthesize` invocations since process start.
pub fn synthesis_calls() -> u64 {
    SYNTHESIS_CALLS.load(Ordering::Relaxed)
}

/// Number of `train` invocations since process start.
pub fn training_calls() -> u64 {
    TRAINING_CALLS.load(Ordering::Relaxed)
}
