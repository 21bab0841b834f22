//! Multiply-add instrumentation.
//!
//! Every product kernel in [`Matrix`](super::Matrix) and the expert mixing
//! loop report their scalar multiply-add count here. Counting is off unless
//! a caller is inside [`count_madds`]; the counter is per thread so
//! concurrently running tests cannot pollute each other.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

#[inline]
pub(crate) fn record(n: u64) {
    COUNTER.with(|c| {
        if let Some(v) = c.get() {
            c.set(Some(v + n));
        }
    });
}

/// Runs `f` with counting enabled and returns its result with the number of
/// scalar multiply-adds it performed. Nested calls are not supported.
pub fn count_madds<R>(f: impl FnOnce() -> R) -> (R, u64) {
    COUNTER.with(|c| c.set(Some(0)));
    let out = f();
    let n = COUNTER.with(|c| c.replace(None)).unwrap_or(0);
    (out, n)
}
