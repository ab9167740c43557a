//! Polynomial-basis evaluation counter.
//!
//! Every map kernel records how many multivariate basis functions (or their
//! derivatives) it evaluated. The count is a hardware-independent measure of
//! online cost. Counters are thread-local, so concurrent workers never mix
//! their tallies; use [`measure`] to attribute work to a closure.

use std::cell::Cell;

thread_local! {
    static BASIS_EVALS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn record(n: u64) {
    BASIS_EVALS.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Running total for the current thread.
pub fn current() -> u64 {
    BASIS_EVALS.with(Cell::get)
}

/// Runs `f` and returns its result together with the basis evaluations it
/// performed on this thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let start = current();
    let out = f();
    (out, current().wrapping_sub(start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_is_scoped() {
        record(5);
        let ((), n) = measure(|| {
            record(3);
            record(4);
        });
        assert_eq!(n, 7);
        let ((), inner) = measure(|| {
            let ((), nested) = measure(|| record(2));
            assert_eq!(nested, 2);
            record(1);
        });
        assert_eq!(inner, 3);
    }
}
