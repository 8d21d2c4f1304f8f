//! Bracketed bisection for monotone functions.

use std::cmp::Ordering;

/// Bisection on `[lo, hi]` where `probe(x)` reports how the monotone function at `x`
/// compares with its target (`Less`: root lies to the right).
///
/// Stops once the bracket is at most `tol` wide, after `max_iter` halvings, or when the
/// midpoint can no longer be represented strictly inside the bracket. Returns the
/// midpoint of the final bracket, or the probe point itself on an exact hit.
pub fn bisect<F>(mut lo: f64, mut hi: f64, tol: f64, max_iter: u32, mut probe: F) -> f64
where
    F: FnMut(f64) -> Ordering,
{
    debug_assert!(lo <= hi);
    let mut iter = 0;
    while hi - lo > tol && iter < max_iter {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        match probe(mid) {
            Ordering::Less => lo = mid,
            Ordering::Greater => hi = mid,
            Ordering::Equal => return mid,
        }
        iter += 1;
    }
    lo + 0.5 * (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(a: f64, b: f64) -> Ordering {
        a.partial_cmp(&b).unwrap()
    }

    #[test]
    fn finds_square_root() {
        let r = bisect(0.0, 2.0, 1e-14, 200, |x| cmp(x * x, 2.0));
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn exact_hit_returns_probe() {
        let r = bisect(-8.0, 8.0, 1e-12, 200, |x| cmp(x, 0.0));
        assert_eq!(r, 0.0);
    }

    #[test]
    fn terminates_below_ulp_resolution() {
        let r = bisect(1e6, 2e6, 1e-300, 10_000, |x| cmp(x, 1.5e6 + 1e-4));
        assert!((r - (1.5e6 + 1e-4)).abs() < 1e-9);
    }

    #[test]
    fn respects_iteration_cap() {
        let mut calls = 0;
        bisect(0.0, 1.0, 0.0, 5, |x| {
            calls += 1;
            cmp(x, 0.3)
        });
        assert_eq!(calls, 5);
    }
}
