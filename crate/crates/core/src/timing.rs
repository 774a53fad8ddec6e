//! Clock helpers shared by calibration and benchmarking.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

/// Timings shorter than this many clock ticks are rejected.
pub const MIN_RESOLVED_TICKS: f64 = 100.0;

/// Smallest nonzero step observed on the monotonic clock, in seconds.
/// Measured once per process.
pub fn clock_resolution() -> f64 {
    static RES: OnceLock<f64> = OnceLock::new();
    *RES.get_or_init(|| {
        let mut best = Duration::MAX;
        for _ in 0..200 {
            let t0 = Instant::now();
            let mut t1 = Instant::now();
            while t1 == t0 {
                t1 = Instant::now();
            }
            best = best.min(t1 - t0);
        }
        best.as_secs_f64().max(1e-9)
    })
}

/// Shortest interval that counts as resolved: 100 × clock resolution.
pub fn min_resolvable() -> f64 {
    MIN_RESOLVED_TICKS * clock_resolution()
}

pub fn best(times: &[f64]) -> f64 {
    times.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Median of `times`; the mean of the two middle values for even counts.
pub fn median(times: &[f64]) -> f64 {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Seconds taken by `f`.
pub fn time<R>(f: impl FnOnce() -> R) -> (f64, R) {
    let t0 = Instant::now();
    let r = f();
    (t0.elapsed().as_secs_f64(), r)
}
