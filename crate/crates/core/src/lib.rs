//! Performance-engineering workbench for a small family of linear-algebra
//! kernels.
//!
//! The crate ties four things together:
//!
//! * [`kernels`]: a registry of kernels behind a swappable [`kernels::Backend`]
//!   trait, each with closed-form flop and byte-traffic counts and an
//!   instrumented traffic oracle that checks those counts.
//! * [`machine`] and [`roofline`]: a calibrated machine model (achievable peak
//!   flop rates and bandwidths at a ladder of working-set sizes) and the
//!   roofline assessment that turns a timing into a machine-independent
//!   efficiency under realistic or idealized traffic.
//! * [`bench`]: the timing harness producing measurements and result sets.
//! * [`simgroup`] and [`partest`]: simulated in-process ranks with
//!   deterministic collectives, and a combinatorial test-matrix runner with
//!   collective assertions.

pub mod bench;
pub mod kernels;
pub mod machine;
pub mod partest;
pub mod plot;
pub mod roofline;
pub mod simgroup;
pub mod timing;

/// Default seed for generated benchmark and test data.
pub const DEFAULT_SEED: u64 = 42;

/// Environment variable overriding [`DEFAULT_SEED`].
pub const SEED_ENV: &str = "HPCWB_SEED";

/// Resolves the data seed: `HPCWB_SEED` if set and parseable, otherwise the default.
pub fn default_seed() -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_SEED)
}
