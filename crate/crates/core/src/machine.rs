//! Machine model: achievable peak flop rates per precision and triad
//! bandwidths at a ladder of working-set sizes, calibrated on the running
//! machine and persisted as JSON.

use std::fs;
use std::hint::black_box;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{Precision, Real};
use crate::timing;

/// Smallest working set accepted for bandwidth calibration.
pub const MIN_WORKING_SET: u64 = 4 * 1024;
pub const MIN_CALIBRATION_REPS: usize = 3;
pub const MIN_CHAINS: usize = 8;

/// Default working-set ladder: 16 KiB, 256 KiB, 8 MiB, 512 MiB.
pub const DEFAULT_WORKING_SETS: [u64; 4] = [16 << 10, 256 << 10, 8 << 20, 512 << 20];

/// Accesses counted per triad element: read `b`, read `c`, write `a`, and the
/// write-allocate read of `a`.
pub const TRIAD_ACCESSES: u64 = 4;

const TRIAD_ELEMENT_BYTES: u64 = 8;
const MAX_INNER_PASSES: u64 = 1 << 24;
const TARGET_INTERVAL_S: f64 = 2e-4;

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("could not allocate {0} bytes")]
    AllocationFailure(u64),
    #[error("timed interval {elapsed:.3e} s is below 100 x clock resolution ({resolution:.3e} s)")]
    ClockResolution { elapsed: f64, resolution: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelKind {
    #[serde(rename = "cache")]
    Cache,
    #[serde(rename = "memory")]
    Memory,
    /// Stored for completeness; never selected for an assessment.
    #[serde(rename = "network-reserved")]
    NetworkReserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthLevel {
    pub name: String,
    pub working_set_bytes: u64,
    pub bandwidth_bytes_per_s: f64,
    pub kind: LevelKind,
}

/// Achievable peak flop rates, keyed `f32`/`f64` in the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peaks {
    #[serde(rename = "f32")]
    pub single: f64,
    #[serde(rename = "f64")]
    pub double: f64,
}

impl Peaks {
    pub fn get(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Single => self.single,
            Precision::Double => self.double,
        }
    }

    pub fn set(&mut self, precision: Precision, value: f64) {
        match precision {
            Precision::Single => self.single = value,
            Precision::Double => self.double = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineModel {
    pub name: String,
    /// ISO-8601 timestamp.
    pub created: String,
    pub peaks: Peaks,
    /// Strictly increasing by working-set size.
    pub levels: Vec<BandwidthLevel>,
    pub notes: String,
}

impl MachineModel {
    pub fn new(name: impl Into<String>, peaks: Peaks, levels: Vec<BandwidthLevel>) -> Result<Self, MachineError> {
        let model = Self {
            name: name.into(),
            created: now_iso8601(),
            peaks,
            levels,
            notes: String::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn peak(&self, precision: Precision) -> f64 {
        self.peaks.get(precision)
    }

    pub fn level(&self, name: &str) -> Option<&BandwidthLevel> {
        self.levels.iter().find(|l| l.name == name)
    }

    /// Levels a roofline may be evaluated against (everything but network slots).
    pub fn assessable_levels(&self) -> impl Iterator<Item = &BandwidthLevel> {
        self.levels
            .iter()
            .filter(|l| l.kind != LevelKind::NetworkReserved)
    }

    /// Multiplies every peak and bandwidth by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.peaks.single *= factor;
        m.peaks.double *= factor;
        for l in &mut m.levels {
            l.bandwidth_bytes_per_s *= factor;
        }
        m
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        let inv = |msg: String| Err(MachineError::Invariant(msg));
        if chrono::DateTime::parse_from_rfc3339(&self.created).is_err() {
            return inv(format!("created `{}` is not an ISO-8601 timestamp", self.created));
        }
        for (key, v) in [("peaks.f32", self.peaks.single), ("peaks.f64", self.peaks.double)] {
            if !(v.is_finite() && v > 0.0) {
                return inv(format!("{key} must be positive and finite, got {v}"));
            }
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.working_set_bytes == 0 {
                return inv(format!("levels[{i}].working_set_bytes must be positive"));
            }
            if !(l.bandwidth_bytes_per_s.is_finite() && l.bandwidth_bytes_per_s > 0.0) {
                return inv(format!(
                    "levels[{i}].bandwidth_bytes_per_s must be positive and finite, got {}",
                    l.bandwidth_bytes_per_s
                ));
            }
            if self.levels[..i].iter().any(|o| o.name == l.name) {
                return inv(format!("levels[{i}].name `{}` is not unique", l.name));
            }
        }
        if let Some(i) = self
            .levels
            .windows(2)
            .position(|w| w[0].working_set_bytes >= w[1].working_set_bytes)
        {
            return inv(format!(
                "levels must be ordered by strictly increasing working_set_bytes (levels[{}] = {} >= levels[{}] = {})",
                i,
                self.levels[i].working_set_bytes,
                i + 1,
                self.levels[i + 1].working_set_bytes
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MachineError> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).map_err(|e| MachineError::Schema {
            path: ".".into(),
            message: e.to_string(),
        })?;
        // self-check: the emitted document must load back to this model
        let back = Self::from_json(&text)?;
        if &back != self {
            return Err(MachineError::Invariant("model does not survive a JSON round trip".into()));
        }
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, MachineError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let model: Self = serde_path_to_error::deserialize(de).map_err(|e| MachineError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &MachineModel, path: impl AsRef<Path>) -> Result<(), MachineError> {
    let path = path.as_ref();
    let text = model.to_json()?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MachineModel, MachineError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    MachineModel::from_json(&text)
}

fn io_error(path: &Path, e: std::io::Error) -> MachineError {
    MachineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Bytes one triad pass over `n` elements is charged for.
pub fn triad_counted_bytes(n: u64, element_bytes: u64) -> u64 {
    TRIAD_ACCESSES * element_bytes * n
}

pub fn bandwidth_from(counted_bytes: u64, best_time: f64) -> f64 {
    counted_bytes as f64 / best_time
}

/// Flop rate of `multiply_adds` multiply-add operations (2 flops each).
pub fn flops_rate(multiply_adds: f64, seconds: f64) -> f64 {
    2.0 * multiply_adds / seconds
}

/// One calibrated bandwidth level plus the statistics behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSample {
    pub level: BandwidthLevel,
    /// Elements per triad array.
    pub elements: u64,
    pub counted_bytes_per_pass: u64,
    /// Best and median seconds per pass.
    pub best_time: f64,
    pub median_time: f64,
    /// Passes per timed interval.
    pub inner_passes: u64,
}

/// Runs the triad `a[i] = b[i] + s·c[i]` at each working-set size and reports
/// `counted_bytes / best_time`. Sizes are sorted; the largest becomes the
/// `MEM` level and the others `L1`, `L2`, ... cache levels.
pub fn calibrate_bandwidth(working_sets: &[u64], reps: usize) -> Result<Vec<BandwidthSample>, MachineError> {
    if reps < MIN_CALIBRATION_REPS {
        return Err(MachineError::Precondition(format!(
            "reps must be >= {MIN_CALIBRATION_REPS}, got {reps}"
        )));
    }
    if working_sets.is_empty() {
        return Err(MachineError::Precondition("no working-set sizes given".into()));
    }
    if let Some(s) = working_sets.iter().find(|&&s| s < MIN_WORKING_SET) {
        return Err(MachineError::Precondition(format!(
            "working set {s} bytes is below the {MIN_WORKING_SET}-byte minimum"
        )));
    }
    let mut sizes = working_sets.to_vec();
    sizes.sort_unstable();
    if sizes.windows(2).any(|w| w[0] == w[1]) {
        return Err(MachineError::Precondition("working-set sizes must be distinct".into()));
    }

    let count = sizes.len();
    sizes
        .iter()
        .enumerate()
        .map(|(i, &ws)| {
            let (name, kind) = if i + 1 == count {
                ("MEM".to_string(), LevelKind::Memory)
            } else {
                (format!("L{}", i + 1), LevelKind::Cache)
            };
            triad_sample(ws, reps, name, kind)
        })
        .collect()
}

fn alloc_array(n: usize, fill: f64) -> Result<Vec<f64>, MachineError> {
    let mut v = Vec::new();
    v.try_reserve_exact(n)
        .map_err(|_| MachineError::AllocationFailure(n as u64 * TRIAD_ELEMENT_BYTES))?;
    v.resize(n, fill);
    Ok(v)
}

fn triad_sample(working_set: u64, reps: usize, name: String, kind: LevelKind) -> Result<BandwidthSample, MachineError> {
    let n = (working_set / (3 * TRIAD_ELEMENT_BYTES)).max(1) as usize;
    let mut a = alloc_array(n, 0.0)?;
    let b = alloc_array(n, 1.0)?;
    let c = alloc_array(n, 2.0)?;
    let s = black_box(0.5f64);

    let mut pass = |passes: u64| {
        timing::time(|| {
            for _ in 0..passes {
                for ((ai, bi), ci) in a.iter_mut().zip(&b).zip(&c) {
                    *ai = bi + s * ci;
                }
                black_box(&mut a);
            }
        })
        .0
    };

    pass(1); // first touch
    let target = timing::min_resolvable().max(TARGET_INTERVAL_S);
    let mut inner = 1u64;
    while pass(inner) < target {
        if inner >= MAX_INNER_PASSES {
            return Err(MachineError::ClockResolution {
                elapsed: pass(inner),
                resolution: timing::clock_resolution(),
            });
        }
        inner *= 2;
    }
    let intervals: Vec<f64> = (0..reps).map(|_| pass(inner)).collect();
    let best_interval = timing::best(&intervals);
    if best_interval < timing::min_resolvable() {
        return Err(MachineError::ClockResolution {
            elapsed: best_interval,
            resolution: timing::clock_resolution(),
        });
    }
    let per_pass: Vec<f64> = intervals.iter().map(|t| t / inner as f64).collect();
    let best_time = timing::best(&per_pass);
    let counted = triad_counted_bytes(n as u64, TRIAD_ELEMENT_BYTES);
    Ok(BandwidthSample {
        level: BandwidthLevel {
            name,
            working_set_bytes: working_set,
            bandwidth_bytes_per_s: bandwidth_from(counted, best_time),
            kind,
        },
        elements: n as u64,
        counted_bytes_per_pass: counted,
        best_time,
        median_time: timing::median(&per_pass),
        inner_passes: inner,
    })
}

/// Outcome of [`check_bandwidth_ladder`].
#[derive(Debug, Clone, PartialEq)]
pub enum LadderCheck {
    Ok,
    /// Smallest-level bandwidth below the largest; tolerated as scheduling noise.
    Warning(String),
}

/// Cache bandwidth should not fall below memory bandwidth. A mild inversion
/// is a warning; memory more than twice as fast as the smallest level is an error.
pub fn check_bandwidth_ladder(levels: &[BandwidthLevel]) -> Result<LadderCheck, MachineError> {
    let assessable: Vec<_> = levels
        .iter()
        .filter(|l| l.kind != LevelKind::NetworkReserved)
        .collect();
    let (Some(first), Some(last)) = (assessable.first(), assessable.last()) else {
        return Ok(LadderCheck::Ok);
    };
    let (small, large) = (first.bandwidth_bytes_per_s, last.bandwidth_bytes_per_s);
    if large > 2.0 * small {
        return Err(MachineError::Invariant(format!(
            "{} bandwidth {large:.3e} B/s exceeds twice the {} bandwidth {small:.3e} B/s",
            last.name, first.name
        )));
    }
    if large > small {
        return Ok(LadderCheck::Warning(format!(
            "{} bandwidth {large:.3e} B/s exceeds {} bandwidth {small:.3e} B/s",
            last.name, first.name
        )));
    }
    Ok(LadderCheck::Ok)
}

/// Peak-flop calibration settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeakConfig {
    /// Independent multiply-add chains; a multiple of 8 between 8 and 32.
    pub chains: usize,
    pub reps: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self { chains: 16, reps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSample {
    pub precision: Precision,
    pub flops_per_s: f64,
    pub multiply_adds: u64,
    pub best_time: f64,
    pub median_time: f64,
}

/// Achievable peak: independent multiply-add chains on register-resident
/// data, 2 flops per multiply-add, best of `reps`. Typically below the vendor
/// peak; the model file may override it.
pub fn calibrate_peak_flops(precision: Precision) -> Result<f64, MachineError> {
    calibrate_peak_flops_with(precision, PeakConfig::default()).map(|s| s.flops_per_s)
}

pub fn calibrate_peak_flops_with(precision: Precision, config: PeakConfig) -> Result<PeakSample, MachineError> {
    if config.chains < MIN_CHAINS {
        return Err(MachineError::Precondition(format!(
            "at least {MIN_CHAINS} independent chains are needed to hide latency, got {}",
            config.chains
        )));
    }
    if config.reps < 1 {
        return Err(MachineError::Precondition("reps must be >= 1".into()));
    }
    match precision {
        Precision::Single => peak_for::<f32>(config),
        Precision::Double => peak_for::<f64>(config),
    }
}

fn peak_for<T: Real>(config: PeakConfig) -> Result<PeakSample, MachineError> {
    let run: fn(u64) -> T = match config.chains {
        8 => mad_chains::<T, 8>,
        16 => mad_chains::<T, 16>,
        24 => mad_chains::<T, 24>,
        32 => mad_chains::<T, 32>,
        k => {
            return Err(MachineError::Precondition(format!(
                "chain count must be 8, 16, 24 or 32, got {k}"
            )))
        }
    };
    let timed = |iters: u64| timing::time(|| black_box(run(black_box(iters)))).0;

    let target = timing::min_resolvable().max(1e-2);
    let mut iters = 1u64 << 10;
    while timed(iters) < target {
        if iters >= 1 << 34 {
            return Err(MachineError::ClockResolution {
                elapsed: timed(iters),
                resolution: timing::clock_resolution(),
            });
        }
        iters *= 2;
    }
    let times: Vec<f64> = (0..config.reps).map(|_| timed(iters)).collect();
    let best = timing::best(&times);
    if best < timing::min_resolvable() {
        return Err(MachineError::ClockResolution {
            elapsed: best,
            resolution: timing::clock_resolution(),
        });
    }
    let mads = iters * config.chains as u64;
    Ok(PeakSample {
        precision: T::PRECISION,
        flops_per_s: flops_rate(mads as f64, best),
        multiply_adds: mads,
        best_time: best,
        median_time: timing::median(&times),
    })
}

fn mad_chains<T: Real, const K: usize>(iters: u64) -> T {
    let mut acc = [T::zero(); K];
    for (k, a) in acc.iter_mut().enumerate() {
        *a = T::from_f64(k as f64 * 1e-3);
    }
    let m = black_box(T::from_f64(0.999_999));
    let c = black_box(T::from_f64(1e-6));
    for _ in 0..iters {
        for a in acc.iter_mut() {
            *a = *a * m + c;
        }
    }
    acc.iter().fold(T::zero(), |s, &a| s + a)
}

/// Progress report of a full calibration.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: MachineModel,
    pub bandwidths: Vec<BandwidthSample>,
    pub peaks: Vec<PeakSample>,
    pub ladder: LadderCheck,
}

/// Calibrates both peaks and the bandwidth ladder into a named model.
pub fn calibrate_model(name: &str, working_sets: &[u64], reps: usize) -> Result<Calibration, MachineError> {
    let bandwidths = calibrate_bandwidth(working_sets, reps)?;
    let levels: Vec<_> = bandwidths.iter().map(|s| s.level.clone()).collect();
    let ladder = check_bandwidth_ladder(&levels)?;
    let config = PeakConfig::default();
    let single = calibrate_peak_flops_with(Precision::Single, config)?;
    let double = calibrate_peak_flops_with(Precision::Double, config)?;
    let mut model = MachineModel::new(
        name,
        Peaks {
            single: single.flops_per_s,
            double: double.flops_per_s,
        },
        levels,
    )?;
    model.notes = format!(
        "achievable peaks from {} independent multiply-add chains; triad bandwidth counts 4 accesses per element (incl. write-allocate); best of {reps} reps",
        config.chains
    );
    Ok(Calibration {
        model,
        bandwidths,
        peaks: vec![single, double],
        ladder,
    })
}
