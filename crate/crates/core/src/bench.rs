//! Timing harness: warmup, repetitions, sub-resolution auto-scaling, and
//! size sweeps that attach both roofline assessments to every measurement.

use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{
    AlignedVec, Backend, CsrView, DenseView, Inputs, KernelError, KernelSpec, Layout, Precision,
    Real, Variant,
};
use crate::machine::{now_iso8601, MachineModel};
use crate::roofline::{
    assess, select_level, Bound, LevelPolicy, RooflineAssessment, RooflineError, TrafficModel,
};
use crate::simgroup::tree_sum;
use crate::timing;

pub const DEFAULT_REPS: usize = 11;
pub const DEFAULT_WARMUP: usize = 2;
pub const MIN_REPS: usize = 3;
/// Upper bound on the inner-iteration multiplier.
pub const MAX_INNER_ITERATIONS: u64 = 1 << 24;

/// Serializes all benchmarking in the process.
static BENCH_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{kernel} at n={n}: {interval:.3e} s after {inner} inner iterations is below the resolvable {required:.3e} s")]
    RejectedTiming {
        kernel: String,
        n: u64,
        inner: u64,
        interval: f64,
        required: f64,
    },
    #[error("{kernel} at n={n}: checksum changed between repetitions ({first} vs {other})")]
    UnstableChecksum {
        kernel: String,
        n: u64,
        first: f64,
        other: f64,
    },
    #[error("{kernel} at n={n}: idealized efficiency {idealized} exceeds realistic {realistic}")]
    InconsistentAssessment {
        kernel: String,
        n: u64,
        idealized: f64,
        realistic: f64,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Roofline(#[from] RooflineError),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid result set: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Each timed interval is stretched to at least this long (and never
    /// below 100 clock ticks) by repeating the kernel.
    pub target_interval: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reps: DEFAULT_REPS,
            warmup: DEFAULT_WARMUP,
            seed: crate::default_seed(),
            target_interval: 2e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kernel_id: String,
    pub backend: String,
    pub precision: Precision,
    pub layout: Layout,
    pub n: u64,
    pub reps: usize,
    /// Seconds per kernel invocation, one entry per repetition.
    pub times: Vec<f64>,
    pub best_time: f64,
    pub median_time: f64,
    /// Output checksum of one kernel invocation on the seeded inputs.
    pub checksum: f64,
    /// Kernel invocations per timed interval.
    pub inner_iterations: u64,
}

/// Kernel inputs in aligned storage plus pristine copies to reset from.
enum Prepared<T> {
    Axpy {
        alpha: T,
        x: AlignedVec<T>,
        y: AlignedVec<T>,
        y0: Vec<T>,
    },
    Scale {
        alpha: T,
        x: AlignedVec<T>,
        x0: Vec<T>,
    },
    Dot {
        x: AlignedVec<T>,
        y: AlignedVec<T>,
        out: T,
    },
    Csr {
        rows: usize,
        cols: usize,
        row_ptr: AlignedVec<u32>,
        col_idx: AlignedVec<u32>,
        values: AlignedVec<T>,
        x: AlignedVec<T>,
        y: AlignedVec<T>,
    },
    Dense {
        rows: usize,
        cols: usize,
        layout: Layout,
        data: AlignedVec<T>,
        x: AlignedVec<T>,
        y: AlignedVec<T>,
    },
}

impl<T: Real> Prepared<T> {
    fn new(inputs: Inputs<T>) -> Result<Self, KernelError> {
        Ok(match inputs {
            Inputs::Axpy { alpha, x, y } => Prepared::Axpy {
                alpha,
                x: AlignedVec::from_slice(&x, 0)?,
                y: AlignedVec::from_slice(&y, 0)?,
                y0: y,
            },
            // a sign flip keeps repeated in-place scaling exact and away from
            // subnormals
            Inputs::Scale { x, .. } => Prepared::Scale {
                alpha: -T::one(),
                x: AlignedVec::from_slice(&x, 0)?,
                x0: x,
            },
            Inputs::Dot { x, y } => Prepared::Dot {
                x: AlignedVec::from_slice(&x, 0)?,
                y: AlignedVec::from_slice(&y, 0)?,
                out: T::zero(),
            },
            Inputs::CsrSpmv { a, x } => Prepared::Csr {
                rows: a.rows(),
                cols: a.cols(),
                row_ptr: AlignedVec::from_slice(a.row_ptr(), 0)?,
                col_idx: AlignedVec::from_slice(a.col_idx(), 0)?,
                values: AlignedVec::from_slice(a.values(), 0)?,
                x: AlignedVec::from_slice(&x, 0)?,
                y: AlignedVec::zeroed(a.rows(), 0)?,
            },
            Inputs::DenseMv { a, x } => Prepared::Dense {
                rows: a.rows(),
                cols: a.cols(),
                layout: a.layout(),
                data: AlignedVec::from_slice(a.data(), 0)?,
                x: AlignedVec::from_slice(&x, 0)?,
                y: AlignedVec::zeroed(a.rows(), 0)?,
            },
        })
    }

    fn reset(&mut self) {
        match self {
            Prepared::Axpy { y, y0, .. } => y.copy_from(y0),
            Prepared::Scale { x, x0, .. } => x.copy_from(x0),
            Prepared::Dot { out, .. } => *out = T::zero(),
            Prepared::Csr { y, .. } | Prepared::Dense { y, .. } => {
                y.as_mut_slice().fill(T::zero())
            }
        }
    }

    fn invoke(&mut self, backend: &dyn Backend) {
        let k = T::kernels(backend);
        match self {
            Prepared::Axpy { alpha, x, y, .. } => k.axpy(*alpha, x.as_slice(), y.as_mut_slice()),
            Prepared::Scale { alpha, x, .. } => k.scale(*alpha, x.as_mut_slice()),
            Prepared::Dot { x, y, out } => *out = black_box(k.dot(x.as_slice(), y.as_slice())),
            Prepared::Csr {
                rows,
                cols,
                row_ptr,
                col_idx,
                values,
                x,
                y,
            } => {
                let view = CsrView {
                    rows: *rows,
                    cols: *cols,
                    row_ptr: row_ptr.as_slice(),
                    col_idx: col_idx.as_slice(),
                    values: values.as_slice(),
                };
                k.csr_spmv(view, x.as_slice(), y.as_mut_slice())
            }
            Prepared::Dense {
                rows,
                cols,
                layout,
                data,
                x,
                y,
            } => {
                let view = DenseView {
                    rows: *rows,
                    cols: *cols,
                    layout: *layout,
                    data: data.as_slice(),
                };
                k.dense_mv(view, x.as_slice(), y.as_mut_slice())
            }
        }
    }

    fn checksum(&self) -> f64 {
        let sum = match self {
            Prepared::Axpy { y, .. } => tree_sum(y.as_slice()),
            Prepared::Scale { x, .. } => tree_sum(x.as_slice()),
            Prepared::Dot { out, .. } => *out,
            Prepared::Csr { y, .. } | Prepared::Dense { y, .. } => tree_sum(y.as_slice()),
        };
        black_box(sum.to_f64())
    }

    fn timed(&mut self, backend: &dyn Backend, inner: u64) -> f64 {
        self.reset();
        let t0 = Instant::now();
        for _ in 0..inner {
            self.invoke(backend);
        }
        t0.elapsed().as_secs_f64()
    }
}

/// Times `variant` at size `n`. Holds the process-wide benchmark lock.
pub fn measure(variant: &Variant, n: u64, config: &BenchConfig) -> Result<Measurement, BenchError> {
    if config.reps < MIN_REPS {
        return Err(BenchError::Precondition(format!(
            "reps must be at least {MIN_REPS}, got {}",
            config.reps
        )));
    }
    if config.warmup < 1 {
        return Err(BenchError::Precondition("warmup must be at least 1".into()));
    }
    if n < 1 {
        return Err(BenchError::Precondition("n must be at least 1".into()));
    }
    let spec = &variant.spec;
    let backend = variant.backend.as_ref();
    if !backend.supports(spec.operation, spec.precision, spec.layout) {
        return Err(KernelError::UnsupportedCombination {
            backend: backend.name().to_string(),
            kernel: spec.id.clone(),
        }
        .into());
    }
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    match spec.precision {
        Precision::Single => measure_typed::<f32>(variant, n, config),
        Precision::Double => measure_typed::<f64>(variant, n, config),
    }
}

fn measure_typed<T: Real>(variant: &Variant, n: u64, config: &BenchConfig) -> Result<Measurement, BenchError> {
    let spec = &variant.spec;
    let backend = variant.backend.as_ref();
    let mut state = Prepared::new(Inputs::<T>::generate(spec, n, config.seed)?)?;
    let required = timing::min_resolvable();
    let target = required.max(config.target_interval);

    let mut inner = 1u64;
    loop {
        let t = state.timed(backend, inner);
        if t >= target {
            break;
        }
        if inner >= MAX_INNER_ITERATIONS {
            if t >= required {
                break;
            }
            return Err(BenchError::RejectedTiming {
                kernel: spec.id.clone(),
                n,
                inner,
                interval: t,
                required,
            });
        }
        let grow = if t > 0.0 { (target / t).ceil() as u64 } else { 2 };
        inner = (inner * grow.clamp(2, 16)).min(MAX_INNER_ITERATIONS);
    }

    // result of a single invocation, comparable across runs whatever `inner` is
    state.timed(backend, 1);
    let checksum = state.checksum();

    for _ in 0..config.warmup {
        state.timed(backend, inner);
        state.checksum();
    }

    let mut times = Vec::with_capacity(config.reps);
    let mut first = None;
    for _ in 0..config.reps {
        let t = state.timed(backend, inner);
        let sum = state.checksum();
        match first {
            None => first = Some(sum),
            Some(f) if f.to_bits() != sum.to_bits() => {
                return Err(BenchError::UnstableChecksum {
                    kernel: spec.id.clone(),
                    n,
                    first: f,
                    other: sum,
                })
            }
            Some(_) => {}
        }
        if t < required {
            return Err(BenchError::RejectedTiming {
                kernel: spec.id.clone(),
                n,
                inner,
                interval: t,
                required,
            });
        }
        times.push(t / inner as f64);
    }

    Ok(Measurement {
        kernel_id: spec.id.clone(),
        backend: backend.name().to_string(),
        precision: spec.precision,
        layout: spec.layout,
        n,
        reps: config.reps,
        best_time: timing::best(&times),
        median_time: timing::median(&times),
        times,
        checksum,
        inner_iterations: inner,
    })
}

/// One line of a result-set file: a measurement and both of its assessments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub kernel: String,
    pub backend: String,
    pub precision: Precision,
    pub layout: Layout,
    pub n: u64,
    pub reps: usize,
    pub time_best_s: f64,
    pub time_median_s: f64,
    pub flops: u64,
    pub bytes_realistic: u64,
    pub bytes_idealized: u64,
    pub perf_flops_per_s: f64,
    pub eta_realistic: f64,
    pub eta_idealized: f64,
    /// Binding constraint under the realistic traffic model.
    pub bound: Bound,
    pub level: String,
}

impl ResultRecord {
    /// Builds a record from a measurement and its realistic and idealized
    /// assessments, checking `η_idealized ≤ η_realistic`.
    pub fn new(
        m: &Measurement,
        realistic: &RooflineAssessment,
        idealized: &RooflineAssessment,
    ) -> Result<Self, BenchError> {
        if realistic.traffic_model != TrafficModel::Realistic
            || idealized.traffic_model != TrafficModel::Idealized
        {
            return Err(BenchError::Invalid("assessments passed in the wrong order".into()));
        }
        if idealized.efficiency_eta > realistic.efficiency_eta {
            return Err(BenchError::InconsistentAssessment {
                kernel: m.kernel_id.clone(),
                n: m.n,
                idealized: idealized.efficiency_eta,
                realistic: realistic.efficiency_eta,
            });
        }
        Ok(Self {
            kernel: m.kernel_id.clone(),
            backend: m.backend.clone(),
            precision: m.precision,
            layout: m.layout,
            n: m.n,
            reps: m.reps,
            time_best_s: m.best_time,
            time_median_s: m.median_time,
            flops: realistic.flops,
            bytes_realistic: realistic.bytes,
            bytes_idealized: idealized.bytes,
            perf_flops_per_s: realistic.measured_flops_per_s,
            eta_realistic: realistic.efficiency_eta,
            eta_idealized: idealized.efficiency_eta,
            bound: realistic.bound,
            level: realistic.level_name.clone(),
        })
    }

    pub fn eta(&self, traffic: TrafficModel) -> f64 {
        match traffic {
            TrafficModel::Realistic => self.eta_realistic,
            TrafficModel::Idealized => self.eta_idealized,
        }
    }

    pub fn bytes(&self, traffic: TrafficModel) -> u64 {
        match traffic {
            TrafficModel::Realistic => self.bytes_realistic,
            TrafficModel::Idealized => self.bytes_idealized,
        }
    }

    /// `flops / bytes` under `traffic`.
    pub fn intensity(&self, traffic: TrafficModel) -> f64 {
        self.flops as f64 / self.bytes(traffic) as f64
    }

    fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{} n={}: {name} must be positive, got {v}", self.kernel, self.n))
            }
        };
        positive("time_best_s", self.time_best_s)?;
        positive("time_median_s", self.time_median_s)?;
        positive("perf_flops_per_s", self.perf_flops_per_s)?;
        positive("eta_realistic", self.eta_realistic)?;
        positive("eta_idealized", self.eta_idealized)?;
        if self.time_best_s > self.time_median_s {
            return Err(format!("{} n={}: best time exceeds median", self.kernel, self.n));
        }
        if self.bytes_idealized > self.bytes_realistic {
            return Err(format!(
                "{} n={}: idealized bytes exceed realistic bytes",
                self.kernel, self.n
            ));
        }
        if self.eta_idealized > self.eta_realistic {
            return Err(format!(
                "{} n={}: eta_idealized exceeds eta_realistic",
                self.kernel, self.n
            ));
        }
        Ok(())
    }
}

/// Results of one or more sweeps on one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultSet {
    pub machine: String,
    pub model_name: String,
    pub created: String,
    pub seed: u64,
    pub results: Vec<ResultRecord>,
}

impl ResultSet {
    /// An empty set for `model`, stamped with the current time.
    pub fn new(model: &MachineModel, seed: u64) -> Self {
        Self {
            machine: model.name.clone(),
            model_name: model.name.clone(),
            created: now_iso8601(),
            seed,
            results: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.machine.is_empty() {
            return Err(BenchError::Invalid("machine name is empty".into()));
        }
        chrono::DateTime::parse_from_rfc3339(&self.created)
            .map_err(|e| BenchError::Invalid(format!("created `{}`: {e}", self.created)))?;
        for rec in &self.results {
            rec.validate().map_err(BenchError::Invalid)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).map_err(|e| BenchError::Schema {
            path: ".".into(),
            message: e.to_string(),
        })?;
        if &Self::from_json(&text)? != self {
            return Err(BenchError::Invalid("result set does not survive a JSON round trip".into()));
        }
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let set: Self = serde_path_to_error::deserialize(de).map_err(|e| BenchError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        set.validate()?;
        Ok(set)
    }
}

pub fn save_result_set(set: &ResultSet, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    let text = set.to_json()?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

pub fn load_result_set(path: impl AsRef<Path>) -> Result<ResultSet, BenchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    ResultSet::from_json(&text)
}

fn io_error(path: &Path, e: std::io::Error) -> BenchError {
    BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Level an assessment of `spec` at size `n` applies under `policy`.
pub fn level_for(
    spec: &KernelSpec,
    n: u64,
    model: &MachineModel,
    policy: &LevelPolicy,
) -> Result<String, BenchError> {
    match policy {
        LevelPolicy::Auto => {
            let footprint = spec.footprint_bytes(spec.shape_for(n)?)?;
            Ok(select_level(model, footprint)?.name.clone())
        }
        LevelPolicy::Fixed(name) => {
            crate::roofline::attainable(model, spec.precision, 1.0, name)?;
            Ok(name.clone())
        }
    }
}

/// Both assessments of one measurement and the record built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub measurement: Measurement,
    pub realistic: RooflineAssessment,
    pub idealized: RooflineAssessment,
    pub record: ResultRecord,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    /// Sizes whose measurement failed, with the reason.
    pub failures: Vec<(u64, BenchError)>,
}

impl SweepOutput {
    pub fn records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.points.iter().map(|p| &p.record)
    }
}

/// Assesses a measurement under both traffic models at `level`.
pub fn assess_both(
    measurement: &Measurement,
    spec: &KernelSpec,
    model: &MachineModel,
    level: &str,
) -> Result<SweepPoint, BenchError> {
    let realistic = assess(measurement, spec, model, TrafficModel::Realistic, level)?;
    let idealized = assess(measurement, spec, model, TrafficModel::Idealized, level)?;
    let record = ResultRecord::new(measurement, &realistic, &idealized)?;
    Ok(SweepPoint {
        measurement: measurement.clone(),
        realistic,
        idealized,
        record,
    })
}

/// Measures `variant` at every size in `sizes` (non-empty, strictly
/// ascending). A size that fails is recorded in `failures` and skipped.
pub fn sweep(
    variant: &Variant,
    sizes: &[u64],
    model: &MachineModel,
    policy: &LevelPolicy,
    config: &BenchConfig,
) -> Result<SweepOutput, BenchError> {
    if sizes.is_empty() {
        return Err(BenchError::Precondition("sizes must not be empty".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Precondition("sizes must be strictly ascending".into()));
    }
    if let LevelPolicy::Fixed(name) = policy {
        crate::roofline::attainable(model, variant.spec.precision, 1.0, name)?;
    }
    let mut out = SweepOutput {
        points: Vec::new(),
        failures: Vec::new(),
    };
    for &n in sizes {
        let point = measure(variant, n, config).and_then(|m| {
            let level = level_for(&variant.spec, n, model, policy)?;
            assess_both(&m, &variant.spec, model, &level)
        });
        match point {
            Ok(p) => out.points.push(p),
            Err(e) => out.failures.push((n, e)),
        }
    }
    Ok(out)
}
