//! Roofline assessment: attainable performance `min(peak, bandwidth × intensity)`
//! and the relative efficiency `η = measured / attainable` under realistic or
//! idealized traffic, plus cross-machine comparison of result sets.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{Measurement, ResultSet};
use crate::kernels::{KernelError, KernelSpec, Layout, Precision};
use crate::machine::{BandwidthLevel, LevelKind, MachineModel};

/// Efficiencies above this are flagged in reports (never clamped).
pub const ETA_FLAG_THRESHOLD: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficModel {
    Realistic,
    Idealized,
}

impl TrafficModel {
    pub const ALL: [TrafficModel; 2] = [TrafficModel::Realistic, TrafficModel::Idealized];

    pub fn name(self) -> &'static str {
        match self {
            TrafficModel::Realistic => "realistic",
            TrafficModel::Idealized => "idealized",
        }
    }
}

impl fmt::Display for TrafficModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Memory,
    Compute,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Memory => "memory",
            Bound::Compute => "compute",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RooflineError {
    #[error("unknown or non-assessable bandwidth level `{0}`")]
    UnknownLevel(String),
    #[error("machine model has no assessable bandwidth level")]
    NoLevels,
    #[error("arithmetic intensity must be positive and finite, got {0}")]
    InvalidIntensity(f64),
    #[error("measurement of `{measurement}` cannot be assessed as `{spec}`")]
    MismatchedKernel { measurement: String, spec: String },
    #[error("best time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("comparison needs at least two result sets, got {0}")]
    EmptyInput(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Which bandwidth level an assessment uses.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LevelPolicy {
    /// Smallest level whose working set holds the kernel's data, else the largest.
    #[default]
    Auto,
    Fixed(String),
}

/// Smallest assessable level with `working_set_bytes >= footprint_bytes`;
/// the largest assessable level if none is big enough.
pub fn select_level(model: &MachineModel, footprint_bytes: u64) -> Result<&BandwidthLevel, RooflineError> {
    let mut levels = model.assessable_levels();
    let mut last = None;
    for level in &mut levels {
        if level.working_set_bytes >= footprint_bytes {
            return Ok(level);
        }
        last = Some(level);
    }
    last.ok_or(RooflineError::NoLevels)
}

/// `min(peak, bandwidth × intensity)` and which side binds. The result is
/// compute-bound iff `peak <= bandwidth × intensity`.
pub fn attainable(
    model: &MachineModel,
    precision: Precision,
    intensity: f64,
    level_name: &str,
) -> Result<(f64, Bound), RooflineError> {
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(RooflineError::InvalidIntensity(intensity));
    }
    let level = model
        .level(level_name)
        .filter(|l| l.kind != LevelKind::NetworkReserved)
        .ok_or_else(|| RooflineError::UnknownLevel(level_name.to_string()))?;
    let peak = model.peak(precision);
    let memory_roof = level.bandwidth_bytes_per_s * intensity;
    Ok(if peak <= memory_roof {
        (peak, Bound::Compute)
    } else {
        (memory_roof, Bound::Memory)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineAssessment {
    pub kernel_id: String,
    pub precision: Precision,
    pub n: u64,
    pub traffic_model: TrafficModel,
    pub flops: u64,
    pub bytes: u64,
    /// `flops / bytes`
    pub intensity: f64,
    pub attainable_flops_per_s: f64,
    pub measured_flops_per_s: f64,
    /// `measured / attainable`; may exceed 1.
    pub efficiency_eta: f64,
    pub bound: Bound,
    pub level_name: String,
}

impl RooflineAssessment {
    /// `η` above [`ETA_FLAG_THRESHOLD`]: model error or cache effects worth a look.
    pub fn flagged(&self) -> bool {
        self.efficiency_eta > ETA_FLAG_THRESHOLD
    }
}

/// Assesses `measurement` against `model` under one traffic model.
pub fn assess(
    measurement: &Measurement,
    spec: &KernelSpec,
    model: &MachineModel,
    traffic: TrafficModel,
    level_name: &str,
) -> Result<RooflineAssessment, RooflineError> {
    if measurement.kernel_id != spec.id {
        return Err(RooflineError::MismatchedKernel {
            measurement: measurement.kernel_id.clone(),
            spec: spec.id.clone(),
        });
    }
    if !(measurement.best_time > 0.0) {
        return Err(RooflineError::NonPositiveTime(measurement.best_time));
    }
    let cost = spec.cost(spec.shape_for(measurement.n)?)?;
    let bytes = match traffic {
        TrafficModel::Realistic => cost.bytes_realistic,
        TrafficModel::Idealized => cost.bytes_idealized,
    };
    let intensity = cost.flops as f64 / bytes as f64;
    let measured = cost.flops as f64 / measurement.best_time;
    let (attainable, bound) = attainable(model, spec.precision, intensity, level_name)?;
    Ok(RooflineAssessment {
        kernel_id: spec.id.clone(),
        precision: spec.precision,
        n: measurement.n,
        traffic_model: traffic,
        flops: cost.flops,
        bytes,
        intensity,
        attainable_flops_per_s: attainable,
        measured_flops_per_s: measured,
        efficiency_eta: measured / attainable,
        bound,
        level_name: level_name.to_string(),
    })
}

/// Identity of a comparison row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RowKey {
    pub kernel: String,
    pub precision: Precision,
    pub layout: Layout,
    pub backend: String,
    pub n: u64,
    pub traffic_model: TrafficModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub eta: f64,
    pub perf_flops_per_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub key: RowKey,
    /// One entry per machine column; `None` where that machine lacks the row.
    pub cells: Vec<Option<Cell>>,
    /// Column indices of present cells, highest `η` first (ties keep column order).
    pub ranking: Vec<usize>,
}

/// Per-row `η` and performance for every machine, plus an unweighted
/// geometric mean of `η` per machine and traffic model. The mean is a
/// convenience aggregate over the rows each machine has.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub machines: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    /// `geomean[column][traffic]`, indexed as `TrafficModel::ALL`.
    pub geomean: Vec<[Option<f64>; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Kernel,
    Machine,
}

pub fn compare(result_sets: &[ResultSet]) -> Result<ComparisonTable, RooflineError> {
    if result_sets.len() < 2 {
        return Err(RooflineError::EmptyInput(result_sets.len()));
    }
    let mut machines: Vec<String> = Vec::new();
    for set in result_sets {
        let mut label = set.machine.clone();
        let mut k = 2;
        while machines.contains(&label) {
            label = format!("{}#{k}", set.machine);
            k += 1;
        }
        machines.push(label);
    }

    let columns = result_sets.len();
    let mut rows: BTreeMap<RowKey, Vec<Option<Cell>>> = BTreeMap::new();
    for (col, set) in result_sets.iter().enumerate() {
        for rec in &set.results {
            for traffic in TrafficModel::ALL {
                let key = RowKey {
                    kernel: rec.kernel.clone(),
                    precision: rec.precision,
                    layout: rec.layout,
                    backend: rec.backend.clone(),
                    n: rec.n,
                    traffic_model: traffic,
                };
                let cell = Cell {
                    eta: rec.eta(traffic),
                    perf_flops_per_s: rec.perf_flops_per_s,
                };
                rows.entry(key).or_insert_with(|| vec![None; columns])[col] = Some(cell);
            }
        }
    }

    let rows: Vec<ComparisonRow> = rows
        .into_iter()
        .map(|(key, cells)| {
            let mut ranking: Vec<usize> = (0..columns).filter(|&c| cells[c].is_some()).collect();
            ranking.sort_by(|&a, &b| {
                let (ea, eb) = (cells[a].unwrap().eta, cells[b].unwrap().eta);
                eb.total_cmp(&ea).then(a.cmp(&b))
            });
            ComparisonRow { key, cells, ranking }
        })
        .collect();

    let geomean = (0..columns)
        .map(|col| {
            TrafficModel::ALL.map(|traffic| {
                let etas: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.key.traffic_model == traffic)
                    .filter_map(|r| r.cells[col].map(|c| c.eta))
                    .collect();
                geometric_mean(&etas)
            })
        })
        .collect();

    Ok(ComparisonTable {
        machines,
        rows,
        geomean,
    })
}

fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

#[derive(Serialize)]
struct JsonMachineCell<'a> {
    machine: &'a str,
    present: bool,
    eta: Option<f64>,
    perf_flops_per_s: Option<f64>,
    flagged: bool,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    #[serde(flatten)]
    key: &'a RowKey,
    machines: Vec<JsonMachineCell<'a>>,
    ranking: Vec<&'a str>,
}

fn fmt_eta(cell: Option<Cell>) -> String {
    match cell {
        Some(c) if c.eta > ETA_FLAG_THRESHOLD => format!("{:.3}!", c.eta),
        Some(c) => format!("{:.3}", c.eta),
        None => "absent".into(),
    }
}

fn fmt_perf(cell: Option<Cell>) -> String {
    match cell {
        Some(c) => format!("{:.3}", c.perf_flops_per_s / 1e9),
        None => "-".into(),
    }
}

impl ComparisonTable {
    /// JSON array with one object per row.
    pub fn to_json(&self) -> String {
        let rows: Vec<JsonRow<'_>> = self
            .rows
            .iter()
            .map(|r| JsonRow {
                key: &r.key,
                machines: self
                    .machines
                    .iter()
                    .zip(&r.cells)
                    .map(|(m, c)| JsonMachineCell {
                        machine: m,
                        present: c.is_some(),
                        eta: c.map(|c| c.eta),
                        perf_flops_per_s: c.map(|c| c.perf_flops_per_s),
                        flagged: c.is_some_and(|c| c.eta > ETA_FLAG_THRESHOLD),
                    })
                    .collect(),
                ranking: r.ranking.iter().map(|&i| self.machines[i].as_str()).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("comparison rows serialize")
    }

    /// Aligned text. `η` values above the flag threshold carry a trailing `!`.
    pub fn render_text(&self, by: GroupBy) -> String {
        match by {
            GroupBy::Kernel => self.render_by_kernel(),
            GroupBy::Machine => self.render_by_machine(),
        }
    }

    fn key_cells(key: &RowKey) -> Vec<String> {
        vec![
            key.kernel.clone(),
            key.backend.clone(),
            key.layout.to_string(),
            key.n.to_string(),
            key.traffic_model.to_string(),
        ]
    }

    fn render_by_kernel(&self) -> String {
        let mut header: Vec<String> = ["kernel", "backend", "layout", "n", "traffic"]
            .map(String::from)
            .to_vec();
        for m in &self.machines {
            header.push(format!("eta[{m}]"));
            header.push(format!("GF/s[{m}]"));
        }
        header.push("best".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = Self::key_cells(&r.key);
                for c in &r.cells {
                    line.push(fmt_eta(*c));
                    line.push(fmt_perf(*c));
                }
                line.push(
                    r.ranking
                        .first()
                        .map_or("-".into(), |&i| self.machines[i].clone()),
                );
                line
            })
            .collect();
        let mut out = align_table(&header, &body);
        out.push_str(&self.render_geomean());
        out
    }

    fn render_by_machine(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = ["kernel", "backend", "layout", "n", "traffic", "eta", "GF/s"]
            .map(String::from)
            .to_vec();
        for (col, m) in self.machines.iter().enumerate() {
            let _ = writeln!(out, "== {m} ==");
            let body: Vec<Vec<String>> = self
                .rows
                .iter()
                .filter(|r| r.cells[col].is_some())
                .map(|r| {
                    let mut line = Self::key_cells(&r.key);
                    line.push(fmt_eta(r.cells[col]));
                    line.push(fmt_perf(r.cells[col]));
                    line
                })
                .collect();
            out.push_str(&align_table(&header, &body));
            out.push('\n');
        }
        out.push_str(&self.render_geomean());
        out
    }

    fn render_geomean(&self) -> String {
        let mut out = String::from("\ngeometric mean of eta (convenience aggregate):\n");
        for (m, g) in self.machines.iter().zip(&self.geomean) {
            let show = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "  {m}: realistic {}  idealized {}",
                show(g[0]),
                show(g[1])
            );
        }
        out
    }
}

/// Left-aligned columns separated by two spaces.
pub fn align_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let text: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(text.join("  ").trim_end());
        out.push('\n');
    };
    line(header, &mut out);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule, &mut out);
    for row in rows {
        line(row, &mut out);
    }
    out
}
