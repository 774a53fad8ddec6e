#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use hpcwb::bench::{assess_both, Measurement, ResultSet};
use hpcwb::kernels::KernelSpec;
use hpcwb::machine::{save_model, BandwidthLevel, LevelKind, MachineModel, Peaks};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `hpcwb` binary with `args`, without any inherited seed override.
pub fn hpcwb<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_hpcwb"))
        .args(args)
        .env_remove(hpcwb::SEED_ENV)
        .output()
        .expect("spawn hpcwb");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

/// One-level model with the given double peak and memory bandwidth.
pub fn synthetic_model(name: &str, peak: f64, bandwidth: f64) -> MachineModel {
    MachineModel::new(
        name,
        Peaks {
            single: 2.0 * peak,
            double: peak,
        },
        vec![BandwidthLevel {
            name: "MEM".into(),
            working_set_bytes: 1 << 32,
            bandwidth_bytes_per_s: bandwidth,
            kind: LevelKind::Memory,
        }],
    )
    .unwrap()
}

pub fn synthetic_measurement(spec: &KernelSpec, n: u64, best: f64) -> Measurement {
    Measurement {
        kernel_id: spec.id.clone(),
        backend: "reference".into(),
        precision: spec.precision,
        layout: spec.layout,
        n,
        reps: 3,
        times: vec![best, 2.0 * best, 3.0 * best],
        best_time: best,
        median_time: 2.0 * best,
        checksum: 0.0,
        inner_iterations: 1,
    }
}

/// A result set of `(kernel id, n, best time)` rows assessed against `model`.
pub fn synthetic_results(model: &MachineModel, rows: &[(&str, u64, f64)]) -> ResultSet {
    let mut set = ResultSet::new(model, 1);
    for &(id, n, t) in rows {
        let spec = KernelSpec::all().into_iter().find(|s| s.id == id).unwrap();
        let m = synthetic_measurement(&spec, n, t);
        set.results.push(assess_both(&m, &spec, model, "MEM").unwrap().record);
    }
    set
}

pub fn write_model(dir: &Path, file: &str, model: &MachineModel) -> std::path::PathBuf {
    let path = dir.join(file);
    save_model(model, &path).unwrap();
    path
}

pub fn write_results(dir: &Path, file: &str, set: &ResultSet) -> std::path::PathBuf {
    let path = dir.join(file);
    hpcwb::bench::save_result_set(set, &path).unwrap();
    path
}
