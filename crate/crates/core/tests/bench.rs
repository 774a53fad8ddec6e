use hpcwb::bench::{load_result_set, measure, save_result_set, sweep, BenchConfig, ResultSet};
use hpcwb::kernels::{Registry, VariantFilter};
use hpcwb::machine::{BandwidthLevel, LevelKind, MachineModel, Peaks};
use hpcwb::roofline::LevelPolicy;

fn model() -> MachineModel {
    MachineModel::new(
        "bench-test",
        Peaks {
            single: 1e10,
            double: 5e9,
        },
        vec![
            BandwidthLevel {
                name: "L1".into(),
                working_set_bytes: 48 << 10,
                bandwidth_bytes_per_s: 1e11,
                kind: LevelKind::Cache,
            },
            BandwidthLevel {
                name: "MEM".into(),
                working_set_bytes: 1 << 30,
                bandwidth_bytes_per_s: 1e10,
                kind: LevelKind::Memory,
            },
        ],
    )
    .unwrap()
}

fn quick() -> BenchConfig {
    BenchConfig {
        reps: 3,
        warmup: 1,
        seed: 42,
        target_interval: 2e-5,
    }
}

#[test]
fn every_variant_sweeps_and_round_trips() {
    let m = model();
    let mut set = ResultSet::new(&m, 42);
    for v in Registry::standard().list_variants(&VariantFilter::all()) {
        let out = sweep(&v, &[16, 1000], &m, &LevelPolicy::Auto, &quick()).unwrap();
        assert!(out.failures.is_empty(), "{:?}: {:?}", v, out.failures);
        assert_eq!(out.points.len(), 2);
        for p in &out.points {
            assert!(p.idealized.efficiency_eta <= p.realistic.efficiency_eta);
            assert_eq!(p.record.time_best_s, p.measurement.best_time);
        }
        set.results.extend(out.records().cloned());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.json");
    save_result_set(&set, &path).unwrap();
    assert_eq!(load_result_set(&path).unwrap(), set);
}

#[test]
fn checksums_are_stable_across_runs() {
    let v = Registry::standard()
        .list_variants(&VariantFilter::all().kernel("axpy.f64").backend("optimized"))
        .remove(0);
    let a = measure(&v, 5000, &quick()).unwrap();
    let b = measure(&v, 5000, &BenchConfig { reps: 5, ..quick() }).unwrap();
    assert_eq!(a.checksum.to_bits(), b.checksum.to_bits());
    assert_eq!(b.times.len(), 5);
}
