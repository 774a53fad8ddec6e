use hpcwb::kernels::{
    run, traffic_oracle, ulp_distance, Inputs, KernelSpec, Operation, Precision, Real, Registry,
    Shape, Trap, VariantFilter, CSR_HALF_BANDWIDTH,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle_matches<T: Real>(spec: &KernelSpec, n: u64) {
    let inputs = Inputs::<T>::generate(spec, n, n ^ 0x5eed).unwrap();
    let closed = spec.cost(spec.shape_for(n).unwrap()).unwrap();
    let traced = traffic_oracle(spec, &inputs).unwrap();
    assert_eq!(closed, traced, "{} n={n}", spec.id);
}

fn sizes() -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sizes: Vec<u64> = (1..=64).collect();
    sizes.extend((0..20).map(|_| rng.gen_range(1..=4096)));
    sizes
}

#[test]
fn closed_forms_match_traffic_oracle() {
    for spec in KernelSpec::all() {
        for n in sizes() {
            match spec.precision {
                Precision::Single => oracle_matches::<f32>(&spec, n),
                Precision::Double => oracle_matches::<f64>(&spec, n),
            }
        }
    }
}

#[test]
fn generated_csr_has_the_modelled_shape() {
    let spec = Registry::standard().spec("csr_spmv.f64").unwrap().clone();
    for n in [1u64, 2, 3, 5, 100] {
        let Inputs::CsrSpmv { a, .. } = Inputs::<f64>::generate(&spec, n, 1).unwrap() else {
            panic!("wrong inputs")
        };
        // band of half-width 2 clipped to the matrix, counted row by row
        let expected: u64 = (0..n as i64)
            .map(|i| {
                let lo = (i - CSR_HALF_BANDWIDTH as i64).max(0);
                let hi = (i + CSR_HALF_BANDWIDTH as i64).min(n as i64 - 1);
                (hi - lo + 1) as u64
            })
            .sum();
        assert_eq!(a.nnz() as u64, expected);
        assert_eq!(
            spec.shape_for(n).unwrap(),
            Shape::Csr {
                rows: n,
                cols: n,
                nnz: expected
            }
        );
    }
}

fn compare_backends<T: Real>(spec: &KernelSpec, n: u64) {
    let reg = Registry::standard();
    let reference = reg.backend("reference").unwrap();
    let optimized = reg.backend("optimized").unwrap();
    let inputs = Inputs::<T>::generate(spec, n, 99).unwrap();
    let scale = run(spec, reference.as_ref(), &inputs.magnitudes(), 0).unwrap();
    let r0 = run(spec, reference.as_ref(), &inputs, 0).unwrap();
    for offset in [0, 1] {
        let r = run(spec, reference.as_ref(), &inputs, offset).unwrap();
        assert!(
            r.values
                .iter()
                .zip(&r0.values)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64()),
            "{} n={n}: reference differs across offsets",
            spec.id
        );
        let o = run(spec, optimized.as_ref(), &inputs, offset).unwrap();
        assert_eq!(o.values.len(), r0.values.len());
        for (i, ((a, b), s)) in o.values.iter().zip(&r0.values).zip(&scale.values).enumerate() {
            let d = ulp_distance(*a, *b, *s);
            assert!(d <= 4.0, "{} n={n} offset={offset} element {i}: {a} vs {b} ({d} ulps)", spec.id);
        }
    }
}

#[test]
fn optimized_agrees_with_reference() {
    for spec in KernelSpec::all() {
        for n in [1u64, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 100, 257, 1000, 4099] {
            match spec.precision {
                Precision::Single => compare_backends::<f32>(&spec, n),
                Precision::Double => compare_backends::<f64>(&spec, n),
            }
        }
    }
}

#[test]
fn unaligned_trap_only_bites_off_the_base() {
    let reg = Registry::standard().with_trap(Trap::UnalignedDrop);
    let trap = reg.backend(Trap::UnalignedDrop.backend_name()).unwrap();
    let reference = reg.backend("reference").unwrap();
    for spec in KernelSpec::all() {
        let inputs = Inputs::<f64>::generate(&spec, 50, 3);
        let Ok(inputs) = inputs else { continue };
        if spec.precision != Precision::Double {
            continue;
        }
        let want = run(&spec, reference.as_ref(), &inputs, 0).unwrap();
        let aligned = run(&spec, trap.as_ref(), &inputs, 0).unwrap();
        let shifted = run(&spec, trap.as_ref(), &inputs, 1).unwrap();
        assert_eq!(aligned, want, "{}", spec.id);
        assert_ne!(shifted.values, want.values, "{}", spec.id);
    }
}

#[test]
fn registry_lists_every_variant() {
    let reg = Registry::standard();
    let all = reg.list_variants(&VariantFilter::all());
    assert_eq!(all.len(), KernelSpec::all().len() * 2);
    let dense = reg.list_variants(&VariantFilter::all().kernel("dense_mv"));
    assert_eq!(dense.len(), 8);
    assert!(dense.iter().all(|v| v.spec.operation == Operation::DenseMv));
}

fn arb_shape() -> impl Strategy<Value = (KernelSpec, Shape)> {
    let specs = KernelSpec::all();
    (0..specs.len(), 1u64..1_000_000, 1u64..5000, 1u64..5000, 0u64..100).prop_map(
        move |(i, n, r, c, fill)| {
            let spec = specs[i].clone();
            let shape = match spec.operation {
                Operation::Axpy | Operation::Scale | Operation::Dot => Shape::Vector { n },
                Operation::CsrSpmv => Shape::Csr {
                    rows: r,
                    cols: c,
                    nnz: r * c * fill / 100,
                },
                Operation::DenseMv => Shape::Dense { rows: r, cols: c },
            };
            (spec, shape)
        },
    )
}

proptest! {
    #[test]
    fn idealized_never_exceeds_realistic((spec, shape) in arb_shape()) {
        let cost = spec.cost(shape).unwrap();
        prop_assert!(cost.bytes_idealized <= cost.bytes_realistic);
        let empty = matches!(shape, Shape::Csr { nnz: 0, .. });
        prop_assert!(cost.flops > 0 || empty);
    }

    #[test]
    fn csr_closed_form_matches_oracle_on_random_patterns(
        rows in 1usize..12,
        cols in 1usize..12,
        seed in any::<u64>(),
        density in 0.0f64..1.0,
    ) {
        // the closed form models matrices that touch every column at least once
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pattern = vec![std::collections::BTreeSet::new(); rows];
        for row in pattern.iter_mut() {
            for j in 0..cols {
                if rng.gen_bool(density) {
                    row.insert(j as u32);
                }
            }
        }
        for j in 0..cols {
            if !pattern.iter().any(|r| r.contains(&(j as u32))) {
                pattern[j % rows].insert(j as u32);
            }
        }
        let mut row_ptr = vec![0u32];
        let mut col_idx = Vec::new();
        for row in &pattern {
            col_idx.extend(row.iter().copied());
            row_ptr.push(col_idx.len() as u32);
        }
        let values: Vec<f64> = col_idx.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nnz = values.len() as u64;
        let a = hpcwb::kernels::CsrMatrix::new(rows, cols, row_ptr, col_idx, values).unwrap();
        let spec = Registry::standard().spec("csr_spmv.f64").unwrap().clone();
        let inputs = Inputs::CsrSpmv { a, x: vec![0.5; cols] };
        let shape = Shape::Csr { rows: rows as u64, cols: cols as u64, nnz };
        prop_assert_eq!(traffic_oracle(&spec, &inputs).unwrap(), spec.cost(shape).unwrap());
    }
}
