use super::data::{AlignedVec, CsrView, DenseView, Inputs};
use super::{Backend, KernelError, KernelSpec, Operation, Real};
use crate::simgroup::tree_sum;

/// Kernel output and its checksum.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs<T> {
    /// Updated `y` (axpy, spmv, dense_mv), updated `x` (scale), or the single
    /// dot product.
    pub values: Vec<T>,
    /// Sum of `values` in the fixed tree order used by group reductions.
    pub checksum: T,
}

/// Runs one kernel on copies of `inputs` whose array views start
/// `alignment_offset` (0 or 1) elements past a 64-byte aligned base.
pub fn run<T: Real>(
    spec: &KernelSpec,
    backend: &dyn Backend,
    inputs: &Inputs<T>,
    alignment_offset: usize,
) -> Result<Outputs<T>, KernelError> {
    if T::PRECISION != spec.precision {
        return Err(KernelError::PrecisionMismatch {
            kernel: spec.id.clone(),
            got: T::PRECISION,
        });
    }
    if alignment_offset > 1 {
        return Err(KernelError::InvalidAlignmentOffset(alignment_offset));
    }
    if inputs.operation() != spec.operation {
        return Err(KernelError::ShapeMismatch(format!(
            "{} given {} inputs",
            spec.id,
            inputs.operation()
        )));
    }
    if !backend.supports(spec.operation, spec.precision, spec.layout) {
        return Err(KernelError::UnsupportedCombination {
            backend: backend.name().to_string(),
            kernel: spec.id.clone(),
        });
    }
    validate_shapes(spec, inputs)?;

    let align = |data: &[T]| AlignedVec::from_slice(data, alignment_offset);
    let kernels = T::kernels(backend);
    let required = backend.required_alignment();
    let check_alignment = |ptr: *const T| -> Result<(), KernelError> {
        if required > 0 && ptr as usize % required != 0 {
            Err(KernelError::Misaligned {
                backend: backend.name().to_string(),
                required,
            })
        } else {
            Ok(())
        }
    };

    let values = match inputs {
        Inputs::Axpy { alpha, x, y } => {
            let xa = align(x)?;
            let mut ya = align(y)?;
            check_alignment(xa.as_slice().as_ptr())?;
            check_alignment(ya.as_slice().as_ptr())?;
            kernels.axpy(*alpha, xa.as_slice(), ya.as_mut_slice());
            ya.as_slice().to_vec()
        }
        Inputs::Scale { alpha, x } => {
            let mut xa = align(x)?;
            check_alignment(xa.as_slice().as_ptr())?;
            kernels.scale(*alpha, xa.as_mut_slice());
            xa.as_slice().to_vec()
        }
        Inputs::Dot { x, y } => {
            let xa = align(x)?;
            let ya = align(y)?;
            check_alignment(xa.as_slice().as_ptr())?;
            check_alignment(ya.as_slice().as_ptr())?;
            vec![kernels.dot(xa.as_slice(), ya.as_slice())]
        }
        Inputs::CsrSpmv { a, x } => {
            let row_ptr = AlignedVec::from_slice(a.row_ptr(), alignment_offset)?;
            let col_idx = AlignedVec::from_slice(a.col_idx(), alignment_offset)?;
            let vals = align(a.values())?;
            let xa = align(x)?;
            let mut ya = AlignedVec::<T>::zeroed(a.rows(), alignment_offset)?;
            check_alignment(vals.as_slice().as_ptr())?;
            check_alignment(xa.as_slice().as_ptr())?;
            let view = CsrView {
                rows: a.rows(),
                cols: a.cols(),
                row_ptr: row_ptr.as_slice(),
                col_idx: col_idx.as_slice(),
                values: vals.as_slice(),
            };
            kernels.csr_spmv(view, xa.as_slice(), ya.as_mut_slice());
            ya.as_slice().to_vec()
        }
        Inputs::DenseMv { a, x } => {
            let data = align(a.data())?;
            let xa = align(x)?;
            let mut ya = AlignedVec::<T>::zeroed(a.rows(), alignment_offset)?;
            check_alignment(data.as_slice().as_ptr())?;
            check_alignment(xa.as_slice().as_ptr())?;
            let view = DenseView {
                rows: a.rows(),
                cols: a.cols(),
                layout: a.layout(),
                data: data.as_slice(),
            };
            kernels.dense_mv(view, xa.as_slice(), ya.as_mut_slice());
            ya.as_slice().to_vec()
        }
    };
    let checksum = tree_sum(&values);
    Ok(Outputs { values, checksum })
}

fn validate_shapes<T: Real>(spec: &KernelSpec, inputs: &Inputs<T>) -> Result<(), KernelError> {
    let mismatch = |msg: String| Err(KernelError::ShapeMismatch(format!("{}: {msg}", spec.id)));
    match inputs {
        Inputs::Axpy { x, y, .. } | Inputs::Dot { x, y } => {
            if x.len() != y.len() {
                return mismatch(format!("x has {} elements, y has {}", x.len(), y.len()));
            }
        }
        Inputs::Scale { .. } => {}
        Inputs::CsrSpmv { a, x } => {
            if x.len() != a.cols() {
                return mismatch(format!("x has {} elements, matrix has {} columns", x.len(), a.cols()));
            }
        }
        Inputs::DenseMv { a, x } => {
            if x.len() != a.cols() {
                return mismatch(format!("x has {} elements, matrix has {} columns", x.len(), a.cols()));
            }
            if a.layout() != spec.layout {
                return mismatch(format!("matrix is {}, kernel expects {}", a.layout(), spec.layout));
            }
        }
    }
    if spec.operation == Operation::DenseMv && spec.layout == super::Layout::Neutral {
        return mismatch("dense_mv needs a layout".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{
        CsrMatrix, DenseMatrix, Layout, OptimizedBackend, Precision, ReferenceBackend, Trap,
    };

    fn spec(op: Operation, p: Precision) -> KernelSpec {
        KernelSpec::new(op, p, op.layouts()[0])
    }

    #[test]
    fn axpy_identity_like() {
        let inputs = Inputs::Axpy {
            alpha: 1.0f64,
            x: vec![1.0, 2.0],
            y: vec![0.0, 0.0],
        };
        let out = run(&spec(Operation::Axpy, Precision::Double), &ReferenceBackend, &inputs, 0).unwrap();
        assert_eq!(out.values, vec![1.0, 2.0]);
        assert_eq!(out.checksum, 3.0);
    }

    #[test]
    fn csr_identity() {
        let inputs = Inputs::CsrSpmv {
            a: CsrMatrix::<f64>::new(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).unwrap(),
            x: vec![3.0, 4.0],
        };
        for backend in [&ReferenceBackend as &dyn Backend, &OptimizedBackend] {
            for offset in [0, 1] {
                let out = run(&spec(Operation::CsrSpmv, Precision::Double), backend, &inputs, offset).unwrap();
                assert_eq!(out.values, vec![3.0, 4.0]);
            }
        }
    }

    #[test]
    fn dot_of_ones_is_exact() {
        let inputs = Inputs::Dot {
            x: vec![1.0f64; 1000],
            y: vec![1.0f64; 1000],
        };
        for backend in [&ReferenceBackend as &dyn Backend, &OptimizedBackend] {
            let out = run(&spec(Operation::Dot, Precision::Double), backend, &inputs, 1).unwrap();
            assert_eq!(out.values, vec![1000.0]);
        }
    }

    #[test]
    fn dense_layouts_agree() {
        let a_row = DenseMatrix::<f32>::from_fn(3, 2, Layout::RowMajor, |i, j| (i * 2 + j) as f32);
        let a_col = DenseMatrix::<f32>::from_fn(3, 2, Layout::ColMajor, |i, j| (i * 2 + j) as f32);
        let x = vec![1.0, -1.0];
        let row = KernelSpec::new(Operation::DenseMv, Precision::Single, Layout::RowMajor);
        let col = KernelSpec::new(Operation::DenseMv, Precision::Single, Layout::ColMajor);
        let r = run(&row, &ReferenceBackend, &Inputs::DenseMv { a: a_row, x: x.clone() }, 0).unwrap();
        let c = run(&col, &OptimizedBackend, &Inputs::DenseMv { a: a_col, x }, 1).unwrap();
        assert_eq!(r.values, vec![-1.0, -1.0, -1.0]);
        assert_eq!(r.values, c.values);
    }

    #[test]
    fn error_paths() {
        let s = spec(Operation::Axpy, Precision::Double);
        let bad = Inputs::Axpy {
            alpha: 1.0f64,
            x: vec![1.0],
            y: vec![1.0, 2.0],
        };
        assert!(matches!(run(&s, &ReferenceBackend, &bad, 0), Err(KernelError::ShapeMismatch(_))));
        let ok = Inputs::Axpy {
            alpha: 1.0f64,
            x: vec![1.0],
            y: vec![1.0],
        };
        assert!(matches!(
            run(&s, &ReferenceBackend, &ok, 2),
            Err(KernelError::InvalidAlignmentOffset(2))
        ));
        let single = Inputs::Axpy {
            alpha: 1.0f32,
            x: vec![1.0],
            y: vec![1.0],
        };
        assert!(matches!(
            run(&s, &ReferenceBackend, &single, 0),
            Err(KernelError::PrecisionMismatch { .. })
        ));
        let dot = spec(Operation::Dot, Precision::Double);
        assert!(matches!(run(&dot, &ReferenceBackend, &ok, 0), Err(KernelError::ShapeMismatch(_))));
    }

    struct DoubleOnly;
    impl<T: Real> crate::kernels::Kernels<T> for DoubleOnly {
        fn axpy(&self, a: T, x: &[T], y: &mut [T]) {
            ReferenceBackend.axpy(a, x, y)
        }
        fn scale(&self, a: T, x: &mut [T]) {
            crate::kernels::Kernels::<T>::scale(&ReferenceBackend, a, x)
        }
        fn dot(&self, x: &[T], y: &[T]) -> T {
            ReferenceBackend.dot(x, y)
        }
        fn csr_spmv(&self, a: CsrView<'_, T>, x: &[T], y: &mut [T]) {
            ReferenceBackend.csr_spmv(a, x, y)
        }
        fn dense_mv(&self, a: DenseView<'_, T>, x: &[T], y: &mut [T]) {
            ReferenceBackend.dense_mv(a, x, y)
        }
    }
    impl Backend for DoubleOnly {
        fn name(&self) -> &str {
            "double-only"
        }
        fn required_alignment(&self) -> usize {
            64
        }
        fn supports(&self, _: Operation, p: Precision, _: Layout) -> bool {
            p == Precision::Double
        }
    }

    #[test]
    fn unsupported_and_misaligned_are_reported() {
        let s32 = spec(Operation::Dot, Precision::Single);
        let inputs = Inputs::Dot {
            x: vec![1.0f32; 4],
            y: vec![1.0f32; 4],
        };
        assert!(matches!(
            run(&s32, &DoubleOnly, &inputs, 0),
            Err(KernelError::UnsupportedCombination { .. })
        ));
        let s64 = spec(Operation::Dot, Precision::Double);
        let inputs = Inputs::Dot {
            x: vec![1.0f64; 4],
            y: vec![1.0f64; 4],
        };
        assert!(run(&s64, &DoubleOnly, &inputs, 0).is_ok());
        assert!(matches!(
            run(&s64, &DoubleOnly, &inputs, 1),
            Err(KernelError::Misaligned { required: 64, .. })
        ));
    }

    #[test]
    fn unaligned_trap_drops_last_element_only_when_shifted() {
        let s = spec(Operation::Axpy, Precision::Double);
        let inputs = Inputs::Axpy {
            alpha: 1.0f64,
            x: vec![1.0; 5],
            y: vec![0.0; 5],
        };
        let trap = Trap::UnalignedDrop.backend();
        assert_eq!(run(&s, trap.as_ref(), &inputs, 0).unwrap().values, vec![1.0; 5]);
        assert_eq!(
            run(&s, trap.as_ref(), &inputs, 1).unwrap().values,
            vec![1.0, 1.0, 1.0, 1.0, 0.0]
        );
    }
}
