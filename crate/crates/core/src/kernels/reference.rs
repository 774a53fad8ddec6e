use super::{Backend, CsrView, DenseView, Kernels, Layout, Real};

/// Scalar loops in canonical order. The semantics oracle for every other backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceBackend;

impl<T: Real> Kernels<T> for ReferenceBackend {
    fn axpy(&self, alpha: T, x: &[T], y: &mut [T]) {
        for i in 0..y.len() {
            y[i] = alpha * x[i] + y[i];
        }
    }

    fn scale(&self, alpha: T, x: &mut [T]) {
        for v in x.iter_mut() {
            *v = alpha * *v;
        }
    }

    fn dot(&self, x: &[T], y: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..x.len() {
            acc = acc + x[i] * y[i];
        }
        acc
    }

    fn csr_spmv(&self, a: CsrView<'_, T>, x: &[T], y: &mut [T]) {
        for i in 0..a.rows {
            let mut acc = T::zero();
            for k in a.row_ptr[i] as usize..a.row_ptr[i + 1] as usize {
                acc = acc + a.values[k] * x[a.col_idx[k] as usize];
            }
            y[i] = acc;
        }
    }

    fn dense_mv(&self, a: DenseView<'_, T>, x: &[T], y: &mut [T]) {
        for i in 0..a.rows {
            let mut acc = T::zero();
            for j in 0..a.cols {
                let aij = match a.layout {
                    Layout::ColMajor => a.data[j * a.rows + i],
                    _ => a.data[i * a.cols + j],
                };
                acc = acc + aij * x[j];
            }
            y[i] = acc;
        }
    }
}

impl Backend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }
}
