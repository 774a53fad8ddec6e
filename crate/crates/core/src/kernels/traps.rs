//! Backends with planted defects. They are never registered by default and
//! exist so the test runner can demonstrate that its matrix catches the bug
//! classes it was designed around.

use std::sync::Arc;

use super::data::BASE_ALIGNMENT;
use super::{Backend, CsrView, DenseView, Kernels, Real, ReferenceBackend};
use crate::simgroup::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trap {
    /// Loses the last element whenever the data does not start on an aligned base.
    UnalignedDrop,
    /// Each rank sums the partials starting from its own, so ranks disagree.
    UnorderedReduce,
}

impl Trap {
    pub const ALL: [Trap; 2] = [Trap::UnalignedDrop, Trap::UnorderedReduce];

    /// Short name used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            Trap::UnalignedDrop => "unaligned",
            Trap::UnorderedReduce => "unordered",
        }
    }

    /// Registered backend name.
    pub fn backend_name(self) -> &'static str {
        match self {
            Trap::UnalignedDrop => "trap-unaligned-drop",
            Trap::UnorderedReduce => "trap-unordered-reduce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.flag() == s || t.backend_name() == s)
    }

    pub fn backend(self) -> Arc<dyn Backend> {
        match self {
            Trap::UnalignedDrop => Arc::new(UnalignedDropBackend),
            Trap::UnorderedReduce => Arc::new(UnorderedReduceBackend),
        }
    }
}

/// Processes aligned data correctly; computes its trip count from the aligned
/// base, so a view shifted off the base loses its final element.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnalignedDropBackend;

fn trip_count<T>(data: &[T], n: usize) -> usize {
    let misaligned = data.as_ptr() as usize % BASE_ALIGNMENT != 0;
    if misaligned {
        n.saturating_sub(1)
    } else {
        n
    }
}

impl<T: Real> Kernels<T> for UnalignedDropBackend {
    fn axpy(&self, alpha: T, x: &[T], y: &mut [T]) {
        let n = trip_count(x, y.len());
        ReferenceBackend.axpy(alpha, &x[..n], &mut y[..n]);
    }

    fn scale(&self, alpha: T, x: &mut [T]) {
        let n = trip_count(x, x.len());
        Kernels::<T>::scale(&ReferenceBackend, alpha, &mut x[..n]);
    }

    fn dot(&self, x: &[T], y: &[T]) -> T {
        let n = trip_count(x, x.len());
        ReferenceBackend.dot(&x[..n], &y[..n])
    }

    fn csr_spmv(&self, a: CsrView<'_, T>, x: &[T], y: &mut [T]) {
        let rows = trip_count(x, a.rows);
        let a = CsrView { rows, ..a };
        ReferenceBackend.csr_spmv(a, x, y);
    }

    fn dense_mv(&self, a: DenseView<'_, T>, x: &[T], y: &mut [T]) {
        let rows = trip_count(x, a.rows);
        for i in 0..rows {
            let mut acc = T::zero();
            for j in 0..a.cols {
                let aij = match a.layout {
                    super::Layout::ColMajor => a.data[j * a.rows + i],
                    _ => a.data[i * a.cols + j],
                };
                acc = acc + aij * x[j];
            }
            y[i] = acc;
        }
    }
}

impl Backend for UnalignedDropBackend {
    fn name(&self) -> &str {
        Trap::UnalignedDrop.backend_name()
    }
}

/// Reference kernels; the distributed sum is accumulated in a rank-dependent order.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnorderedReduceBackend;

impl<T: Real> Kernels<T> for UnorderedReduceBackend {
    fn axpy(&self, alpha: T, x: &[T], y: &mut [T]) {
        ReferenceBackend.axpy(alpha, x, y)
    }

    fn scale(&self, alpha: T, x: &mut [T]) {
        Kernels::<T>::scale(&ReferenceBackend, alpha, x)
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

    fn reduce_sum(&self, rank: &Rank, local: T) -> T {
        let partials = rank.allgather(local);
        let size = partials.len();
        (0..size)
            .map(|k| partials[(rank.id() + k) % size])
            .fold(T::zero(), |acc, v| acc + v)
    }
}

impl Backend for UnorderedReduceBackend {
    fn name(&self) -> &str {
        Trap::UnorderedReduce.backend_name()
    }
}
