//! Data carriers: alignment-controlled vectors, CSR and dense matrices, and
//! seeded problem generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KernelError, KernelSpec, Layout, Operation, Real, CSR_HALF_BANDWIDTH};

/// Alignment of the base every array view is placed relative to.
pub const BASE_ALIGNMENT: usize = 64;

/// A vector whose first element sits `offset` elements past a 64-byte
/// aligned address.
#[derive(Debug, Clone)]
pub struct AlignedVec<T> {
    storage: Vec<T>,
    start: usize,
    len: usize,
}

impl<T: Copy + Default> AlignedVec<T> {
    /// `len` default-valued elements starting `offset` elements past an aligned base.
    pub fn zeroed(len: usize, offset: usize) -> Result<Self, KernelError> {
        let elem = std::mem::size_of::<T>().max(1);
        let total = len + BASE_ALIGNMENT / elem + offset + 1;
        let mut storage: Vec<T> = Vec::new();
        storage
            .try_reserve_exact(total)
            .map_err(|_| KernelError::AllocationFailure(total * elem))?;
        storage.resize(total, T::default());
        let base = storage.as_ptr().align_offset(BASE_ALIGNMENT);
        if base == usize::MAX || base + offset + len > total {
            return Err(KernelError::AllocationFailure(total * elem));
        }
        Ok(Self {
            storage,
            start: base + offset,
            len,
        })
    }

    pub fn from_slice(data: &[T], offset: usize) -> Result<Self, KernelError> {
        let mut v = Self::zeroed(data.len(), offset)?;
        v.copy_from(data);
        Ok(v)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.storage[self.start..self.start + self.len]
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.storage[self.start..self.start + self.len]
    }

    pub fn copy_from(&mut self, src: &[T]) {
        self.as_mut_slice().copy_from_slice(src);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Compressed sparse row matrix with 32-bit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<u32>,
        col_idx: Vec<u32>,
        values: Vec<T>,
    ) -> Result<Self, KernelError> {
        let bad = |msg: String| Err(KernelError::InvalidMatrix(msg));
        if row_ptr.len() != rows + 1 {
            return bad(format!("row_ptr has {} entries, expected {}", row_ptr.len(), rows + 1));
        }
        if row_ptr[0] != 0 {
            return bad("row_ptr[0] must be 0".into());
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_ptr must be non-decreasing".into());
        }
        let nnz = row_ptr[rows] as usize;
        if col_idx.len() != nnz || values.len() != nnz {
            return bad(format!(
                "nnz = {nnz} but col_idx has {} and values has {} entries",
                col_idx.len(),
                values.len()
            ));
        }
        if let Some(c) = col_idx.iter().find(|&&c| c as usize >= cols) {
            return bad(format!("column index {c} out of range for {cols} columns"));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let row_ptr = (0..=n as u32).collect();
        let col_idx = (0..n as u32).collect();
        Self::new(n, n, row_ptr, col_idx, vec![T::one(); n]).expect("identity is valid")
    }

    /// `n × n` band matrix with uniform random values in [-1, 1].
    pub fn banded(n: usize, half_bandwidth: usize, rng: &mut impl Rng) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0u32);
        for i in 0..n {
            let lo = i.saturating_sub(half_bandwidth);
            let hi = (i + half_bandwidth).min(n - 1);
            for j in lo..=hi {
                col_idx.push(j as u32);
                values.push(T::from_f64(rng.gen_range(-1.0..=1.0)));
            }
            row_ptr.push(col_idx.len() as u32);
        }
        Self::new(n, n, row_ptr, col_idx, values).expect("band matrix is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[u32] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Rows `range` as a standalone matrix with rebased row pointers.
    pub fn row_block(&self, range: std::ops::Range<usize>) -> Self {
        let lo = self.row_ptr[range.start];
        let hi = self.row_ptr[range.end];
        let row_ptr = self.row_ptr[range.start..=range.end]
            .iter()
            .map(|p| p - lo)
            .collect();
        Self::new(
            range.len(),
            self.cols,
            row_ptr,
            self.col_idx[lo as usize..hi as usize].to_vec(),
            self.values[lo as usize..hi as usize].to_vec(),
        )
        .expect("row block of a valid matrix is valid")
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn view(&self) -> CsrView<'_, T> {
        CsrView {
            rows: self.rows,
            cols: self.cols,
            row_ptr: &self.row_ptr,
            col_idx: &self.col_idx,
            values: &self.values,
        }
    }
}

/// Borrowed CSR arrays as handed to a backend.
#[derive(Debug, Clone, Copy)]
pub struct CsrView<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: &'a [u32],
    pub col_idx: &'a [u32],
    pub values: &'a [T],
}

/// Dense matrix stored in row- or column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    layout: Layout,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, layout: Layout, data: Vec<T>) -> Result<Self, KernelError> {
        if layout == Layout::Neutral {
            return Err(KernelError::InvalidMatrix(
                "dense matrix needs row_major or col_major layout".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(KernelError::InvalidMatrix(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            layout,
            data,
        })
    }

    /// Builds a matrix from an element function `f(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, layout: Layout, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        match layout {
            Layout::ColMajor => {
                for j in 0..cols {
                    for i in 0..rows {
                        data.push(f(i, j));
                    }
                }
            }
            _ => {
                for i in 0..rows {
                    for j in 0..cols {
                        data.push(f(i, j));
                    }
                }
            }
        }
        let layout = if layout == Layout::Neutral { Layout::RowMajor } else { layout };
        Self::new(rows, cols, layout, data).expect("sized by construction")
    }

    pub fn random(rows: usize, cols: usize, layout: Layout, rng: &mut impl Rng) -> Self {
        Self::from_fn(rows, cols, layout, |_, _| T::from_f64(rng.gen_range(-1.0..=1.0)))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        match self.layout {
            Layout::ColMajor => self.data[j * self.rows + i],
            _ => self.data[i * self.cols + j],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row_block(&self, range: std::ops::Range<usize>) -> Self {
        let start = range.start;
        Self::from_fn(range.len(), self.cols, self.layout, |i, j| self.get(start + i, j))
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn view(&self) -> DenseView<'_, T> {
        DenseView {
            rows: self.rows,
            cols: self.cols,
            layout: self.layout,
            data: &self.data,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseView<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub layout: Layout,
    pub data: &'a [T],
}

/// Kernel inputs, one variant per operation.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs<T> {
    Axpy { alpha: T, x: Vec<T>, y: Vec<T> },
    Scale { alpha: T, x: Vec<T> },
    Dot { x: Vec<T>, y: Vec<T> },
    CsrSpmv { a: CsrMatrix<T>, x: Vec<T> },
    DenseMv { a: DenseMatrix<T>, x: Vec<T> },
}

impl<T: Real> Inputs<T> {
    pub fn operation(&self) -> Operation {
        match self {
            Inputs::Axpy { .. } => Operation::Axpy,
            Inputs::Scale { .. } => Operation::Scale,
            Inputs::Dot { .. } => Operation::Dot,
            Inputs::CsrSpmv { .. } => Operation::CsrSpmv,
            Inputs::DenseMv { .. } => Operation::DenseMv,
        }
    }

    /// Seeded inputs for `spec` at benchmark size `n` (see [`KernelSpec::shape_for`]).
    /// Values are uniform in [-1, 1].
    pub fn generate(spec: &KernelSpec, n: u64, seed: u64) -> Result<Self, KernelError> {
        let shape = spec.shape_for(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vector = |len: usize, rng: &mut ChaCha8Rng| -> Result<Vec<T>, KernelError> {
            let mut v = Vec::new();
            v.try_reserve_exact(len)
                .map_err(|_| KernelError::AllocationFailure(len * std::mem::size_of::<T>()))?;
            v.extend((0..len).map(|_| T::from_f64(rng.gen_range(-1.0..=1.0))));
            Ok(v)
        };
        let n = n as usize;
        Ok(match spec.operation {
            Operation::Axpy => {
                let alpha = T::from_f64(rng.gen_range(-1.0..=1.0));
                let x = vector(n, &mut rng)?;
                let y = vector(n, &mut rng)?;
                Inputs::Axpy { alpha, x, y }
            }
            Operation::Scale => {
                let alpha = T::from_f64(rng.gen_range(-1.0..=1.0));
                Inputs::Scale {
                    alpha,
                    x: vector(n, &mut rng)?,
                }
            }
            Operation::Dot => {
                let x = vector(n, &mut rng)?;
                let y = vector(n, &mut rng)?;
                Inputs::Dot { x, y }
            }
            Operation::CsrSpmv => {
                let a = CsrMatrix::banded(n, CSR_HALF_BANDWIDTH, &mut rng);
                let x = vector(n, &mut rng)?;
                Inputs::CsrSpmv { a, x }
            }
            Operation::DenseMv => {
                let (rows, cols) = match shape {
                    super::Shape::Dense { rows, cols } => (rows as usize, cols as usize),
                    _ => unreachable!(),
                };
                let elems = rows * cols;
                let mut probe: Vec<T> = Vec::new();
                probe
                    .try_reserve_exact(elems)
                    .map_err(|_| KernelError::AllocationFailure(elems * std::mem::size_of::<T>()))?;
                drop(probe);
                let a = DenseMatrix::random(rows, cols, spec.layout, &mut rng);
                let x = vector(cols, &mut rng)?;
                Inputs::DenseMv { a, x }
            }
        })
    }

    /// The inputs with every value replaced by its magnitude. Running the
    /// reference kernel on these yields `Σ|terms|` per output, the scale the
    /// rounding error of an accumulation is measured against.
    pub fn magnitudes(&self) -> Self {
        let abs = |v: &Vec<T>| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
        match self {
            Inputs::Axpy { alpha, x, y } => Inputs::Axpy {
                alpha: alpha.abs(),
                x: abs(x),
                y: abs(y),
            },
            Inputs::Scale { alpha, x } => Inputs::Scale {
                alpha: alpha.abs(),
                x: abs(x),
            },
            Inputs::Dot { x, y } => Inputs::Dot { x: abs(x), y: abs(y) },
            Inputs::CsrSpmv { a, x } => Inputs::CsrSpmv {
                a: a.map_values(|v| v.abs()),
                x: abs(x),
            },
            Inputs::DenseMv { a, x } => Inputs::DenseMv {
                a: a.map_values(|v| v.abs()),
                x: abs(x),
            },
        }
    }

    /// Length of the leading dimension that block partitioning splits:
    /// vector length or matrix rows.
    pub fn partition_len(&self) -> usize {
        match self {
            Inputs::Axpy { x, .. } | Inputs::Scale { x, .. } | Inputs::Dot { x, .. } => x.len(),
            Inputs::CsrSpmv { a, .. } => a.rows(),
            Inputs::DenseMv { a, .. } => a.rows(),
        }
    }

    /// Rows/elements `range` of the problem; `x` of matrix kernels stays whole.
    pub fn block(&self, range: std::ops::Range<usize>) -> Self {
        match self {
            Inputs::Axpy { alpha, x, y } => Inputs::Axpy {
                alpha: *alpha,
                x: x[range.clone()].to_vec(),
                y: y[range].to_vec(),
            },
            Inputs::Scale { alpha, x } => Inputs::Scale {
                alpha: *alpha,
                x: x[range].to_vec(),
            },
            Inputs::Dot { x, y } => Inputs::Dot {
                x: x[range.clone()].to_vec(),
                y: y[range].to_vec(),
            },
            Inputs::CsrSpmv { a, x } => Inputs::CsrSpmv {
                a: a.row_block(range),
                x: x.clone(),
            },
            Inputs::DenseMv { a, x } => Inputs::DenseMv {
                a: a.row_block(range),
                x: x.clone(),
            },
        }
    }
}

/// Half-open range of the `rank`-th of `parts` contiguous blocks of `len` items.
pub fn block_range(len: usize, parts: usize, rank: usize) -> std::ops::Range<usize> {
    let start = rank * len / parts;
    let end = (rank + 1) * len / parts;
    start..end
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Precision;

    #[test]
    fn aligned_offsets() {
        let data: Vec<f64> = (0..10).map(f64::from).collect();
        let a = AlignedVec::from_slice(&data, 0).unwrap();
        assert_eq!(a.as_slice().as_ptr() as usize % BASE_ALIGNMENT, 0);
        let b = AlignedVec::from_slice(&data, 1).unwrap();
        assert_eq!(b.as_slice().as_ptr() as usize % BASE_ALIGNMENT, 8);
        assert_eq!(a.as_slice(), b.as_slice());
        let c = AlignedVec::<f32>::zeroed(5, 1).unwrap();
        assert_eq!(c.as_slice().as_ptr() as usize % BASE_ALIGNMENT, 4);
        assert_eq!(c.as_slice(), &[0.0; 5]);
    }

    #[test]
    fn csr_validation() {
        assert!(CsrMatrix::<f64>::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::<f64>::new(2, 2, vec![1, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::<f64>::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::<f64>::new(2, 2, vec![0, 1, 2], vec![0, 2], vec![1.0, 1.0]).is_err());
        let id = CsrMatrix::<f64>::identity(2);
        assert_eq!(id.row_ptr(), &[0, 1, 2]);
        assert_eq!(id.nnz(), 2);
    }

    #[test]
    fn row_blocks_rebase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = CsrMatrix::<f64>::banded(9, 2, &mut rng);
        let b = a.row_block(3..6);
        assert_eq!(b.rows(), 3);
        assert_eq!(b.row_ptr()[0], 0);
        assert_eq!(b.nnz(), 15);
        let d = DenseMatrix::<f32>::random(5, 3, Layout::ColMajor, &mut rng);
        let blk = d.row_block(2..4);
        assert_eq!(blk.get(1, 2), d.get(3, 2));
    }

    #[test]
    fn generation_is_seeded() {
        let spec = KernelSpec::new(Operation::Axpy, Precision::Double, Layout::Neutral);
        let a = Inputs::<f64>::generate(&spec, 100, 42).unwrap();
        let b = Inputs::<f64>::generate(&spec, 100, 42).unwrap();
        let c = Inputs::<f64>::generate(&spec, 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        if let Inputs::Axpy { x, .. } = &a {
            assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn block_ranges_cover() {
        let ranges: Vec<_> = (0..4).map(|r| block_range(10, 4, r)).collect();
        assert_eq!(ranges, vec![0..2, 2..5, 5..7, 7..10]);
    }
}
