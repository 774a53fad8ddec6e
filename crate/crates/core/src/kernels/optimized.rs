use super::{Backend, CsrView, DenseView, Kernels, Layout, Real};

const LANES: usize = 4;
const ROW_BLOCK: usize = 4;

/// 4-way unrolled loops with split accumulators for reductions and
/// row/column blocking for `dense_mv`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimizedBackend;

fn sum4<T: Real>(acc: [T; LANES]) -> T {
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

impl<T: Real> Kernels<T> for OptimizedBackend {
    fn axpy(&self, alpha: T, x: &[T], y: &mut [T]) {
        let mut yc = y.chunks_exact_mut(LANES);
        let mut xc = x.chunks_exact(LANES);
        for (yb, xb) in (&mut yc).zip(&mut xc) {
            yb[0] = alpha * xb[0] + yb[0];
            yb[1] = alpha * xb[1] + yb[1];
            yb[2] = alpha * xb[2] + yb[2];
            yb[3] = alpha * xb[3] + yb[3];
        }
        for (yv, &xv) in yc.into_remainder().iter_mut().zip(xc.remainder()) {
            *yv = alpha * xv + *yv;
        }
    }

    fn scale(&self, alpha: T, x: &mut [T]) {
        let mut xc = x.chunks_exact_mut(LANES);
        for xb in &mut xc {
            xb[0] = alpha * xb[0];
            xb[1] = alpha * xb[1];
            xb[2] = alpha * xb[2];
            xb[3] = alpha * xb[3];
        }
        for v in xc.into_remainder() {
            *v = alpha * *v;
        }
    }

    fn dot(&self, x: &[T], y: &[T]) -> T {
        let mut acc = [T::zero(); LANES];
        let xc = x.chunks_exact(LANES);
        let yc = y.chunks_exact(LANES);
        let (xr, yr) = (xc.remainder(), yc.remainder());
        for (xb, yb) in xc.zip(yc) {
            for l in 0..LANES {
                acc[l] = acc[l] + xb[l] * yb[l];
            }
        }
        let mut total = sum4(acc);
        for (&a, &b) in xr.iter().zip(yr) {
            total = total + a * b;
        }
        total
    }

    fn csr_spmv(&self, a: CsrView<'_, T>, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(a.rows) {
            let lo = a.row_ptr[i] as usize;
            let hi = a.row_ptr[i + 1] as usize;
            let cols = &a.col_idx[lo..hi];
            let vals = &a.values[lo..hi];
            let mut acc = [T::zero(); LANES];
            let cc = cols.chunks_exact(LANES);
            let vc = vals.chunks_exact(LANES);
            let (cr, vr) = (cc.remainder(), vc.remainder());
            for (cb, vb) in cc.zip(vc) {
                for l in 0..LANES {
                    acc[l] = acc[l] + vb[l] * x[cb[l] as usize];
                }
            }
            let mut total = sum4(acc);
            for (&c, &v) in cr.iter().zip(vr) {
                total = total + v * x[c as usize];
            }
            *yi = total;
        }
    }

    fn dense_mv(&self, a: DenseView<'_, T>, x: &[T], y: &mut [T]) {
        match a.layout {
            Layout::ColMajor => {
                // column sweep in blocks of ROW_BLOCK columns; per-row order stays j-ascending
                y[..a.rows].fill(T::zero());
                let mut j = 0;
                while j < a.cols {
                    let jend = (j + ROW_BLOCK).min(a.cols);
                    for (i, yi) in y.iter_mut().enumerate().take(a.rows) {
                        let mut acc = *yi;
                        for jj in j..jend {
                            acc = acc + a.data[jj * a.rows + i] * x[jj];
                        }
                        *yi = acc;
                    }
                    j = jend;
                }
            }
            _ => {
                let mut i = 0;
                while i + ROW_BLOCK <= a.rows {
                    let mut acc = [T::zero(); ROW_BLOCK];
                    for (j, &xj) in x.iter().enumerate().take(a.cols) {
                        for (r, accr) in acc.iter_mut().enumerate() {
                            *accr = *accr + a.data[(i + r) * a.cols + j] * xj;
                        }
                    }
                    y[i..i + ROW_BLOCK].copy_from_slice(&acc);
                    i += ROW_BLOCK;
                }
                for (r, yr) in y.iter_mut().enumerate().take(a.rows).skip(i) {
                    let row = &a.data[r * a.cols..(r + 1) * a.cols];
                    let mut acc = T::zero();
                    for (&aij, &xj) in row.iter().zip(x) {
                        acc = acc + aij * xj;
                    }
                    *yr = acc;
                }
            }
        }
    }
}

impl Backend for OptimizedBackend {
    fn name(&self) -> &str {
        "optimized"
    }
}
