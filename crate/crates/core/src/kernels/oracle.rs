//! Instrumented traffic oracle: interprets a kernel's loop nest one scalar
//! access at a time and counts flops and bytes, independently of the
//! closed-form cost model.

use std::collections::HashSet;

use super::data::Inputs;
use super::{Cost, KernelError, KernelSpec, Layout, Real, INDEX_BYTES};

/// Largest array the oracle is willing to interpret.
pub const ORACLE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ArrayId(usize);

#[derive(Debug, Default)]
struct Tracer {
    widths: Vec<u64>,
    flops: u64,
    read_bytes: u64,
    write_bytes: u64,
    read_set: HashSet<(usize, usize)>,
    write_set: HashSet<(usize, usize)>,
}

impl Tracer {
    fn array(&mut self, width: u64) -> ArrayId {
        self.widths.push(width);
        ArrayId(self.widths.len() - 1)
    }

    fn read(&mut self, a: ArrayId, i: usize) {
        self.read_bytes += self.widths[a.0];
        self.read_set.insert((a.0, i));
    }

    fn write(&mut self, a: ArrayId, i: usize) {
        self.write_bytes += self.widths[a.0];
        self.write_set.insert((a.0, i));
    }

    fn flops(&mut self, k: u64) {
        self.flops += k;
    }

    fn distinct_bytes(&self, set: &HashSet<(usize, usize)>) -> u64 {
        set.iter().map(|&(a, _)| self.widths[a]).sum()
    }

    /// Idealized: every distinct address once per direction. Realistic: every
    /// issued access plus one write-allocate read per distinct written address.
    fn finish(self) -> Cost {
        let distinct_reads = self.distinct_bytes(&self.read_set);
        let distinct_writes = self.distinct_bytes(&self.write_set);
        Cost {
            flops: self.flops,
            bytes_idealized: distinct_reads + distinct_writes,
            bytes_realistic: self.read_bytes + self.write_bytes + distinct_writes,
        }
    }
}

fn check_size(len: usize) -> Result<(), KernelError> {
    if len > ORACLE_LIMIT {
        Err(KernelError::TooLarge {
            len,
            limit: ORACLE_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// Counts flops and realistic/idealized bytes by interpreting `spec` on `inputs`.
pub fn traffic_oracle<T: Real>(spec: &KernelSpec, inputs: &Inputs<T>) -> Result<Cost, KernelError> {
    if inputs.operation() != spec.operation {
        return Err(KernelError::ShapeMismatch(format!(
            "{} given {} inputs",
            spec.id,
            inputs.operation()
        )));
    }
    let e = spec.element_bytes();
    let mut t = Tracer::default();
    match inputs {
        Inputs::Axpy { x, .. } => {
            check_size(x.len())?;
            let (xa, ya) = (t.array(e), t.array(e));
            for i in 0..x.len() {
                // y[i] = alpha * x[i] + y[i]
                t.read(xa, i);
                t.read(ya, i);
                t.flops(2);
                t.write(ya, i);
            }
        }
        Inputs::Scale { x, .. } => {
            check_size(x.len())?;
            let xa = t.array(e);
            for i in 0..x.len() {
                t.read(xa, i);
                t.flops(1);
                t.write(xa, i);
            }
        }
        Inputs::Dot { x, .. } => {
            check_size(x.len())?;
            let (xa, ya) = (t.array(e), t.array(e));
            // acc starts at zero in a register; every term costs a multiply and an add
            for i in 0..x.len() {
                t.read(xa, i);
                t.read(ya, i);
                t.flops(2);
            }
        }
        Inputs::CsrSpmv { a, x } => {
            check_size(a.nnz().max(x.len()).max(a.rows()))?;
            let row_ptr = t.array(INDEX_BYTES);
            let col_idx = t.array(INDEX_BYTES);
            let values = t.array(e);
            let xa = t.array(e);
            let ya = t.array(e);
            t.read(row_ptr, 0);
            let mut start = a.row_ptr()[0] as usize;
            for i in 0..a.rows() {
                t.read(row_ptr, i + 1);
                let end = a.row_ptr()[i + 1] as usize;
                for k in start..end {
                    t.read(values, k);
                    t.read(col_idx, k);
                    t.read(xa, a.col_idx()[k] as usize);
                    t.flops(2);
                }
                t.write(ya, i);
                start = end;
            }
        }
        Inputs::DenseMv { a, .. } => {
            check_size(a.rows() * a.cols())?;
            let (aa, xa, ya) = (t.array(e), t.array(e), t.array(e));
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    let idx = match a.layout() {
                        Layout::ColMajor => j * a.rows() + i,
                        _ => i * a.cols() + j,
                    };
                    t.read(aa, idx);
                    t.read(xa, j);
                    t.flops(2);
                }
                t.write(ya, i);
            }
        }
    }
    Ok(t.finish())
}

/// Traffic of the calibration triad `a[i] = b[i] + s·c[i]` over `n` elements.
pub fn triad_traffic(n: usize, element_bytes: u64) -> Result<Cost, KernelError> {
    check_size(n)?;
    let mut t = Tracer::default();
    let (a, b, c) = (t.array(element_bytes), t.array(element_bytes), t.array(element_bytes));
    for i in 0..n {
        t.read(b, i);
        t.read(c, i);
        t.flops(2);
        t.write(a, i);
    }
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{CsrMatrix, Operation, Precision};

    fn spec(op: Operation) -> KernelSpec {
        KernelSpec::new(op, Precision::Double, op.layouts()[0])
    }

    #[test]
    fn axpy_seven() {
        let inputs = Inputs::Axpy {
            alpha: 2.0f64,
            x: vec![0.0; 7],
            y: vec![0.0; 7],
        };
        let c = traffic_oracle(&spec(Operation::Axpy), &inputs).unwrap();
        assert_eq!((c.flops, c.bytes_realistic, c.bytes_idealized), (14, 224, 168));
    }

    #[test]
    fn dot_one() {
        let inputs = Inputs::Dot {
            x: vec![1.0f64],
            y: vec![1.0f64],
        };
        let c = traffic_oracle(&spec(Operation::Dot), &inputs).unwrap();
        assert_eq!((c.flops, c.bytes_realistic, c.bytes_idealized), (2, 16, 16));
    }

    #[test]
    fn csr_identity_matches_hand_count() {
        let inputs = Inputs::CsrSpmv {
            a: CsrMatrix::<f64>::identity(2),
            x: vec![3.0, 4.0],
        };
        let c = traffic_oracle(&spec(Operation::CsrSpmv), &inputs).unwrap();
        assert_eq!((c.flops, c.bytes_realistic, c.bytes_idealized), (4, 84, 68));
    }

    #[test]
    fn triad_counts_write_allocate() {
        let c = triad_traffic(1000, 8).unwrap();
        assert_eq!(c.bytes_realistic, 32000);
        assert_eq!(c.bytes_idealized, 24000);
    }

    #[test]
    fn too_large() {
        let n = ORACLE_LIMIT + 1;
        let inputs = Inputs::Scale {
            alpha: 1.0f32,
            x: vec![0.0; n],
        };
        let s = KernelSpec::new(Operation::Scale, Precision::Single, crate::kernels::Layout::Neutral);
        assert!(matches!(traffic_oracle(&s, &inputs), Err(KernelError::TooLarge { .. })));
    }
}
