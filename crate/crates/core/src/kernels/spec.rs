use std::fmt;

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Size of one sparse index (row pointer or column index) in bytes.
pub const INDEX_BYTES: u64 = 4;

/// Half bandwidth of the banded CSR matrices used for benchmarks and tests.
pub const CSR_HALF_BANDWIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub const ALL: [Precision; 2] = [Precision::Single, Precision::Double];

    pub fn element_bytes(self) -> u64 {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    /// Short tag used in kernel ids and machine-model peak keys.
    pub fn tag(self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" | "f32" => Some(Precision::Single),
            "double" | "f64" => Some(Precision::Double),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Axpy,
    Scale,
    Dot,
    CsrSpmv,
    DenseMv,
}

impl Operation {
    pub const ALL: [Operation; 5] = [
        Operation::Axpy,
        Operation::Scale,
        Operation::Dot,
        Operation::CsrSpmv,
        Operation::DenseMv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::Axpy => "axpy",
            Operation::Scale => "scale",
            Operation::Dot => "dot",
            Operation::CsrSpmv => "csr_spmv",
            Operation::DenseMv => "dense_mv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }

    /// Layouts this operation is registered for.
    pub fn layouts(self) -> &'static [Layout] {
        match self {
            Operation::DenseMv => &[Layout::RowMajor, Layout::ColMajor],
            _ => &[Layout::Neutral],
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Matrix storage order. Only `dense_mv` distinguishes row and column major;
/// every other kernel is layout-neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    RowMajor,
    ColMajor,
    Neutral,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::RowMajor => "row_major",
            Layout::ColMajor => "col_major",
            Layout::Neutral => "neutral",
        }
    }

    fn id_suffix(self) -> Option<&'static str> {
        match self {
            Layout::RowMajor => Some("row"),
            Layout::ColMajor => Some("col"),
            Layout::Neutral => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "row_major" | "row" => Some(Layout::RowMajor),
            "col_major" | "col" => Some(Layout::ColMajor),
            "neutral" | "none" => Some(Layout::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Problem dimensions in the form each operation's cost formulas need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Vector { n: u64 },
    Csr { rows: u64, cols: u64, nnz: u64 },
    Dense { rows: u64, cols: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Cost {
    pub flops: u64,
    pub bytes_realistic: u64,
    pub bytes_idealized: u64,
}

/// A kernel's identity. Flop and traffic counts come from [`KernelSpec::cost`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KernelSpec {
    pub id: String,
    pub operation: Operation,
    pub precision: Precision,
    pub layout: Layout,
}

impl KernelSpec {
    pub fn new(operation: Operation, precision: Precision, layout: Layout) -> Self {
        let mut id = format!("{}.{}", operation.name(), precision.tag());
        if let Some(suffix) = layout.id_suffix() {
            id.push('.');
            id.push_str(suffix);
        }
        Self {
            id,
            operation,
            precision,
            layout,
        }
    }

    /// Every registered kernel, sorted by id.
    pub fn all() -> Vec<KernelSpec> {
        let mut specs: Vec<_> = Operation::ALL
            .iter()
            .flat_map(|&op| {
                Precision::ALL.iter().flat_map(move |&p| {
                    op.layouts()
                        .iter()
                        .map(move |&l| KernelSpec::new(op, p, l))
                })
            })
            .collect();
        specs.sort_by(|a, b| a.id.cmp(&b.id));
        specs
    }

    pub fn element_bytes(&self) -> u64 {
        self.precision.element_bytes()
    }

    /// Shape of the generated problem for a benchmark size `n`.
    ///
    /// Vector kernels use `n` elements. `csr_spmv` uses an `n × n` banded
    /// matrix with half bandwidth [`CSR_HALF_BANDWIDTH`]. `dense_mv` uses a
    /// square `m × m` matrix with `m = ceil(sqrt(n))`, so that `n` tracks the
    /// matrix element count for every kernel.
    pub fn shape_for(&self, n: u64) -> Result<Shape, KernelError> {
        if n == 0 {
            return Err(KernelError::InvalidSize(format!("{}: n must be >= 1", self.id)));
        }
        Ok(match self.operation {
            Operation::Axpy | Operation::Scale | Operation::Dot => Shape::Vector { n },
            Operation::CsrSpmv => Shape::Csr {
                rows: n,
                cols: n,
                nnz: banded_nnz(n, CSR_HALF_BANDWIDTH as u64),
            },
            Operation::DenseMv => {
                let m = ceil_sqrt(n);
                Shape::Dense { rows: m, cols: m }
            }
        })
    }

    /// Closed-form flop count and realistic/idealized byte traffic.
    pub fn cost(&self, shape: Shape) -> Result<Cost, KernelError> {
        cost(self, shape)
    }

    /// Bytes of distinct data the kernel touches; used to pick a bandwidth level.
    pub fn footprint_bytes(&self, shape: Shape) -> Result<u64, KernelError> {
        self.check_shape(shape)?;
        let e = self.element_bytes();
        Ok(match shape {
            Shape::Vector { n } => match self.operation {
                Operation::Scale => e * n,
                _ => 2 * e * n,
            },
            Shape::Csr { rows, cols, nnz } => {
                nnz * (e + INDEX_BYTES) + INDEX_BYTES * (rows + 1) + e * (cols + rows)
            }
            Shape::Dense { rows, cols } => e * (rows * cols + rows + cols),
        })
    }

    pub(crate) fn check_shape(&self, shape: Shape) -> Result<(), KernelError> {
        let ok = match (self.operation, shape) {
            (Operation::Axpy | Operation::Scale | Operation::Dot, Shape::Vector { n }) => n >= 1,
            (Operation::CsrSpmv, Shape::Csr { rows, cols, nnz }) => {
                rows >= 1 && cols >= 1 && nnz <= rows.saturating_mul(cols)
            }
            (Operation::DenseMv, Shape::Dense { rows, cols }) => rows >= 1 && cols >= 1,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(KernelError::InvalidSize(format!("{}: invalid shape {shape:?}", self.id)))
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Evaluates the closed-form cost model.
///
/// With element size `e` and 4-byte indices:
///
/// | kernel   | flops  | idealized                               | realistic                                  |
/// |----------|--------|-----------------------------------------|--------------------------------------------|
/// | axpy     | 2n     | 3en                                     | 4en                                        |
/// | scale    | n      | 2en                                     | 3en                                        |
/// | dot      | 2n     | 2en                                     | 2en                                        |
/// | csr_spmv | 2·nnz  | nnz(e+4) + 4(rows+1) + e·cols + e·rows  | idealized + e·rows + e·max(0, nnz − cols)  |
/// | dense_mv | 2rc    | e(rc + c + r)                           | e(2rc + 2r)                                |
///
/// Realistic traffic charges a write-allocate read for every written element
/// and every re-read of `x`; idealized traffic charges each distinct address
/// once per direction.
pub fn cost(spec: &KernelSpec, shape: Shape) -> Result<Cost, KernelError> {
    spec.check_shape(shape)?;
    let e = spec.element_bytes();
    let cost = match (spec.operation, shape) {
        (Operation::Axpy, Shape::Vector { n }) => Cost {
            flops: 2 * n,
            bytes_realistic: 4 * e * n,
            bytes_idealized: 3 * e * n,
        },
        (Operation::Scale, Shape::Vector { n }) => Cost {
            flops: n,
            bytes_realistic: 3 * e * n,
            bytes_idealized: 2 * e * n,
        },
        (Operation::Dot, Shape::Vector { n }) => Cost {
            flops: 2 * n,
            bytes_realistic: 2 * e * n,
            bytes_idealized: 2 * e * n,
        },
        (Operation::CsrSpmv, Shape::Csr { rows, cols, nnz }) => {
            let ideal = nnz * (e + INDEX_BYTES) + INDEX_BYTES * (rows + 1) + e * cols + e * rows;
            Cost {
                flops: 2 * nnz,
                bytes_realistic: ideal + e * rows + nnz.saturating_sub(cols) * e,
                bytes_idealized: ideal,
            }
        }
        (Operation::DenseMv, Shape::Dense { rows, cols }) => Cost {
            flops: 2 * rows * cols,
            bytes_realistic: e * (2 * rows * cols + 2 * rows),
            bytes_idealized: e * (rows * cols + cols + rows),
        },
        _ => unreachable!("shape checked above"),
    };
    Ok(cost)
}

/// Nonzeros of an `n × n` band matrix with the given half bandwidth.
pub fn banded_nnz(n: u64, half_bandwidth: u64) -> u64 {
    (0..n)
        .map(|i| (i + half_bandwidth).min(n - 1) - i.saturating_sub(half_bandwidth) + 1)
        .sum()
}

fn ceil_sqrt(n: u64) -> u64 {
    let mut m = (n as f64).sqrt() as u64;
    while m * m < n {
        m += 1;
    }
    while m > 1 && (m - 1) * (m - 1) >= n {
        m -= 1;
    }
    m
}
