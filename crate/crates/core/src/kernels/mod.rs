//! Kernel registry: operations behind a backend-swappable interface, with
//! closed-form cost formulas and an instrumented traffic oracle.

mod backend;
pub mod data;
mod optimized;
pub mod oracle;
mod reference;
mod run;
mod scalar;
mod spec;
mod traps;

use thiserror::Error;

pub use backend::{Backend, Kernels, Registry, Variant, VariantFilter};
pub use data::{block_range, AlignedVec, CsrMatrix, CsrView, DenseMatrix, DenseView, Inputs};
pub use optimized::OptimizedBackend;
pub use oracle::{traffic_oracle, triad_traffic, ORACLE_LIMIT};
pub use reference::ReferenceBackend;
pub use run::{run, Outputs};
pub use scalar::{ulp_distance, Real};
pub use spec::{
    banded_nnz, cost, Cost, KernelSpec, Layout, Operation, Precision, Shape, CSR_HALF_BANDWIDTH,
    INDEX_BYTES,
};
pub use traps::{Trap, UnalignedDropBackend, UnorderedReduceBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backend `{backend}` does not implement {kernel}")]
    UnsupportedCombination { backend: String, kernel: String },
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("alignment offset must be 0 or 1, got {0}")]
    InvalidAlignmentOffset(usize),
    #[error("{kernel} cannot run on {got} data")]
    PrecisionMismatch { kernel: String, got: Precision },
    #[error("problem too large for the traffic oracle ({len} > {limit} elements)")]
    TooLarge { len: usize, limit: usize },
    #[error("could not allocate {0} bytes")]
    AllocationFailure(usize),
    #[error("backend `{backend}` requires {required}-byte aligned data")]
    Misaligned { backend: String, required: usize },
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
}
