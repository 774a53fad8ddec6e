use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::{CsrView, DenseView, KernelError, KernelSpec, Layout, Operation, Precision, Real};
use crate::simgroup::{Rank, ReduceOp};

/// Per-precision kernel table. Callers validate shapes before dispatching;
/// implementations may assume consistent lengths.
pub trait Kernels<T: Real> {
    /// `y ← αx + y`
    fn axpy(&self, alpha: T, x: &[T], y: &mut [T]);

    /// `x ← αx`
    fn scale(&self, alpha: T, x: &mut [T]);

    /// `Σ xᵢyᵢ`
    fn dot(&self, x: &[T], y: &[T]) -> T;

    /// `y ← Ax`
    fn csr_spmv(&self, a: CsrView<'_, T>, x: &[T], y: &mut [T]);

    /// `y ← Ax` under `a.layout`.
    fn dense_mv(&self, a: DenseView<'_, T>, x: &[T], y: &mut [T]);

    /// Combines per-rank partial sums into a global sum on every rank.
    fn reduce_sum(&self, rank: &Rank, local: T) -> T {
        rank.allreduce(local, ReduceOp::Sum)
    }
}

/// A kernel implementation family. Backends are registered by name in a
/// [`Registry`] and selected at runtime.
pub trait Backend: Kernels<f32> + Kernels<f64> + Send + Sync {
    fn name(&self) -> &str;

    /// Byte alignment the backend requires of every array view; 0 for none.
    fn required_alignment(&self) -> usize {
        0
    }

    fn supports(&self, _operation: Operation, _precision: Precision, _layout: Layout) -> bool {
        true
    }
}

impl fmt::Debug for dyn Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backend({})", self.name())
    }
}

/// One runnable (kernel, backend) combination.
#[derive(Clone)]
pub struct Variant {
    pub spec: KernelSpec,
    pub backend: Arc<dyn Backend>,
}

impl Variant {
    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }
}

impl fmt::Debug for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.spec.id, self.backend.name())
    }
}

/// Selects variants; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariantFilter {
    /// Kernel id (`axpy.f64`) or operation name (`axpy`).
    pub kernel: Option<String>,
    pub precision: Option<Precision>,
    pub layout: Option<Layout>,
    pub backend: Option<String>,
}

impl VariantFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn kernel(mut self, kernel: impl Into<String>) -> Self {
        self.kernel = Some(kernel.into());
        self
    }

    pub fn precision(mut self, precision: Precision) -> Self {
        self.precision = Some(precision);
        self
    }

    pub fn layout(mut self, layout: Layout) -> Self {
        self.layout = Some(layout);
        self
    }

    pub fn backend(mut self, backend: impl Into<String>) -> Self {
        self.backend = Some(backend.into());
        self
    }

    fn matches(&self, spec: &KernelSpec, backend: &str) -> bool {
        self.kernel
            .as_deref()
            .map_or(true, |k| k == spec.id || k == spec.operation.name())
            && self.precision.map_or(true, |p| p == spec.precision)
            && self.layout.map_or(true, |l| l == spec.layout)
            && self.backend.as_deref().map_or(true, |b| b == backend)
    }
}

/// Registered kernels and backends. Immutable once built.
#[derive(Clone)]
pub struct Registry {
    specs: Vec<KernelSpec>,
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl Registry {
    /// All kernels, no backends.
    pub fn empty() -> Self {
        Self {
            specs: KernelSpec::all(),
            backends: BTreeMap::new(),
        }
    }

    /// All kernels with the `reference` and `optimized` backends.
    pub fn standard() -> Self {
        let mut registry = Self::empty();
        registry
            .register(Arc::new(super::ReferenceBackend))
            .expect("fresh registry");
        registry
            .register(Arc::new(super::OptimizedBackend))
            .expect("fresh registry");
        registry
    }

    pub fn register(&mut self, backend: Arc<dyn Backend>) -> Result<(), KernelError> {
        let name = backend.name().to_string();
        if self.backends.contains_key(&name) {
            return Err(KernelError::DuplicateBackend(name));
        }
        self.backends.insert(name, backend);
        Ok(())
    }

    /// Adds a planted-bug backend.
    pub fn with_trap(mut self, trap: super::Trap) -> Self {
        let backend = trap.backend();
        self.backends.insert(backend.name().to_string(), backend);
        self
    }

    pub fn backend(&self, name: &str) -> Option<Arc<dyn Backend>> {
        self.backends.get(name).cloned()
    }

    pub fn backend_names(&self) -> Vec<String> {
        self.backends.keys().cloned().collect()
    }

    pub fn specs(&self) -> &[KernelSpec] {
        &self.specs
    }

    pub fn spec(&self, id: &str) -> Option<&KernelSpec> {
        self.specs.iter().find(|s| s.id == id)
    }

    pub fn find_spec(&self, operation: Operation, precision: Precision, layout: Layout) -> Option<&KernelSpec> {
        self.specs
            .iter()
            .find(|s| s.operation == operation && s.precision == precision && s.layout == layout)
    }

    /// Every supported (kernel, backend) pair matching `filter`, ordered by
    /// kernel id then backend name.
    pub fn list_variants(&self, filter: &VariantFilter) -> Vec<Variant> {
        let mut out = Vec::new();
        for spec in &self.specs {
            for (name, backend) in &self.backends {
                if filter.matches(spec, name)
                    && backend.supports(spec.operation, spec.precision, spec.layout)
                {
                    out.push(Variant {
                        spec: spec.clone(),
                        backend: Arc::clone(backend),
                    });
                }
            }
        }
        out.sort_by(|a, b| {
            a.spec
                .id
                .cmp(&b.spec.id)
                .then_with(|| a.backend.name().cmp(b.backend.name()))
        });
        out
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kernels", &self.specs.len())
            .field("backends", &self.backends.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_counts() {
        let reg = Registry::standard();
        assert_eq!(reg.list_variants(&VariantFilter::all()).len(), 24);
        assert_eq!(reg.list_variants(&VariantFilter::all().kernel("dot")).len(), 4);
        assert_eq!(reg.list_variants(&VariantFilter::all().kernel("dot.f32")).len(), 2);
        assert!(reg.list_variants(&VariantFilter::all().kernel("gemm")).is_empty());
        assert_eq!(
            reg.list_variants(&VariantFilter::all().backend("optimized").layout(Layout::ColMajor))
                .len(),
            2
        );
    }

    #[test]
    fn variants_are_sorted() {
        let reg = Registry::standard();
        let keys: Vec<_> = reg
            .list_variants(&VariantFilter::all())
            .iter()
            .map(|v| (v.spec.id.clone(), v.backend_name().to_string()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(keys[0], ("axpy.f32".to_string(), "optimized".to_string()));
    }

    #[test]
    fn duplicate_backend_rejected() {
        let mut reg = Registry::standard();
        assert!(matches!(
            reg.register(Arc::new(crate::kernels::ReferenceBackend)),
            Err(KernelError::DuplicateBackend(_))
        ));
    }
}
