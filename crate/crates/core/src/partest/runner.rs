//! Executes test plans on simulated process groups.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::plan::{TestCase, TestPlan};
use super::PartestError;
use crate::kernels::{
    block_range, run, ulp_distance, Backend, Inputs, KernelSpec, Layout, Operation, Precision,
    Real, Registry,
};
use crate::simgroup::{ProcessGroup, Rank, ReduceOp, SpawnError};

/// Largest accepted distance between a backend result and the reference.
pub const ULP_TOLERANCE: f64 = 4.0;
pub const DEFAULT_PROBLEM_SIZE: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
    Skipped,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Error => "error",
            Verdict::Skipped => "skipped",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Group verdict of one collective assertion. `failures` lists
/// `(rank, message)` of every failing rank on rank 0 and is empty elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertOutcome {
    pub passed: bool,
    pub failures: Vec<(usize, String)>,
}

/// All ranks call this at the same program point. The verdict is the logical
/// and of every rank's `local` and is identical on all ranks; a failing rank
/// does not abort, and failing messages are gathered to rank 0.
pub fn collective_assert(rank: &Rank, local: bool, message: &str) -> AssertOutcome {
    let passed = rank.allreduce(local, ReduceOp::LogicalAnd);
    let failures = if passed {
        Vec::new()
    } else {
        let mine = (!local).then(|| message.to_string());
        rank.gather(0, mine)
            .map(|all| {
                all.into_iter()
                    .enumerate()
                    .filter_map(|(r, m)| m.map(|m| (r, m)))
                    .collect()
            })
            .unwrap_or_default()
    };
    AssertOutcome { passed, failures }
}

/// Per-rank record of the assertions a body made.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankLog {
    /// False once any collective assertion failed for the group.
    pub passed: bool,
    /// This rank's own failure messages.
    pub messages: Vec<String>,
    /// Failures gathered from all ranks (rank 0 only).
    pub gathered: Vec<(usize, String)>,
}

impl RankLog {
    pub fn new() -> Self {
        Self {
            passed: true,
            ..Self::default()
        }
    }

    /// [`collective_assert`], recording the outcome.
    pub fn check(&mut self, rank: &Rank, local: bool, message: impl FnOnce() -> String) -> bool {
        let msg = if local { String::new() } else { message() };
        let outcome = collective_assert(rank, local, &msg);
        if !local {
            self.messages.push(msg);
        }
        if !outcome.passed {
            self.passed = false;
            self.gathered.extend(outcome.failures);
        }
        outcome.passed
    }
}

/// The settings a case resolves to.
#[derive(Clone)]
pub struct CaseContext {
    pub case: TestCase,
    pub precision: Precision,
    /// Matrix layout for layout-sensitive kernels.
    pub layout: Layout,
    /// Elements between the aligned base and the first element: 0 or 1.
    pub offset: usize,
    pub backend: Arc<dyn Backend>,
    pub ranks: usize,
    pub registry: Registry,
    pub n: u64,
    pub seed: u64,
}

impl fmt::Debug for CaseContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaseContext")
            .field("case", &self.case.name())
            .field("n", &self.n)
            .field("seed", &self.seed)
            .finish()
    }
}

/// Whether a body runs for a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Applicability {
    Run,
    /// Reason, e.g. the backend lacks the kernel.
    Skip(String),
}

/// A test body executed by every rank of a case's group.
pub trait CaseBody: Send + Sync {
    fn name(&self) -> &str;

    fn applicability(&self, ctx: &CaseContext) -> Applicability;

    /// Runs on every rank. All ranks must make the same sequence of
    /// collective calls, whatever their local results.
    fn run(&self, rank: &Rank, ctx: &CaseContext, log: &mut RankLog);
}

/// Checks one operation: (a) backend within 4 ulps of the reference,
/// (b) reference bitwise equal across alignment offsets, (c) the globally
/// reduced result identical on every rank. With several ranks the problem is
/// split block-wise by rank.
#[derive(Debug, Clone)]
pub struct KernelBody {
    operation: Operation,
    name: String,
}

impl KernelBody {
    pub fn new(operation: Operation) -> Self {
        Self {
            operation,
            name: operation.name().to_string(),
        }
    }

    /// One body per operation.
    pub fn standard() -> Vec<Arc<dyn CaseBody>> {
        Operation::ALL
            .into_iter()
            .map(|op| Arc::new(KernelBody::new(op)) as Arc<dyn CaseBody>)
            .collect()
    }

    fn spec(&self, ctx: &CaseContext) -> Option<KernelSpec> {
        let layout = if self.operation.layouts().contains(&ctx.layout) {
            ctx.layout
        } else {
            self.operation.layouts()[0]
        };
        ctx.registry
            .find_spec(self.operation, ctx.precision, layout)
            .cloned()
    }

    fn run_typed<T: Real>(&self, spec: &KernelSpec, rank: &Rank, ctx: &CaseContext, log: &mut RankLog) {
        let reference = crate::kernels::ReferenceBackend;
        let tag = |what: &str| format!("{} [{}] rank {}: {what}", spec.id, ctx.backend.name(), rank.id());

        let prepared = Inputs::<T>::generate(spec, ctx.n, ctx.seed).and_then(|global| {
            let block = if ctx.ranks > 1 {
                global.block(block_range(global.partition_len(), ctx.ranks, rank.id()))
            } else {
                global
            };
            let out = run(spec, ctx.backend.as_ref(), &block, ctx.offset)?;
            let ref0 = run(spec, &reference, &block, 0)?;
            let ref1 = run(spec, &reference, &block, 1)?;
            let scale = run(spec, &reference, &block.magnitudes(), 0)?;
            Ok((out, ref0, ref1, scale))
        });
        let (out, ref0, ref1, scale, error) = match prepared {
            Ok((out, ref0, ref1, scale)) => (Some(out), Some(ref0), Some(ref1), Some(scale), None),
            Err(e) => (None, None, None, None, Some(e)),
        };
        log.check(rank, error.is_none(), || {
            tag(&format!("kernel error: {}", error.as_ref().map(ToString::to_string).unwrap_or_default()))
        });

        let within = match (&out, &ref0, &scale) {
            (Some(out), Some(r), Some(s)) => out
                .values
                .iter()
                .zip(&r.values)
                .zip(&s.values)
                .enumerate()
                .find(|(_, ((a, b), s))| ulp_distance(**a, **b, **s) > ULP_TOLERANCE)
                .map(|(i, ((a, b), _))| format!("element {i}: {a} vs reference {b}")),
            _ => None,
        };
        let within_msg = within.clone();
        log.check(rank, within.is_none(), || {
            tag(&format!(
                "backend differs from reference by more than {ULP_TOLERANCE} ulps at {}",
                within_msg.unwrap_or_default()
            ))
        });

        let offsets_equal = match (&ref0, &ref1) {
            (Some(a), Some(b)) => a
                .values
                .iter()
                .zip(&b.values)
                .all(|(x, y)| x.to_bits_u64() == y.to_bits_u64()),
            _ => true,
        };
        log.check(rank, offsets_equal, || {
            tag("reference results differ between offset 0 and offset 1")
        });

        let local = out.as_ref().map_or(T::nan(), |o| o.checksum);
        let global = T::kernels(ctx.backend.as_ref()).reduce_sum(rank, local);
        let all = rank.allgather(global.to_bits_u64());
        let identical = all.iter().all(|&b| b == all[0]);
        log.check(rank, identical, || {
            tag(&format!("globally reduced result {global} differs across ranks"))
        });
    }
}

impl CaseBody for KernelBody {
    fn name(&self) -> &str {
        &self.name
    }

    fn applicability(&self, ctx: &CaseContext) -> Applicability {
        match self.spec(ctx) {
            None => Applicability::Skip(format!("no {} kernel for {}", self.operation, ctx.precision)),
            Some(spec) if !ctx.backend.supports(spec.operation, spec.precision, spec.layout) => {
                Applicability::Skip(format!(
                    "UnsupportedCombination: backend `{}` does not implement {}",
                    ctx.backend.name(),
                    spec.id
                ))
            }
            Some(_) => Applicability::Run,
        }
    }

    fn run(&self, rank: &Rank, ctx: &CaseContext, log: &mut RankLog) {
        let Some(spec) = self.spec(ctx) else { return };
        match spec.precision {
            Precision::Single => self.run_typed::<f32>(&spec, rank, ctx, log),
            Precision::Double => self.run_typed::<f64>(&spec, rank, ctx, log),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub rank: usize,
    pub verdict: Verdict,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub case: TestCase,
    pub verdict: Verdict,
    pub per_rank: Vec<RankOutcome>,
    /// Messages not tied to one rank: skip reasons, group errors.
    pub notes: Vec<String>,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub skipped: usize,
}

impl Summary {
    pub fn of(outcomes: &[TestOutcome]) -> Self {
        let count = |v: Verdict| outcomes.iter().filter(|o| o.verdict == v).count();
        Self {
            total: outcomes.len(),
            passed: count(Verdict::Pass),
            failed: count(Verdict::Fail),
            errors: count(Verdict::Error),
            skipped: count(Verdict::Skipped),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub plan: TestPlan,
    pub outcomes: Vec<TestOutcome>,
    pub summary: Summary,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteConfig {
    pub timeout: Duration,
    pub n: u64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            timeout: crate::simgroup::DEFAULT_WATCHDOG_TIMEOUT,
            n: DEFAULT_PROBLEM_SIZE,
            seed: crate::default_seed(),
        }
    }
}

/// Case verdict from per-rank verdicts: error if any rank errored, else fail
/// if any failed, else pass.
pub fn aggregate(per_rank: &[RankOutcome]) -> Verdict {
    if per_rank.iter().any(|r| r.verdict == Verdict::Error) {
        Verdict::Error
    } else if per_rank.iter().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if per_rank.is_empty() {
        Verdict::Skipped
    } else {
        Verdict::Pass
    }
}

/// Runs every case in order. A failing or erroring case never stops the suite.
pub fn run_suite(
    plan: &TestPlan,
    registry: &Registry,
    bodies: &[Arc<dyn CaseBody>],
    config: &SuiteConfig,
) -> Result<SuiteReport, PartestError> {
    if config.timeout.is_zero() {
        return Err(PartestError::InvalidTimeout);
    }
    let started = Instant::now();
    let outcomes: Vec<TestOutcome> = plan
        .cases
        .iter()
        .map(|case| run_case(case, registry, bodies, config))
        .collect();
    Ok(SuiteReport {
        plan: plan.clone(),
        summary: Summary::of(&outcomes),
        outcomes,
        duration: started.elapsed().as_secs_f64(),
    })
}

fn resolve(case: &TestCase, registry: &Registry, config: &SuiteConfig) -> Result<Result<CaseContext, String>, String> {
    let precision = match case.get("precision") {
        None => Precision::Double,
        Some(p) => Precision::parse(p).ok_or_else(|| format!("unknown precision `{p}`"))?,
    };
    let layout = match case.get("layout") {
        None => Layout::RowMajor,
        Some(l) => match Layout::parse(l) {
            Some(Layout::Neutral) | None => return Err(format!("unknown layout `{l}`")),
            Some(l) => l,
        },
    };
    let offset = match case.get("alignment") {
        None | Some("aligned") => 0,
        Some("offset1") => 1,
        Some(a) => return Err(format!("unknown alignment `{a}`")),
    };
    let ranks = match case.get("ranks") {
        None => 1,
        Some(r) => match r.parse::<usize>() {
            Ok(r) if r >= 1 => r,
            _ => return Err(format!("invalid rank count `{r}`")),
        },
    };
    let name = case.get("backend").unwrap_or("reference");
    let Some(backend) = registry.backend(name) else {
        return Ok(Err(format!(
            "UnsupportedCombination: backend `{name}` is not registered"
        )));
    };
    Ok(Ok(CaseContext {
        case: case.clone(),
        precision,
        layout,
        offset,
        backend,
        ranks,
        registry: registry.clone(),
        n: config.n,
        seed: config.seed,
    }))
}

fn run_case(
    case: &TestCase,
    registry: &Registry,
    bodies: &[Arc<dyn CaseBody>],
    config: &SuiteConfig,
) -> TestOutcome {
    let started = Instant::now();
    let finish = |verdict: Verdict, per_rank: Vec<RankOutcome>, notes: Vec<String>| TestOutcome {
        case: case.clone(),
        verdict,
        per_rank,
        notes,
        duration: started.elapsed().as_secs_f64(),
    };

    let ctx = match resolve(case, registry, config) {
        Err(msg) => return finish(Verdict::Error, Vec::new(), vec![msg]),
        Ok(Err(skip)) => return finish(Verdict::Skipped, Vec::new(), vec![skip]),
        Ok(Ok(ctx)) => ctx,
    };

    let mut notes = Vec::new();
    let mut runnable: Vec<Arc<dyn CaseBody>> = Vec::new();
    for body in bodies {
        match body.applicability(&ctx) {
            Applicability::Run => runnable.push(Arc::clone(body)),
            Applicability::Skip(reason) => notes.push(format!("{}: skipped: {reason}", body.name())),
        }
    }
    if runnable.is_empty() {
        return finish(Verdict::Skipped, Vec::new(), notes);
    }

    let ranks = ctx.ranks;
    let ctx = Arc::new(ctx);
    let group = ProcessGroup::new(ranks).with_timeout(config.timeout);
    let result = group.spawn(move |rank| {
        let mut log = RankLog::new();
        for body in &runnable {
            body.run(rank, &ctx, &mut log);
        }
        let gathered_failures = std::mem::take(&mut log.gathered);
        let reports = rank.gather(0, (log.passed, log.messages));
        (reports, gathered_failures)
    });

    match result {
        Err(SpawnError::Collective(e)) => {
            let per_rank = (0..ranks)
                .map(|r| RankOutcome {
                    rank: r,
                    verdict: if e.blocked_ranks.contains(&r) {
                        Verdict::Error
                    } else {
                        Verdict::Pass
                    },
                    messages: if e.blocked_ranks.contains(&r) {
                        vec![e.to_string()]
                    } else {
                        Vec::new()
                    },
                })
                .collect::<Vec<_>>();
            notes.push(e.to_string());
            finish(aggregate(&per_rank), per_rank, notes)
        }
        Err(e) => {
            notes.push(e.to_string());
            finish(Verdict::Error, Vec::new(), notes)
        }
        Ok(results) => {
            let failed_ranks: Vec<(usize, String)> = results
                .iter()
                .filter_map(|r| r.as_ref().err().map(|f| (f.rank, f.message.clone())))
                .collect();
            if !failed_ranks.is_empty() {
                let per_rank = (0..ranks)
                    .map(|r| match failed_ranks.iter().find(|(fr, _)| *fr == r) {
                        Some((_, msg)) => RankOutcome {
                            rank: r,
                            verdict: Verdict::Error,
                            messages: vec![format!("panicked: {msg}")],
                        },
                        None => RankOutcome {
                            rank: r,
                            verdict: Verdict::Pass,
                            messages: Vec::new(),
                        },
                    })
                    .collect::<Vec<_>>();
                return finish(Verdict::Error, per_rank, notes);
            }
            let root = results.into_iter().next().expect("at least one rank").expect("checked");
            let (reports, _gathered) = root;
            let per_rank: Vec<RankOutcome> = reports
                .expect("rank 0 is the gather root")
                .into_iter()
                .enumerate()
                .map(|(r, (passed, messages))| RankOutcome {
                    rank: r,
                    verdict: if passed { Verdict::Pass } else { Verdict::Fail },
                    messages,
                })
                .collect();
            finish(aggregate(&per_rank), per_rank, notes)
        }
    }
}
