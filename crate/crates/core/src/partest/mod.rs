//! Combinatorial test matrices and a parallel test runner with collective
//! assertions.

mod plan;
mod report;
mod runner;

use thiserror::Error;

pub use plan::{
    build_plan, check_pairwise, MissingPair, Strategy, TestCase, TestDimension, TestPlan,
    EXHAUSTIVE_CANDIDATE_LIMIT,
};
pub use report::{render_junit, render_text};
pub use runner::{
    aggregate, collective_assert, run_suite, Applicability, AssertOutcome, CaseBody, CaseContext,
    KernelBody, RankLog, RankOutcome, SuiteConfig, SuiteReport, Summary, TestOutcome, Verdict,
    DEFAULT_PROBLEM_SIZE, ULP_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartestError {
    #[error("dimension `{0}` has no levels")]
    EmptyDimension(String),
    #[error("pairwise plan leaves pairs uncovered: {}", .0.join("; "))]
    Uncovered(Vec<String>),
    #[error("watchdog timeout must be positive")]
    InvalidTimeout,
}
