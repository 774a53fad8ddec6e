//! Test matrices: full Cartesian products and greedy pairwise covering arrays.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PartestError;

/// Above this many full combinations the pairwise builder stops scoring every
/// candidate row and switches to a constructive row-by-row choice.
pub const EXHAUSTIVE_CANDIDATE_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestDimension {
    pub name: String,
    pub levels: Vec<String>,
}

impl TestDimension {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    /// precision, layout, alignment, backend, ranks.
    pub fn defaults() -> Vec<TestDimension> {
        vec![
            TestDimension::new("precision", ["single", "double"]),
            TestDimension::new("layout", ["row", "col"]),
            TestDimension::new("alignment", ["aligned", "offset1"]),
            TestDimension::new("backend", ["reference", "optimized"]),
            TestDimension::new("ranks", ["1", "4"]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Full,
    Pairwise,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Pairwise => "pairwise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Strategy::Full),
            "pairwise" => Some(Strategy::Pairwise),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One level per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestCase {
    /// `(dimension, level)` in dimension order.
    pub settings: Vec<(String, String)>,
}

impl TestCase {
    pub fn get(&self, dimension: &str) -> Option<&str> {
        self.settings
            .iter()
            .find(|(d, _)| d == dimension)
            .map(|(_, l)| l.as_str())
    }

    /// `precision=single,layout=row,...`
    pub fn name(&self) -> String {
        self.settings
            .iter()
            .map(|(d, l)| format!("{d}={l}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for TestCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPlan {
    pub dimensions: Vec<TestDimension>,
    pub strategy: Strategy,
    pub cases: Vec<TestCase>,
}

impl TestPlan {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// A cross-dimension level pair no case exercises.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MissingPair {
    pub first: (String, String),
    pub second: (String, String),
}

impl fmt::Display for MissingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}={} with {}={}",
            self.first.0, self.first.1, self.second.0, self.second.1
        )
    }
}

type Row = Vec<usize>;
/// `(dim_a, level_a, dim_b, level_b)` with `dim_a < dim_b`.
type Pair = (usize, usize, usize, usize);

pub fn build_plan(dimensions: &[TestDimension], strategy: Strategy) -> Result<TestPlan, PartestError> {
    if let Some(d) = dimensions.iter().find(|d| d.levels.is_empty()) {
        return Err(PartestError::EmptyDimension(d.name.clone()));
    }
    let sizes: Vec<usize> = dimensions.iter().map(|d| d.levels.len()).collect();
    let rows = match strategy {
        Strategy::Full => cartesian(&sizes),
        Strategy::Pairwise => pairwise_rows(&sizes),
    };
    let plan = TestPlan {
        dimensions: dimensions.to_vec(),
        strategy,
        cases: rows.iter().map(|r| to_case(dimensions, r)).collect(),
    };
    if strategy == Strategy::Pairwise {
        check_pairwise(&plan, dimensions).map_err(|missing| {
            PartestError::Uncovered(missing.iter().map(ToString::to_string).collect())
        })?;
    }
    Ok(plan)
}

/// Every cross-dimension level pair absent from `plan`, by brute force.
pub fn check_pairwise(plan: &TestPlan, dimensions: &[TestDimension]) -> Result<(), Vec<MissingPair>> {
    let mut missing = Vec::new();
    for a in 0..dimensions.len() {
        for b in a + 1..dimensions.len() {
            let (da, db) = (&dimensions[a], &dimensions[b]);
            for la in &da.levels {
                for lb in &db.levels {
                    let covered = plan.cases.iter().any(|c| {
                        c.get(&da.name) == Some(la.as_str()) && c.get(&db.name) == Some(lb.as_str())
                    });
                    if !covered {
                        missing.push(MissingPair {
                            first: (da.name.clone(), la.clone()),
                            second: (db.name.clone(), lb.clone()),
                        });
                    }
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(missing)
    }
}

fn to_case(dimensions: &[TestDimension], row: &[usize]) -> TestCase {
    TestCase {
        settings: dimensions
            .iter()
            .zip(row)
            .map(|(d, &l)| (d.name.clone(), d.levels[l].clone()))
            .collect(),
    }
}

/// Lexicographic Cartesian product; the first dimension varies slowest.
fn cartesian(sizes: &[usize]) -> Vec<Row> {
    let mut rows = vec![Vec::new()];
    for &size in sizes {
        rows = rows
            .into_iter()
            .flat_map(|r| {
                (0..size).map(move |l| {
                    let mut r = r.clone();
                    r.push(l);
                    r
                })
            })
            .collect();
    }
    rows
}

fn all_pairs(sizes: &[usize]) -> BTreeSet<Pair> {
    let mut pairs = BTreeSet::new();
    for a in 0..sizes.len() {
        for b in a + 1..sizes.len() {
            for la in 0..sizes[a] {
                for lb in 0..sizes[b] {
                    pairs.insert((a, la, b, lb));
                }
            }
        }
    }
    pairs
}

fn row_pairs(row: &[usize]) -> impl Iterator<Item = Pair> + '_ {
    (0..row.len()).flat_map(move |a| (a + 1..row.len()).map(move |b| (a, row[a], b, row[b])))
}

/// Greedy covering array: repeatedly add the row covering the most uncovered
/// pairs (and, for a lone dimension, unseen levels), ties to the
/// lexicographically smallest row.
fn pairwise_rows(sizes: &[usize]) -> Vec<Row> {
    let mut uncovered = all_pairs(sizes);
    let mut unseen: BTreeSet<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(d, &s)| (0..s).map(move |l| (d, l)))
        .collect();
    let product = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .unwrap_or(usize::MAX);
    let candidates = (product <= EXHAUSTIVE_CANDIDATE_LIMIT).then(|| cartesian(sizes));

    let score = |row: &[usize], uncovered: &BTreeSet<Pair>, unseen: &BTreeSet<(usize, usize)>| {
        let pairs = row_pairs(row).filter(|p| uncovered.contains(p)).count();
        let singles = row
            .iter()
            .enumerate()
            .filter(|&(d, &l)| unseen.contains(&(d, l)))
            .count();
        (pairs, singles)
    };

    let mut rows = Vec::new();
    while !uncovered.is_empty() || !unseen.is_empty() {
        let row = match &candidates {
            Some(all) => {
                let mut best: Option<(&Row, (usize, usize))> = None;
                for cand in all {
                    let s = score(cand, &uncovered, &unseen);
                    if best.map_or(true, |(_, bs)| s > bs) {
                        best = Some((cand, s));
                    }
                }
                best.expect("non-empty candidate set").0.clone()
            }
            None => construct_row(sizes, &uncovered, &unseen),
        };
        for p in row_pairs(&row) {
            uncovered.remove(&p);
        }
        for (d, &l) in row.iter().enumerate() {
            unseen.remove(&(d, l));
        }
        rows.push(row);
    }
    rows
}

/// Seeds a row with the first uncovered pair (or unseen level), then fixes the
/// remaining dimensions in order, each to the level adding the most new pairs
/// with the dimensions fixed so far.
fn construct_row(sizes: &[usize], uncovered: &BTreeSet<Pair>, unseen: &BTreeSet<(usize, usize)>) -> Row {
    let mut row: Vec<Option<usize>> = vec![None; sizes.len()];
    if let Some(&(a, la, b, lb)) = uncovered.iter().next() {
        row[a] = Some(la);
        row[b] = Some(lb);
    } else if let Some(&(d, l)) = unseen.iter().next() {
        row[d] = Some(l);
    }
    for d in 0..sizes.len() {
        if row[d].is_some() {
            continue;
        }
        let gain = |l: usize| {
            row.iter()
                .enumerate()
                .filter_map(|(e, v)| v.map(|v| (e, v)))
                .filter(|&(e, v)| {
                    let p = if e < d { (e, v, d, l) } else { (d, l, e, v) };
                    uncovered.contains(&p)
                })
                .count()
        };
        let mut best = 0;
        for l in 1..sizes[d] {
            if gain(l) > gain(best) {
                best = l;
            }
        }
        row[d] = Some(best);
    }
    row.into_iter().map(|v| v.expect("every dimension fixed")).collect()
}
