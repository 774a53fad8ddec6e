//! In-process simulated process group.
//!
//! `R` ranks run one body concurrently on separate threads and talk only
//! through collectives. Reductions use a fixed binary tree by ascending rank,
//! so results are bitwise reproducible regardless of thread scheduling. A
//! watchdog turns a collective that can never complete into a
//! [`CollectiveError`] instead of a hang.

use std::any::{Any, TypeId};
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Add;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{mpsc, Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use num_traits::Zero;
use thiserror::Error;

pub const DEFAULT_WATCHDOG_TIMEOUT: Duration = Duration::from_secs(30);

const POLL_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
    LogicalAnd,
}

/// Values that can travel through [`Rank::allreduce`].
pub trait Reducible: Copy + Send + Sync + 'static {
    /// `None` when `op` is meaningless for the type (e.g. logical and of floats).
    fn combine(op: ReduceOp, a: Self, b: Self) -> Option<Self>;
}

macro_rules! reducible_float {
    ($($t:ty),*) => {$(
        impl Reducible for $t {
            fn combine(op: ReduceOp, a: Self, b: Self) -> Option<Self> {
                match op {
                    ReduceOp::Sum => Some(a + b),
                    ReduceOp::Max => Some(a.max(b)),
                    ReduceOp::Min => Some(a.min(b)),
                    ReduceOp::LogicalAnd => None,
                }
            }
        }
    )*};
}

macro_rules! reducible_int {
    ($($t:ty),*) => {$(
        impl Reducible for $t {
            fn combine(op: ReduceOp, a: Self, b: Self) -> Option<Self> {
                match op {
                    ReduceOp::Sum => Some(a.wrapping_add(b)),
                    ReduceOp::Max => Some(a.max(b)),
                    ReduceOp::Min => Some(a.min(b)),
                    ReduceOp::LogicalAnd => None,
                }
            }
        }
    )*};
}

reducible_float!(f32, f64);
reducible_int!(i32, i64, u32, u64, usize);

impl Reducible for bool {
    fn combine(op: ReduceOp, a: Self, b: Self) -> Option<Self> {
        match op {
            ReduceOp::LogicalAnd | ReduceOp::Min => Some(a && b),
            ReduceOp::Max => Some(a || b),
            ReduceOp::Sum => None,
        }
    }
}

/// Reduces `values` in a fixed binary tree by recursive halving: element
/// `i` combines with element `i + h`, where `h` is the largest power of two
/// below the length, until one value remains. Four values combine as
/// `((v0 ⊕ v2) ⊕ (v1 ⊕ v3))` and three as `((v0 ⊕ v2) ⊕ v1)`.
pub fn tree_reduce<T: Clone>(values: &[T], combine: &impl Fn(T, T) -> T) -> Option<T> {
    let mut level = values.to_vec();
    while level.len() > 1 {
        let half = level.len().next_power_of_two() / 2;
        let upper = level.split_off(half);
        for (i, v) in upper.into_iter().enumerate() {
            level[i] = combine(level[i].clone(), v);
        }
    }
    level.pop()
}

/// [`tree_reduce`] with addition; zero for an empty slice.
pub fn tree_sum<T: Copy + Zero + Add<Output = T>>(values: &[T]) -> T {
    tree_reduce(values, &|a, b| a + b).unwrap_or_else(T::zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveKind {
    Barrier,
    Allreduce(ReduceOp),
    Broadcast { root: usize },
    Gather { root: usize },
    Allgather,
}

impl CollectiveKind {
    fn label(self) -> &'static str {
        match self {
            CollectiveKind::Barrier => "barrier",
            CollectiveKind::Allreduce(_) => "allreduce",
            CollectiveKind::Broadcast { .. } => "broadcast",
            CollectiveKind::Gather { .. } => "gather",
            CollectiveKind::Allgather => "allgather",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveErrorKind {
    /// Ranks wait in a collective that other ranks will never enter.
    Deadlock,
    /// Ranks entered different collectives (or different payload types) at the same point.
    Mismatch,
    /// The watchdog fired while no rank had provably stranded the others,
    /// e.g. a rank still computing.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct CollectiveError {
    pub kind: CollectiveErrorKind,
    pub blocked_ranks: Vec<usize>,
    /// Label(s) of the collective call(s), e.g. `barrier#1`.
    pub site: String,
}

impl fmt::Display for CollectiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            CollectiveErrorKind::Deadlock => "deadlock",
            CollectiveErrorKind::Mismatch => "collective mismatch",
            CollectiveErrorKind::Timeout => "watchdog timeout",
        };
        write!(f, "{kind} at {}: blocked ranks {:?}", self.site, self.blocked_ranks)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpawnError {
    #[error("process group needs at least one rank")]
    NoRanks,
    #[error("watchdog timeout must be positive")]
    InvalidTimeout,
    #[error("could not start rank thread: {0}")]
    Thread(String),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
}

/// A rank whose body panicked.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rank {rank} failed: {message}")]
pub struct RankFailure {
    pub rank: usize,
    pub message: String,
}

pub type RankResult<T> = Result<T, RankFailure>;

#[derive(Debug, Clone)]
enum Status {
    Running,
    Blocked { seq: u64, site: String },
    Finished,
}

struct Instance {
    kind: CollectiveKind,
    payload: TypeId,
    site: String,
    contributions: Vec<Option<Box<dyn Any + Send>>>,
    arrived: usize,
    departed: usize,
    result: Option<Arc<dyn Any + Send + Sync>>,
}

struct State {
    instances: HashMap<u64, Instance>,
    next_seq: Vec<u64>,
    site_counts: Vec<HashMap<&'static str, u64>>,
    status: Vec<Status>,
    last_progress: Instant,
    error: Option<CollectiveError>,
}

struct Shared {
    size: usize,
    state: Mutex<State>,
    cv: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Unwind payload used to release ranks after the group failed.
struct Aborted;

fn abort_rank() -> ! {
    panic::resume_unwind(Box::new(Aborted))
}

/// One rank's handle on the group. Every method is a synchronization point
/// that all ranks must reach in the same order.
pub struct Rank {
    id: usize,
    shared: Arc<Shared>,
}

impl Rank {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    pub fn barrier(&self) {
        self.collective(CollectiveKind::Barrier, (), |_| ())
    }

    /// Reduces one value per rank in fixed tree order; every rank gets the
    /// bitwise-identical result.
    pub fn allreduce<T: Reducible>(&self, value: T, op: ReduceOp) -> T {
        assert!(
            T::combine(op, value, value).is_some(),
            "{op:?} is not defined for {}",
            std::any::type_name::<T>()
        );
        self.collective(CollectiveKind::Allreduce(op), value, move |values: Vec<T>| {
            tree_reduce(&values, &|a, b| T::combine(op, a, b).expect("checked above"))
                .expect("group has at least one rank")
        })
    }

    /// Every rank receives `root`'s value; the values passed by other ranks are ignored.
    pub fn broadcast<T: Clone + Send + Sync + 'static>(&self, root: usize, value: T) -> T {
        self.check_root(root);
        self.collective(CollectiveKind::Broadcast { root }, value, move |mut values: Vec<T>| {
            values.swap_remove(root)
        })
    }

    /// Rank-ordered values at `root`, `None` elsewhere.
    pub fn gather<T: Clone + Send + Sync + 'static>(&self, root: usize, value: T) -> Option<Vec<T>> {
        self.check_root(root);
        let all = self.collective(CollectiveKind::Gather { root }, value, Arc::new);
        (self.id == root).then(|| all.as_ref().clone())
    }

    /// Rank-ordered values on every rank.
    pub fn allgather<T: Clone + Send + Sync + 'static>(&self, value: T) -> Vec<T> {
        self.collective(CollectiveKind::Allgather, value, Arc::new)
            .as_ref()
            .clone()
    }

    fn check_root(&self, root: usize) {
        assert!(root < self.size(), "root {root} out of range for {} ranks", self.size());
    }

    fn collective<V, R>(&self, kind: CollectiveKind, value: V, finish: impl FnOnce(Vec<V>) -> R) -> R
    where
        V: Send + 'static,
        R: Clone + Send + Sync + 'static,
    {
        let shared = &*self.shared;
        let size = shared.size;
        let mut st = shared.lock();
        if st.error.is_some() {
            drop(st);
            abort_rank();
        }
        let seq = st.next_seq[self.id];
        st.next_seq[self.id] += 1;
        let count = st.site_counts[self.id].entry(kind.label()).or_insert(0);
        *count += 1;
        let site = format!("{}#{}", kind.label(), count);
        st.last_progress = Instant::now();

        let inst = st.instances.entry(seq).or_insert_with(|| Instance {
            kind,
            payload: TypeId::of::<V>(),
            site: site.clone(),
            contributions: (0..size).map(|_| None).collect(),
            arrived: 0,
            departed: 0,
            result: None,
        });
        if inst.kind != kind || inst.payload != TypeId::of::<V>() {
            let mut ranks: Vec<usize> = inst
                .contributions
                .iter()
                .enumerate()
                .filter_map(|(r, c)| c.as_ref().map(|_| r))
                .collect();
            ranks.push(self.id);
            ranks.sort_unstable();
            let err = CollectiveError {
                kind: CollectiveErrorKind::Mismatch,
                blocked_ranks: ranks,
                site: format!("{} vs {}", inst.site, site),
            };
            st.error = Some(err);
            shared.cv.notify_all();
            drop(st);
            abort_rank();
        }
        inst.contributions[self.id] = Some(Box::new(value));
        inst.arrived += 1;

        if inst.arrived == size {
            let values: Vec<V> = inst
                .contributions
                .iter_mut()
                .map(|c| {
                    *c.take()
                        .expect("every rank contributed")
                        .downcast::<V>()
                        .expect("payload type checked on arrival")
                })
                .collect();
            let result: Arc<dyn Any + Send + Sync> = Arc::new(finish(values));
            inst.result = Some(result);
            shared.cv.notify_all();
        } else {
            st.status[self.id] = Status::Blocked { seq, site };
            st = shared
                .cv
                .wait_while(st, |s| {
                    s.error.is_none() && s.instances.get(&seq).is_some_and(|i| i.result.is_none())
                })
                .unwrap_or_else(|e| e.into_inner());
            if st.error.is_some() {
                drop(st);
                abort_rank();
            }
            st.status[self.id] = Status::Running;
        }

        let inst = st.instances.get_mut(&seq).expect("instance lives until all ranks depart");
        let result = inst
            .result
            .as_ref()
            .and_then(|r| r.downcast_ref::<R>())
            .expect("result type fixed by collective kind")
            .clone();
        inst.departed += 1;
        if inst.departed == size {
            st.instances.remove(&seq);
        }
        st.last_progress = Instant::now();
        result
    }
}

/// Configuration of a simulated group.
#[derive(Debug, Clone, Copy)]
pub struct ProcessGroup {
    size: usize,
    watchdog_timeout: Duration,
}

impl ProcessGroup {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            watchdog_timeout: DEFAULT_WATCHDOG_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.watchdog_timeout = timeout;
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn watchdog_timeout(&self) -> Duration {
        self.watchdog_timeout
    }

    /// Runs `body` once per rank and returns the per-rank results in rank order.
    ///
    /// A panicking rank yields an `Err(RankFailure)` entry while the others
    /// carry on. If no collective makes progress for the watchdog timeout, the
    /// waiting ranks are released and the group reports a [`CollectiveError`].
    /// A rank stuck in pure computation cannot be interrupted; its thread is
    /// left detached.
    pub fn spawn<T, F>(&self, body: F) -> Result<Vec<RankResult<T>>, SpawnError>
    where
        T: Send + 'static,
        F: Fn(&Rank) -> T + Send + Sync + 'static,
    {
        if self.size == 0 {
            return Err(SpawnError::NoRanks);
        }
        if self.watchdog_timeout.is_zero() {
            return Err(SpawnError::InvalidTimeout);
        }
        let size = self.size;
        let shared = Arc::new(Shared {
            size,
            state: Mutex::new(State {
                instances: HashMap::new(),
                next_seq: vec![0; size],
                site_counts: vec![HashMap::new(); size],
                status: vec![Status::Running; size],
                last_progress: Instant::now(),
                error: None,
            }),
            cv: Condvar::new(),
        });
        let body = Arc::new(body);
        let (tx, rx) = mpsc::channel();

        for id in 0..size {
            let rank_shared = Arc::clone(&shared);
            let body = Arc::clone(&body);
            let tx = tx.clone();
            thread::Builder::new()
                .name(format!("rank-{id}"))
                .spawn(move || {
                    let shared = rank_shared;
                    let rank = Rank {
                        id,
                        shared: Arc::clone(&shared),
                    };
                    let out = panic::catch_unwind(AssertUnwindSafe(|| body(&rank)));
                    {
                        let mut st = shared.lock();
                        st.status[id] = Status::Finished;
                        st.last_progress = Instant::now();
                    }
                    shared.cv.notify_all();
                    let out = out.map_err(|payload| RankFailure {
                        rank: id,
                        message: panic_message(payload.as_ref()),
                    });
                    let _ = tx.send((id, out));
                })
                .map_err(|e| {
                    // release ranks already started
                    let mut st = shared.lock();
                    st.error = Some(CollectiveError {
                        kind: CollectiveErrorKind::Timeout,
                        blocked_ranks: Vec::new(),
                        site: "spawn".into(),
                    });
                    shared.cv.notify_all();
                    SpawnError::Thread(e.to_string())
                })?;
        }
        drop(tx);

        let mut results: Vec<Option<RankResult<T>>> = (0..size).map(|_| None).collect();
        let mut received = 0;
        while received < size {
            match rx.recv_timeout(POLL_INTERVAL) {
                Ok((id, out)) => {
                    results[id] = Some(out);
                    received += 1;
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
            let mut st = shared.lock();
            if let Some(err) = st.error.clone() {
                return Err(err.into());
            }
            if received < size && st.last_progress.elapsed() >= self.watchdog_timeout {
                let err = classify_stall(&st.status);
                st.error = Some(err.clone());
                shared.cv.notify_all();
                return Err(err.into());
            }
        }
        if let Some(err) = shared.lock().error.clone() {
            return Err(err.into());
        }
        Ok(results
            .into_iter()
            .enumerate()
            .map(|(id, r)| {
                r.unwrap_or_else(|| {
                    Err(RankFailure {
                        rank: id,
                        message: "rank exited without reporting".into(),
                    })
                })
            })
            .collect())
    }
}

/// Convenience for `ProcessGroup::new(size).with_timeout(timeout).spawn(body)`.
pub fn spawn<T, F>(size: usize, timeout: Duration, body: F) -> Result<Vec<RankResult<T>>, SpawnError>
where
    T: Send + 'static,
    F: Fn(&Rank) -> T + Send + Sync + 'static,
{
    ProcessGroup::new(size).with_timeout(timeout).spawn(body)
}

fn classify_stall(status: &[Status]) -> CollectiveError {
    let blocked: Vec<(usize, u64, &str)> = status
        .iter()
        .enumerate()
        .filter_map(|(r, s)| match s {
            Status::Blocked { seq, site } => Some((r, *seq, site.as_str())),
            _ => None,
        })
        .collect();
    let finished = status.iter().any(|s| matches!(s, Status::Finished));
    let seqs: BTreeSet<u64> = blocked.iter().map(|b| b.1).collect();
    let sites: BTreeSet<&str> = blocked.iter().map(|b| b.2).collect();
    let stranded = !blocked.is_empty() && (finished || seqs.len() > 1);
    CollectiveError {
        kind: if stranded {
            CollectiveErrorKind::Deadlock
        } else {
            CollectiveErrorKind::Timeout
        },
        blocked_ranks: blocked.iter().map(|b| b.0).collect(),
        site: sites.into_iter().collect::<Vec<_>>().join(", "),
    }
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if payload.is::<Aborted>() {
        "aborted after a group failure".into()
    } else if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic with non-string payload".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHORT: Duration = Duration::from_millis(500);

    fn ok<T: fmt::Debug>(results: Vec<RankResult<T>>) -> Vec<T> {
        results.into_iter().map(|r| r.unwrap()).collect()
    }

    #[test]
    fn tree_association() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(tree_sum(&v), 2.0);
        let seq: f64 = v.iter().sum();
        assert_ne!(seq, 2.0);
    }

    #[test]
    fn tree_shape_of_three_and_five() {
        let show = |n: usize| {
            let v: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            tree_reduce(&v, &|a, b| format!("({a}+{b})")).unwrap()
        };
        assert_eq!(show(1), "0");
        assert_eq!(show(4), "((0+2)+(1+3))");
        assert_eq!(show(3), "((0+2)+1)");
        assert_eq!(show(5), "(((0+4)+2)+(1+3))");
        assert_eq!(tree_reduce::<u8>(&[], &|a, b| a + b), None);
    }

    #[test]
    fn ranks_return_ids() {
        let out = spawn(4, SHORT, |r| r.id()).unwrap();
        assert_eq!(ok(out), vec![0, 1, 2, 3]);
    }

    #[test]
    fn allreduce_ops() {
        let out = spawn(4, SHORT, |r| r.allreduce(r.id() as u64, ReduceOp::Sum)).unwrap();
        assert_eq!(ok(out), vec![6; 4]);
        let out = spawn(4, SHORT, |r| r.allreduce(r.id() != 2, ReduceOp::LogicalAnd)).unwrap();
        assert_eq!(ok(out), vec![false; 4]);
        let out = spawn(3, SHORT, |r| {
            (
                r.allreduce(r.id() as i64 - 1, ReduceOp::Min),
                r.allreduce(r.id() as f32, ReduceOp::Max),
            )
        })
        .unwrap();
        assert_eq!(ok(out), vec![(-1, 2.0); 3]);
    }

    #[test]
    fn cancelling_float_sum() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        let out = spawn(4, SHORT, move |r| r.allreduce(vals[r.id()], ReduceOp::Sum)).unwrap();
        assert_eq!(ok(out), vec![2.0; 4]);
    }

    #[test]
    fn broadcast_gather_barrier() {
        let out = spawn(3, SHORT, |r| r.broadcast(0, if r.id() == 0 { 7 } else { -1 })).unwrap();
        assert_eq!(ok(out), vec![7; 3]);
        let out = spawn(3, SHORT, |r| r.gather(2, r.id())).unwrap();
        assert_eq!(ok(out), vec![None, None, Some(vec![0, 1, 2])]);
        let out = spawn(3, SHORT, |r| {
            r.barrier();
            r.allgather(r.id() * 10)
        })
        .unwrap();
        assert_eq!(ok(out), vec![vec![0, 10, 20]; 3]);
    }

    #[test]
    fn single_rank_identity() {
        let out = spawn(1, SHORT, |r| {
            r.barrier();
            (
                r.allreduce(2.5f64, ReduceOp::Sum),
                r.broadcast(0, 3),
                r.gather(0, 4),
                r.allreduce(false, ReduceOp::LogicalAnd),
            )
        })
        .unwrap();
        assert_eq!(ok(out), vec![(2.5, 3, Some(vec![4]), false)]);
    }

    #[test]
    fn skipped_barrier_deadlocks() {
        let start = Instant::now();
        let err = spawn(4, SHORT, |r| {
            if r.id() != 1 {
                r.barrier();
            }
        })
        .unwrap_err();
        let SpawnError::Collective(err) = err else {
            panic!("expected collective error, got {err:?}")
        };
        assert_eq!(err.kind, CollectiveErrorKind::Deadlock);
        assert_eq!(err.blocked_ranks, vec![0, 2, 3]);
        assert_eq!(err.site, "barrier#1");
        assert!(start.elapsed() >= SHORT);
        assert!(start.elapsed() < SHORT + Duration::from_secs(1));
    }

    #[test]
    fn mismatched_collectives() {
        let err = spawn(2, SHORT, |r| {
            if r.id() == 0 {
                r.barrier();
            } else {
                r.allreduce(1u64, ReduceOp::Sum);
            }
        })
        .unwrap_err();
        let SpawnError::Collective(err) = err else {
            panic!("expected collective error")
        };
        assert_eq!(err.kind, CollectiveErrorKind::Mismatch);
        assert_eq!(err.blocked_ranks, vec![0, 1]);
    }

    #[test]
    fn panicking_rank_is_isolated() {
        let out = spawn(3, SHORT, |r| {
            if r.id() == 1 {
                panic!("boom");
            }
            r.id()
        })
        .unwrap();
        assert_eq!(out[0], Ok(0));
        assert_eq!(out[1].as_ref().unwrap_err().message, "boom");
        assert_eq!(out[2], Ok(2));
    }

    #[test]
    fn invalid_configuration() {
        assert_eq!(spawn(0, SHORT, |_| ()).unwrap_err(), SpawnError::NoRanks);
        assert_eq!(
            spawn(2, Duration::ZERO, |_| ()).unwrap_err(),
            SpawnError::InvalidTimeout
        );
    }
}
