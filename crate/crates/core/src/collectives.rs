//! Simulated data-parallel process group.
//!
//! A [`RankGroup`] owns `N` logical ranks and the lockstep protocol they use
//! to exchange data. Every collective is reduced by a single accumulator in
//! ascending rank order and the identical result is handed to every rank,
//! so results never depend on which thread arrived first.
//!
//! Two schedulers drive rank programs:
//!
//! * [`ExecutionMode::Sequential`] runs every rank round-robin on the calling
//!   thread, advancing each program up to its next collective call.
//! * [`ExecutionMode::Threaded`] gives every rank its own thread; ranks meet
//!   at a generation-counted [`Rendezvous`] with a bounded wait.
//!
//! Both schedulers complete collectives through the same code path, which is
//! what makes their outputs bit-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Threaded,
    Sequential,
}

impl FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threaded" => Ok(Self::Threaded),
            "sequential" => Ok(Self::Sequential),
            other => Err(format!("unknown execution mode `{other}` (expected threaded or sequential)")),
        }
    }
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Threaded => "threaded",
            Self::Sequential => "sequential",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CollectiveKind {
    ReduceMean,
    Gather,
    Barrier,
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ReduceMean => "reduce_mean",
            Self::Gather => "gather",
            Self::Barrier => "barrier",
        })
    }
}

/// Header of one collective invocation as seen by one rank.
///
/// `tag` is the rank-local call counter; lockstep requires every rank to
/// present the same tag, kind and label at each collective.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollectiveCall {
    pub tag: u64,
    pub kind: CollectiveKind,
    pub label: &'static str,
    pub payload_len: usize,
}

/// What a rank contributes to a collective.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    ReduceMean { label: &'static str, data: Vec<f64> },
    Gather { label: &'static str, value: f64 },
    Barrier { label: &'static str },
}

impl Request {
    pub fn kind(&self) -> CollectiveKind {
        match self {
            Self::ReduceMean { .. } => CollectiveKind::ReduceMean,
            Self::Gather { .. } => CollectiveKind::Gather,
            Self::Barrier { .. } => CollectiveKind::Barrier,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::ReduceMean { label, .. } | Self::Gather { label, .. } | Self::Barrier { label } => label,
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            Self::ReduceMean { data, .. } => data.len(),
            Self::Gather { .. } => 1,
            Self::Barrier { .. } => 0,
        }
    }

    fn call(&self, tag: u64) -> CollectiveCall {
        CollectiveCall { tag, kind: self.kind(), label: self.label(), payload_len: self.payload_len() }
    }
}

/// The result every rank receives from a collective.
#[derive(Clone, Debug, PartialEq)]
pub enum Reply {
    Reduced(Vec<f64>),
    Gathered(Vec<f64>),
    Released,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum CollectiveError {
    #[error("world size must be at least 1")]
    EmptyGroup,
    #[error("collective expected {expected} rank contributions, got {found}")]
    RankCount { expected: usize, found: usize },
    #[error("protocol fault at call {tag}: rank {rank} sent {found} elements, rank 0 sent {expected}")]
    LengthMismatch { tag: u64, rank: usize, expected: usize, found: usize },
    #[error("lockstep violation at call {tag}: rank {rank} {detail}")]
    Lockstep { tag: u64, rank: usize, detail: String },
    #[error("rank {rank} timed out after {waited:?} waiting at call {tag} (deadlock)")]
    Timeout { rank: usize, tag: u64, waited: Duration },
    #[error("rank {rank} released because the group was aborted")]
    Aborted { rank: usize },
}

/// Elementwise arithmetic mean of equal-length vectors.
///
/// Accumulates in ascending rank order, shifted by rank 0's vector:
/// `mean = v_0 + (sum_r (v_r - v_0)) / N`. Identical inputs therefore reduce
/// to themselves bit-for-bit, whatever `N` is.
pub fn reduce_mean(contributions: &[&[f64]]) -> Vec<f64> {
    let Some(anchor) = contributions.first() else {
        return Vec::new();
    };
    let n = contributions.len() as f64;
    let mut acc = vec![0.0f64; anchor.len()];
    for v in &contributions[1..] {
        for ((a, x), x0) in acc.iter_mut().zip(v.iter()).zip(anchor.iter()) {
            *a += x - x0;
        }
    }
    anchor.iter().zip(acc).map(|(x0, a)| x0 + a / n).collect()
}

/// Per call-site collective counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CollectiveStats {
    counts: BTreeMap<(CollectiveKind, &'static str), u64>,
}

impl CollectiveStats {
    pub fn count(&self, kind: CollectiveKind, label: &str) -> u64 {
        self.counts
            .iter()
            .filter(|((k, l), _)| *k == kind && *l == label)
            .map(|(_, c)| *c)
            .sum()
    }

    pub fn total(&self, kind: CollectiveKind) -> u64 {
        self.counts.iter().filter(|((k, _), _)| *k == kind).map(|(_, c)| *c).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CollectiveKind, &'static str, u64)> + '_ {
        self.counts.iter().map(|((k, l), c)| (*k, *l, *c))
    }
}

/// One rank's contribution, tagged with the rank's call header.
#[derive(Clone, Debug)]
pub struct Contribution {
    pub rank: usize,
    pub call: CollectiveCall,
    pub request: Request,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// A set of `N` simulated replicas plus their collective context.
#[derive(Debug)]
pub struct RankGroup {
    world_size: usize,
    mode: ExecutionMode,
    timeout: Duration,
    stats: Mutex<CollectiveStats>,
}

impl RankGroup {
    pub fn new(world_size: usize, mode: ExecutionMode) -> Result<Self, CollectiveError> {
        if world_size == 0 {
            return Err(CollectiveError::EmptyGroup);
        }
        Ok(Self { world_size, mode, timeout: DEFAULT_TIMEOUT, stats: Mutex::default() })
    }

    /// Bounded wait applied at every threaded rendezvous.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn world_size(&self) -> usize {
        self.world_size
    }

    pub fn mode(&self) -> ExecutionMode {
        self.mode
    }

    pub fn stats(&self) -> CollectiveStats {
        lock(&self.stats).clone()
    }

    /// Bulk form: every rank's vector is supplied at once.
    pub fn all_reduce_mean(&self, per_rank: &[Vec<f64>]) -> Result<Vec<f64>, CollectiveError> {
        let contributions = self.bulk(per_rank.iter().map(|v| Request::ReduceMean { label: "bulk", data: v.clone() }));
        match self.complete(contributions)? {
            Reply::Reduced(v) => Ok(v),
            _ => unreachable!("reduce_mean completes with a reduced vector"),
        }
    }

    pub fn all_gather_scalar(&self, per_rank: &[f64]) -> Result<Vec<f64>, CollectiveError> {
        let contributions = self.bulk(per_rank.iter().map(|&value| Request::Gather { label: "bulk", value }));
        match self.complete(contributions)? {
            Reply::Gathered(v) => Ok(v),
            _ => unreachable!("gather completes with a gathered list"),
        }
    }

    pub fn barrier(&self) -> Result<(), CollectiveError> {
        let contributions = self.bulk((0..self.world_size).map(|_| Request::Barrier { label: "bulk" }));
        self.complete(contributions).map(|_| ())
    }

    fn bulk(&self, requests: impl Iterator<Item = Request>) -> Vec<Contribution> {
        requests
            .enumerate()
            .map(|(rank, request)| Contribution { rank, call: request.call(0), request })
            .collect()
    }

    /// Validates one collective's contributions and computes its result.
    ///
    /// Contributions must be ordered by rank. This is the only place results
    /// are computed, for both schedulers.
    pub fn complete(&self, contributions: Vec<Contribution>) -> Result<Reply, CollectiveError> {
        if contributions.len() != self.world_size {
            return Err(CollectiveError::RankCount { expected: self.world_size, found: contributions.len() });
        }
        let head = contributions[0].call.clone();
        for (expected_rank, c) in contributions.iter().enumerate() {
            debug_assert_eq!(c.rank, expected_rank);
            if c.call.tag != head.tag {
                return Err(CollectiveError::Lockstep {
                    tag: head.tag,
                    rank: c.rank,
                    detail: format!("presented tag {} while rank 0 presented {}", c.call.tag, head.tag),
                });
            }
            if c.call.kind != head.kind || c.call.label != head.label {
                return Err(CollectiveError::Lockstep {
                    tag: head.tag,
                    rank: c.rank,
                    detail: format!(
                        "entered {}:{} while rank 0 entered {}:{}",
                        c.call.kind, c.call.label, head.kind, head.label
                    ),
                });
            }
            if c.call.payload_len != head.payload_len {
                return Err(CollectiveError::LengthMismatch {
                    tag: head.tag,
                    rank: c.rank,
                    expected: head.payload_len,
                    found: c.call.payload_len,
                });
            }
        }
        let reply = match head.kind {
            CollectiveKind::ReduceMean => {
                let slices: Vec<&[f64]> = contributions
                    .iter()
                    .map(|c| match &c.request {
                        Request::ReduceMean { data, .. } => data.as_slice(),
                        _ => unreachable!(),
                    })
                    .collect();
                Reply::Reduced(reduce_mean(&slices))
            }
            CollectiveKind::Gather => Reply::Gathered(
                contributions
                    .iter()
                    .map(|c| match c.request {
                        Request::Gather { value, .. } => value,
                        _ => unreachable!(),
                    })
                    .collect(),
            ),
            CollectiveKind::Barrier => Reply::Released,
        };
        *lock(&self.stats).counts.entry((head.kind, head.label)).or_default() += 1;
        Ok(reply)
    }

    /// Runs one program per rank to completion under this group's scheduler.
    ///
    /// Programs are returned in rank order. After a program finishes, the
    /// scheduler enters a final barrier on its behalf so that a rank which
    /// stops early is reported as a lockstep fault instead of a hang.
    pub fn drive<P>(&self, programs: Vec<P>) -> Result<Vec<P>, P::Error>
    where
        P: RankProgram + Send,
    {
        if programs.len() != self.world_size {
            return Err(CollectiveError::RankCount { expected: self.world_size, found: programs.len() }.into());
        }
        match self.mode {
            ExecutionMode::Sequential => self.drive_sequential(programs),
            ExecutionMode::Threaded => self.drive_threaded(programs),
        }
    }

    fn drive_sequential<P: RankProgram>(&self, mut programs: Vec<P>) -> Result<Vec<P>, P::Error> {
        let n = self.world_size;
        let mut tags = vec![0u64; n];
        let mut replies: Vec<Option<Reply>> = vec![None; n];
        loop {
            let mut contributions = Vec::with_capacity(n);
            for (rank, program) in programs.iter_mut().enumerate() {
                let request = match program.resume(replies[rank].take())? {
                    Yield::Collective(request) => request,
                    Yield::Finished => Request::Barrier { label: FINAL_BARRIER },
                };
                contributions.push(Contribution { rank, call: request.call(tags[rank]), request });
                tags[rank] += 1;
            }
            let finished = contributions.iter().all(|c| c.request.label() == FINAL_BARRIER);
            let reply = self.complete(contributions)?;
            if finished {
                return Ok(programs);
            }
            replies.iter_mut().for_each(|r| *r = Some(reply.clone()));
        }
    }

    fn drive_threaded<P>(&self, programs: Vec<P>) -> Result<Vec<P>, P::Error>
    where
        P: RankProgram + Send,
    {
        let rendezvous = Rendezvous::new(self);
        let outcomes: Vec<Result<P, P::Error>> = std::thread::scope(|scope| {
            let handles: Vec<_> = programs
                .into_iter()
                .enumerate()
                .map(|(rank, mut program)| {
                    let rendezvous = &rendezvous;
                    scope.spawn(move || {
                        let mut endpoint = Endpoint::new(rank, rendezvous);
                        let mut reply = None;
                        loop {
                            let step = match program.resume(reply.take()) {
                                Ok(step) => step,
                                Err(e) => {
                                    rendezvous.abort();
                                    return Err(e);
                                }
                            };
                            match step {
                                Yield::Collective(request) => match endpoint.call(request) {
                                    Ok(r) => reply = Some(r),
                                    Err(e) => return Err(e.into()),
                                },
                                Yield::Finished => {
                                    endpoint.call(Request::Barrier { label: FINAL_BARRIER })?;
                                    return Ok(program);
                                }
                            }
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
        });
        let mut programs = Vec::with_capacity(outcomes.len());
        let mut first_err = None;
        let mut first_aborted = None;
        for outcome in outcomes {
            match outcome {
                Ok(p) => programs.push(p),
                Err(e) => {
                    // A rank released by an abort is a symptom; keep the cause.
                    let slot = if is_abort(&e) { &mut first_aborted } else { &mut first_err };
                    slot.get_or_insert(e);
                }
            }
        }
        match first_err.or(first_aborted) {
            Some(e) => Err(e),
            None => Ok(programs),
        }
    }
}

const FINAL_BARRIER: &str = "final";

fn is_abort<E: RankError>(e: &E) -> bool {
    matches!(e.collective(), Some(CollectiveError::Aborted { .. }))
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Step outcome of a [`RankProgram`].
#[derive(Debug)]
pub enum Yield {
    Collective(Request),
    Finished,
}

/// Errors a rank program can report; collective faults must convert into it.
pub trait RankError: From<CollectiveError> + Send {
    fn collective(&self) -> Option<&CollectiveError>;
}

impl RankError for CollectiveError {
    fn collective(&self) -> Option<&CollectiveError> {
        Some(self)
    }
}

/// A per-rank program written as a resumable state machine.
///
/// `resume` runs local computation until the next collective and returns the
/// request; the scheduler resumes it with that collective's reply.
pub trait RankProgram {
    type Error: RankError;

    fn resume(&mut self, reply: Option<Reply>) -> Result<Yield, Self::Error>;
}

struct RendezvousState {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<Contribution>>,
    last: Option<Result<Arc<Reply>, CollectiveError>>,
    aborted: bool,
}

/// Generation-counted meeting point for threaded ranks.
///
/// The last rank to arrive completes the collective, publishes the result,
/// bumps the generation and wakes everyone else.
pub struct Rendezvous<'g> {
    group: &'g RankGroup,
    state: Mutex<RendezvousState>,
    arrivals: Condvar,
}

impl<'g> Rendezvous<'g> {
    pub fn new(group: &'g RankGroup) -> Self {
        Self {
            group,
            state: Mutex::new(RendezvousState {
                generation: 0,
                arrived: 0,
                slots: vec![None; group.world_size],
                last: None,
                aborted: false,
            }),
            arrivals: Condvar::new(),
        }
    }

    /// Releases every waiting rank with [`CollectiveError::Aborted`].
    pub fn abort(&self) {
        lock(&self.state).aborted = true;
        self.arrivals.notify_all();
    }

    fn arrive(&self, contribution: Contribution) -> Result<Reply, CollectiveError> {
        let rank = contribution.rank;
        let tag = contribution.call.tag;
        let mut state = lock(&self.state);
        if state.aborted {
            return Err(CollectiveError::Aborted { rank });
        }
        if state.slots[rank].is_some() {
            return Err(CollectiveError::Lockstep { tag, rank, detail: "entered the same collective twice".into() });
        }
        state.slots[rank] = Some(contribution);
        state.arrived += 1;
        let generation = state.generation;

        if state.arrived == self.group.world_size {
            let contributions: Vec<Contribution> = state.slots.iter_mut().map(|s| s.take().unwrap()).collect();
            let outcome = self.group.complete(contributions).map(Arc::new);
            state.last = Some(outcome.clone());
            state.arrived = 0;
            state.generation += 1;
            drop(state);
            self.arrivals.notify_all();
            return outcome.map(|r| (*r).clone());
        }

        let deadline = Instant::now() + self.group.timeout;
        while state.generation == generation {
            if state.aborted {
                return Err(CollectiveError::Aborted { rank });
            }
            let now = Instant::now();
            if now >= deadline {
                state.aborted = true;
                drop(state);
                self.arrivals.notify_all();
                return Err(CollectiveError::Timeout { rank, tag, waited: self.group.timeout });
            }
            state = self
                .arrivals
                .wait_timeout(state, deadline - now)
                .map(|(g, _)| g)
                .unwrap_or_else(|p| p.into_inner().0);
        }
        // The next generation cannot complete without this rank, so `last`
        // still holds this generation's outcome.
        match state.last.as_ref().expect("completed generation has an outcome") {
            Ok(reply) => Ok((**reply).clone()),
            Err(e) => Err(e.clone()),
        }
    }
}

/// One rank's handle onto a [`Rendezvous`].
pub struct Endpoint<'r, 'g> {
    rank: usize,
    next_tag: u64,
    rendezvous: &'r Rendezvous<'g>,
}

impl<'r, 'g> Endpoint<'r, 'g> {
    pub fn new(rank: usize, rendezvous: &'r Rendezvous<'g>) -> Self {
        Self { rank, next_tag: 0, rendezvous }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn call(&mut self, request: Request) -> Result<Reply, CollectiveError> {
        let tag = self.next_tag;
        self.call_with_tag(tag, request)
    }

    /// Enters a collective presenting an explicit tag.
    pub fn call_with_tag(&mut self, tag: u64, request: Request) -> Result<Reply, CollectiveError> {
        self.next_tag = tag + 1;
        let call = request.call(tag);
        self.rendezvous.arrive(Contribution { rank: self.rank, call, request })
    }

    pub fn all_reduce_mean(&mut self, label: &'static str, data: Vec<f64>) -> Result<Vec<f64>, CollectiveError> {
        match self.call(Request::ReduceMean { label, data })? {
            Reply::Reduced(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    pub fn all_gather_scalar(&mut self, label: &'static str, value: f64) -> Result<Vec<f64>, CollectiveError> {
        match self.call(Request::Gather { label, value })? {
            Reply::Gathered(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    pub fn barrier(&mut self) -> Result<(), CollectiveError> {
        self.call(Request::Barrier { label: "barrier" }).map(|_| ())
    }
}
