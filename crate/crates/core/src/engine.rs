//! Discrete-event core: virtual clock, `(due, seq)` ordered event queue,
//! per-entity random streams and the run-trace digest.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in microseconds since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Rounds to the nearest microsecond; negative inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * 1e6).round().max(0.0) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_add(self, d: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(d.0))
    }

    pub fn saturating_sub(self, d: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(d.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Identifier of the entity an event is addressed to.
pub type TargetId = u32;

/// Payloads name their kind so the trace can be recorded without knowing
/// the concrete payload type.
pub trait EventKind {
    fn kind(&self) -> &'static str;
}

#[derive(Clone, Debug)]
pub struct Event<P> {
    pub due: SimTime,
    pub seq: u64,
    pub target: TargetId,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed so the max-heap pops the smallest (due, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.due, other.seq).cmp(&(self.due, self.seq))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event due at {due} is before the current clock {now}")]
    PastDeadline { due: SimTime, now: SimTime },
}

/// One consumed event as seen by the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub due: SimTime,
    pub seq: u64,
    pub kind: &'static str,
    pub target: TargetId,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.due.as_micros(),
            self.seq,
            self.kind,
            self.target
        )
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the ordered `(due, seq, kind, target)` tuples.
///
/// Each tuple is fed as `due` (u64 LE), `seq` (u64 LE), the kind bytes
/// followed by a NUL, and `target` (u32 LE). The digest of an empty run is
/// the FNV offset basis, [`TraceDigest::EMPTY`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceDigest(u64);

impl TraceDigest {
    pub const EMPTY: TraceDigest = TraceDigest(FNV_OFFSET);

    pub fn new() -> Self {
        Self::EMPTY
    }

    pub fn value(self) -> u64 {
        self.0
    }

    fn feed(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn push(&mut self, due: SimTime, seq: u64, kind: &str, target: TargetId) {
        self.feed(&due.as_micros().to_le_bytes());
        self.feed(&seq.to_le_bytes());
        self.feed(kind.as_bytes());
        self.feed(&[0]);
        self.feed(&target.to_le_bytes());
    }
}

impl Default for TraceDigest {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for TraceDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Digest of a recorded run log.
pub fn trace_digest<'a>(log: impl IntoIterator<Item = &'a TraceRecord>) -> TraceDigest {
    let mut d = TraceDigest::new();
    for r in log {
        d.push(r.due, r.seq, r.kind, r.target);
    }
    d
}

/// Event queue plus virtual clock.
///
/// The digest is always maintained; the full per-event log is kept only
/// when enabled with [`Scheduler::record_trace`].
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<P>>,
    digest: TraceDigest,
    log: Option<Vec<TraceRecord>>,
    steps: u64,
}

impl<P: EventKind> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            digest: TraceDigest::new(),
            log: None,
            steps: 0,
        }
    }

    pub fn record_trace(&mut self, on: bool) {
        self.log = if on { Some(Vec::new()) } else { None };
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Total events consumed since creation.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn digest(&self) -> TraceDigest {
        self.digest
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.log.as_deref()
    }

    /// Enqueues an event, returning its insertion sequence number.
    pub fn schedule(&mut self, due: SimTime, target: TargetId, payload: P) -> Result<u64, EngineError> {
        if due < self.now {
            return Err(EngineError::PastDeadline { due, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            due,
            seq,
            target,
            payload,
        });
        Ok(seq)
    }

    /// Schedules `delay` after the current clock; never fails.
    pub fn schedule_in(&mut self, delay: SimTime, target: TargetId, payload: P) -> u64 {
        let due = self.now.saturating_add(delay);
        self.schedule(due, target, payload)
            .expect("relative schedule is never in the past")
    }

    /// Pops the next event due at or before `limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        if self.queue.peek().map_or(true, |e| e.due > limit) {
            return None;
        }
        let ev = self.queue.pop()?;
        self.now = self.now.max(ev.due);
        self.steps += 1;
        let kind = ev.payload.kind();
        self.digest.push(ev.due, ev.seq, kind, ev.target);
        if let Some(log) = self.log.as_mut() {
            log.push(TraceRecord {
                due: ev.due,
                seq: ev.seq,
                kind,
                target: ev.target,
            });
        }
        Some(ev)
    }

    /// Consumes every event due at or before `t`, handing each to
    /// `handler`, and leaves the clock at `t` (or later if it already was).
    /// Returns the number of events consumed.
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Scheduler<P>, Event<P>),
    {
        let mut steps = 0;
        while let Some(ev) = self.pop_until(t) {
            handler(self, ev);
            steps += 1;
        }
        self.now = self.now.max(t);
        steps
    }
}

impl<P: EventKind> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic random stream keyed by `(seed, stream id)`.
///
/// Backed by ChaCha8 with the stream id selecting an independent keystream,
/// so each stream's draws are fixed on every platform and unaffected by how
/// many other streams exist or how far they have been consumed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.rng.gen_range(0..bound)
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
