//! Discrete-event engine: integer virtual clock, ordered event queue with
//! cancellation, and reproducible per-node random streams.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Virtual time in microseconds.
pub type Time = u64;

/// Sentinel for "no bound".
pub const NEVER: Time = Time::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} us but the clock is already at {now} us")]
    PastEvent { at: Time, now: Time },
    #[error("bad range: lo {lo} > hi {hi}")]
    BadRange { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    TxStart,
    TxEnd,
    TimerExpiry,
    Arrival,
    SlotBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: Time,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn id(&self) -> EventId {
        EventId(self.seq)
    }
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; reverse so the smallest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

/// Pending events plus the clock. Ties in time pop in insertion order.
pub struct Scheduler<P> {
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
    next_seq: u64,
    clock: Time,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), cancelled: HashSet::new(), next_seq: 0, clock: 0 }
    }

    pub fn now(&self) -> Time {
        self.clock
    }

    pub fn schedule(&mut self, time: Time, kind: EventKind, payload: P) -> Result<EventId, SimError> {
        if time < self.clock {
            return Err(SimError::PastEvent { at: time, now: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event { time, seq, kind, payload }));
        Ok(EventId(seq))
    }

    /// Cancels a pending event. Returns false if it was already processed or cancelled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq {
            return false;
        }
        self.cancelled.insert(id.0)
    }

    pub fn pending(&self) -> usize {
        self.heap.len().saturating_sub(self.cancelled.len())
    }

    pub fn peek_time(&mut self) -> Option<Time> {
        self.drop_cancelled_head();
        self.heap.peek().map(|e| e.0.time)
    }

    fn drop_cancelled_head(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.cancelled.remove(&top.0.seq) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Removes and returns the next live event with time <= `limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: Time) -> Option<Event<P>> {
        self.drop_cancelled_head();
        if self.heap.peek()?.0.time > limit {
            return None;
        }
        let Entry(ev) = self.heap.pop()?;
        self.clock = ev.time;
        Some(ev)
    }

    /// Advances the clock without processing; used when a run ends on an empty stretch.
    pub fn advance_to(&mut self, t: Time) {
        if t > self.clock {
            self.clock = t;
        }
    }
}

/// Drives a [`Scheduler`] with a handler closure.
pub struct Simulator<P> {
    pub sched: Scheduler<P>,
    processed: u64,
}

impl<P> Default for Simulator<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Simulator<P> {
    pub fn new() -> Self {
        Self { sched: Scheduler::new(), processed: 0 }
    }

    pub fn now(&self) -> Time {
        self.sched.now()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, time: Time, kind: EventKind, payload: P) -> Result<EventId, SimError> {
        self.sched.schedule(time, kind, payload)
    }

    pub fn cancel(&mut self, id: EventId) -> bool {
        self.sched.cancel(id)
    }

    /// Processes every live event with time <= `t_end` in (time, seq) order.
    /// The handler may schedule further events, including at the current time.
    pub fn run_until<F>(&mut self, t_end: Time, mut handler: F)
    where
        F: FnMut(&mut Scheduler<P>, Event<P>),
    {
        while let Some(ev) = self.sched.pop_until(t_end) {
            self.processed += 1;
            handler(&mut self.sched, ev);
        }
    }
}

/// Deterministic random stream keyed by (global seed, stream id).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = splitmix64(seed ^ splitmix64(stream_id.wrapping_add(0xA5A5_5A5A)));
        Self { seed, stream_id, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform integer in the closed range [lo, hi].
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> Result<i64, SimError> {
        if lo > hi {
            return Err(SimError::BadRange { lo, hi });
        }
        Ok(self.rng.gen_range(lo..=hi))
    }

    /// Uniform draw on [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Exponential inter-arrival time with the given mean, rounded up to at least 1 us.
    pub fn exp_interval(&mut self, mean_us: f64) -> Time {
        let u = 1.0 - self.unit();
        ((-u.ln() * mean_us).ceil() as Time).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut s: Scheduler<&str> = Scheduler::new();
        s.schedule(0, EventKind::TxStart, "start").unwrap();
        s.schedule(0, EventKind::TxEnd, "end").unwrap();
        assert_eq!(s.pop_until(NEVER).unwrap().kind, EventKind::TxStart);
        assert_eq!(s.pop_until(NEVER).unwrap().kind, EventKind::TxEnd);
    }

    #[test]
    fn past_event_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.schedule(10, EventKind::TimerExpiry, ()).unwrap();
        s.pop_until(NEVER).unwrap();
        assert_eq!(
            s.schedule(5, EventKind::TimerExpiry, ()),
            Err(SimError::PastEvent { at: 5, now: 10 })
        );
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut s: Scheduler<u32> = Scheduler::new();
        let a = s.schedule(5, EventKind::TimerExpiry, 1).unwrap();
        s.schedule(6, EventKind::TimerExpiry, 2).unwrap();
        assert!(s.cancel(a));
        assert!(!s.cancel(a));
        assert_eq!(s.pop_until(NEVER).unwrap().payload, 2);
        assert!(s.pop_until(NEVER).is_none());
    }

    #[test]
    fn run_until_on_empty_queue() {
        let mut sim: Simulator<()> = Simulator::new();
        let mut rows = 0;
        sim.run_until(1000, |_, _| rows += 1);
        assert_eq!(rows, 0);
    }

    #[test]
    fn degenerate_range() {
        let mut r = RngStream::new(1, 0);
        assert_eq!(r.uniform_int(7, 7).unwrap(), 7);
        assert_eq!(r.uniform_int(8, 7), Err(SimError::BadRange { lo: 8, hi: 7 }));
    }

    #[test]
    fn replayed_stream_is_identical() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let xs: Vec<i64> = (0..100).map(|_| a.uniform_int(0, 1023).unwrap()).collect();
        let ys: Vec<i64> = (0..100).map(|_| b.uniform_int(0, 1023).unwrap()).collect();
        assert_eq!(xs, ys);
        let mut c = RngStream::new(42, 4);
        let zs: Vec<i64> = (0..100).map(|_| c.uniform_int(0, 1023).unwrap()).collect();
        assert_ne!(xs, zs);
    }

    #[test]
    fn uniform_counts_within_five_percent() {
        let mut r = RngStream::new(7, 11);
        let mut counts = [0u32; 16];
        for _ in 0..100_000 {
            counts[r.uniform_int(0, 15).unwrap() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 - 6250.0).abs() <= 0.05 * 6250.0, "count {c}");
        }
    }
}
