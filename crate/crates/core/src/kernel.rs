//! Deterministic discrete-event engine.
//!
//! Time is counted in absolute slot numbers (ASN). Events firing in the same
//! slot are dispatched in insertion order, so a fixed scenario and seed always
//! produce the same dispatch sequence.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Absolute slot number.
pub type Asn = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past (fire_asn {fire_asn} < now {now})")]
    InThePast { fire_asn: Asn, now: Asn },
}

/// Slot counter plus the slot length used to convert to wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    asn: Asn,
    slot_duration_ms: f64,
}

impl SimClock {
    pub fn new(slot_duration_ms: f64) -> Self {
        assert!(slot_duration_ms > 0.0, "slot duration must be positive");
        SimClock {
            asn: 0,
            slot_duration_ms,
        }
    }

    pub fn asn(&self) -> Asn {
        self.asn
    }

    pub fn slot_duration_ms(&self) -> f64 {
        self.slot_duration_ms
    }

    /// Wall-clock milliseconds of an arbitrary slot number.
    pub fn time_ms(&self, asn: Asn) -> f64 {
        asn as f64 * self.slot_duration_ms
    }

    pub fn now_ms(&self) -> f64 {
        self.time_ms(self.asn)
    }

    /// Number of whole slots closest to `secs` seconds.
    pub fn secs_to_slots(&self, secs: f64) -> u64 {
        (secs * 1000.0 / self.slot_duration_ms).round() as u64
    }

    pub fn slots_to_secs(&self, slots: u64) -> f64 {
        slots as f64 * self.slot_duration_ms / 1000.0
    }

    fn advance(&mut self, asn: Asn) {
        debug_assert!(asn >= self.asn, "clock must not run backwards");
        self.asn = asn;
    }
}

/// Handle returned by [`Kernel::schedule`]; used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<K> {
    pub fire_asn: Asn,
    pub sequence: u64,
    pub kind: K,
}

struct Queued<K> {
    fire_asn: Asn,
    sequence: u64,
    kind: K,
}

impl<K> PartialEq for Queued<K> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_asn == other.fire_asn && self.sequence == other.sequence
    }
}

impl<K> Eq for Queued<K> {}

impl<K> PartialOrd for Queued<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Queued<K> {
    // Reversed so the max-heap pops the smallest (fire_asn, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_asn, other.sequence).cmp(&(self.fire_asn, self.sequence))
    }
}

/// Event queue ordered by `(fire_asn, sequence)`.
pub struct Kernel<K> {
    clock: SimClock,
    heap: BinaryHeap<Queued<K>>,
    live: HashSet<u64>,
    next_sequence: u64,
    dispatched: u64,
}

impl<K> Kernel<K> {
    pub fn new(clock: SimClock) -> Self {
        Kernel {
            clock,
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            next_sequence: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> Asn {
        self.clock.asn()
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    /// Total events dispatched since construction.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn schedule(&mut self, fire_asn: Asn, kind: K) -> Result<EventHandle, KernelError> {
        let now = self.now();
        if fire_asn < now {
            return Err(KernelError::InThePast { fire_asn, now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Queued {
            fire_asn,
            sequence,
            kind,
        });
        self.live.insert(sequence);
        Ok(EventHandle(sequence))
    }

    /// Schedule `delay` slots from now. Never fails.
    pub fn schedule_in(&mut self, delay: u64, kind: K) -> EventHandle {
        let at = self.now() + delay;
        self.schedule(at, kind).expect("relative schedule is never in the past")
    }

    /// Returns true when the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    fn discard_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.live.contains(&top.sequence) {
                break;
            }
            self.heap.pop();
        }
    }

    /// Fire slot of the next live event.
    pub fn peek_asn(&mut self) -> Option<Asn> {
        self.discard_cancelled();
        self.heap.peek().map(|q| q.fire_asn)
    }

    /// Pops the next live event firing at or before `end_asn` and moves the
    /// clock to its fire slot.
    pub fn pop_until(&mut self, end_asn: Asn) -> Option<Event<K>> {
        self.discard_cancelled();
        match self.heap.peek() {
            Some(top) if top.fire_asn <= end_asn => {}
            _ => return None,
        }
        let q = self.heap.pop().expect("peeked");
        self.live.remove(&q.sequence);
        self.clock.advance(q.fire_asn);
        self.dispatched += 1;
        Some(Event {
            fire_asn: q.fire_asn,
            sequence: q.sequence,
            kind: q.kind,
        })
    }

    /// Moves the clock forward without dispatching. Pending events earlier
    /// than `asn` would be skipped, so callers drain first.
    pub fn advance_to(&mut self, asn: Asn) {
        if asn > self.now() {
            debug_assert!(
                self.peek_asn().is_none_or(|t| t >= asn),
                "advancing past pending events"
            );
            self.clock.advance(asn);
        }
    }

    /// Dispatches every event with `fire_asn <= end_asn`, then sets the clock
    /// to `end_asn`. Returns the number of events dispatched.
    pub fn run_until<F>(&mut self, end_asn: Asn, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<K>),
    {
        if end_asn < self.now() {
            return 0;
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(end_asn) {
            handler(self, ev);
            count += 1;
        }
        self.clock.advance(end_asn);
        count
    }
}

/// Purpose label of a random stream. Each phenomenon draws from its own
/// stream so adding draws to one never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamId {
    LinkLoss,
    AppInterval,
    SharedBackoff,
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::LinkLoss => 1,
            StreamId::AppInterval => 2,
            StreamId::SharedBackoff => 3,
        }
    }
}

/// Seeded uniform source for one [`StreamId`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id.index());
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> StreamId {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn draw(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.draw()
    }
}

/// The three streams used by a simulation run.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub link_loss: RngStream,
    pub app_interval: RngStream,
    pub shared_backoff: RngStream,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            link_loss: RngStream::new(seed, StreamId::LinkLoss),
            app_interval: RngStream::new(seed, StreamId::AppInterval),
            shared_backoff: RngStream::new(seed, StreamId::SharedBackoff),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> Kernel<&'static str> {
        Kernel::new(SimClock::new(10.0))
    }

    #[test]
    fn same_slot_events_are_fifo() {
        let mut k = kernel();
        k.schedule(50, "A").unwrap();
        k.schedule(50, "B").unwrap();
        let mut seen = vec![];
        k.run_until(100, |_, ev| seen.push(ev.kind));
        assert_eq!(seen, vec!["A", "B"]);
    }

    #[test]
    fn schedule_at_now_fires_after_queued_peers() {
        let mut k = kernel();
        k.run_until(10, |_, _| {});
        k.schedule(10, "first").unwrap();
        k.schedule(10, "second").unwrap();
        let mut seen = vec![];
        k.run_until(10, |_, ev| seen.push((ev.fire_asn, ev.kind)));
        assert_eq!(seen, vec![(10, "first"), (10, "second")]);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut k = kernel();
        let h = k.schedule(100, "x").unwrap();
        k.run_until(50, |_, _| panic!("nothing due"));
        assert!(k.cancel(h));
        assert!(!k.cancel(h));
        assert_eq!(k.run_until(200, |_, _| panic!("cancelled")), 0);
    }

    #[test]
    fn past_schedule_is_rejected() {
        let mut k = kernel();
        k.run_until(20, |_, _| {});
        assert_eq!(
            k.schedule(19, "late"),
            Err(KernelError::InThePast { fire_asn: 19, now: 20 })
        );
    }

    #[test]
    fn empty_run_moves_clock() {
        let mut k = kernel();
        assert_eq!(k.run_until(1000, |_, _| {}), 0);
        assert_eq!(k.now(), 1000);
    }

    #[test]
    fn run_until_partitions_at_boundary() {
        let mut k = kernel();
        for t in [5, 10, 20, 21] {
            k.schedule(t, "e").unwrap();
        }
        assert_eq!(k.run_until(20, |_, _| {}), 3);
        assert_eq!(k.now(), 20);
        assert_eq!(k.pending(), 1);
    }

    #[test]
    fn handler_may_schedule_follow_ups() {
        let mut k: Kernel<u32> = Kernel::new(SimClock::new(10.0));
        k.schedule(0, 0).unwrap();
        let mut trace = vec![];
        k.run_until(100, |k, ev| {
            trace.push(ev.fire_asn);
            if ev.kind < 4 {
                k.schedule_in(7, ev.kind + 1);
            }
        });
        assert_eq!(trace, vec![0, 7, 14, 21, 28]);
    }

    #[test]
    fn never_dispatches_before_fire_asn() {
        let mut k: Kernel<u64> = Kernel::new(SimClock::new(10.0));
        for t in [3u64, 90, 17, 17, 55, 2] {
            k.schedule(t, t).unwrap();
        }
        let mut last = 0;
        k.run_until(100, |k, ev| {
            assert!(k.now() >= ev.kind);
            assert!(ev.fire_asn >= last);
            last = ev.fire_asn;
        });
    }

    #[test]
    fn wall_clock_is_exact_multiple() {
        let c = SimClock::new(10.0);
        assert_eq!(c.time_ms(12345), 123_450.0);
        assert_eq!(c.secs_to_slots(10.0), 1000);
        assert_eq!(c.slots_to_secs(6000), 60.0);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngStream::new(7, StreamId::LinkLoss);
        let mut b = RngStream::new(7, StreamId::LinkLoss);
        for _ in 0..100 {
            assert_eq!(a.draw(), b.draw());
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = RngStream::new(7, StreamId::LinkLoss);
        let mut b = RngStream::new(7, StreamId::AppInterval);
        let n = 10_000;
        let equal = (0..n).filter(|_| a.draw() == b.draw()).count();
        assert_eq!(equal, 0);
        // Pairwise correlation of the two streams stays near zero.
        let mut a = RngStream::new(7, StreamId::LinkLoss);
        let mut b = RngStream::new(7, StreamId::AppInterval);
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n).map(|_| (a.draw(), b.draw())).unzip();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
        let corr = cov / (1.0 / 12.0);
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn draws_do_not_leak_between_streams() {
        let mut s = RngStreams::new(3);
        let reference: Vec<f64> = {
            let mut r = RngStream::new(3, StreamId::AppInterval);
            (0..10).map(|_| r.draw()).collect()
        };
        for _ in 0..1000 {
            s.link_loss.draw();
        }
        let got: Vec<f64> = (0..10).map(|_| s.app_interval.draw()).collect();
        assert_eq!(got, reference);
    }

    #[test]
    fn uniform_mean_is_one_half() {
        let mut r = RngStream::new(11, StreamId::SharedBackoff);
        let n = 100_000;
        let mean = (0..n).map(|_| r.draw()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
