//! Discrete-event engine: simulation clock, event queue and seeded random streams.
//!
//! Time is measured in integer seconds since the start of the service day.
//! Events are ordered by `(fire_time, sequence)`; the sequence counter is
//! assigned at insertion so events scheduled for the same second fire in
//! insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Seconds since 00:00:00 of the simulated service day.
pub type Secs = u32;

/// Default upper bound of the simulation time axis (about 29 h), leaving room
/// for journeys that tap out after midnight.
pub const DEFAULT_HORIZON: Secs = 105_000;

/// Number of rejection attempts before a truncated normal sample is clamped.
pub const TRUNCATED_NORMAL_MAX_ATTEMPTS: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesError {
    #[error("event scheduled at t={fire_time} but the clock is already at t={now}")]
    PastEvent { fire_time: Secs, now: Secs },
    #[error("run_until({t_end}) called with the clock already at t={now}")]
    PastHorizon { t_end: Secs, now: Secs },
    #[error("invalid truncation bounds [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
}

/// Monotone simulation clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimClock {
    now: Secs,
}

impl SimClock {
    pub fn now(&self) -> Secs {
        self.now
    }

    fn advance_to(&mut self, t: Secs) {
        debug_assert!(t >= self.now, "clock moved backwards");
        self.now = t;
    }
}

/// A scheduled event carrying an arbitrary payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<K> {
    pub fire_time: Secs,
    pub sequence: u64,
    pub kind: K,
}

struct Entry<K>(Event<K>);

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_time == other.0.fire_time && self.0.sequence == other.0.sequence
    }
}

impl<K> Eq for Entry<K> {}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    // BinaryHeap is a max-heap; reverse so the earliest event is on top.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_time, other.0.sequence).cmp(&(self.0.fire_time, self.0.sequence))
    }
}

/// Event queue plus clock.
pub struct Scheduler<K> {
    clock: SimClock,
    queue: BinaryHeap<Entry<K>>,
    next_sequence: u64,
    fired: u64,
}

impl<K> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Scheduler<K> {
    pub fn new() -> Self {
        Self {
            clock: SimClock::default(),
            queue: BinaryHeap::new(),
            next_sequence: 0,
            fired: 0,
        }
    }

    pub fn now(&self) -> Secs {
        self.clock.now()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Total events fired since construction.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn schedule(&mut self, fire_time: Secs, kind: K) -> Result<u64, DesError> {
        let now = self.clock.now();
        if fire_time < now {
            return Err(DesError::PastEvent { fire_time, now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Entry(Event {
            fire_time,
            sequence,
            kind,
        }));
        Ok(sequence)
    }

    pub fn peek_time(&self) -> Option<Secs> {
        self.queue.peek().map(|e| e.0.fire_time)
    }

    /// Pops the next event if it fires at or before `t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: Secs) -> Option<Event<K>> {
        if self.peek_time()? > t_end {
            return None;
        }
        let Entry(event) = self.queue.pop()?;
        self.clock.advance_to(event.fire_time);
        self.fired += 1;
        Some(event)
    }

    /// Fires every event with `fire_time <= t_end` in order, handing each to
    /// `handler` together with the scheduler so it may schedule follow-ups.
    /// Leaves the clock at `t_end`.
    pub fn run_until<F, E>(&mut self, t_end: Secs, mut handler: F) -> Result<u64, E>
    where
        F: FnMut(&mut Self, Event<K>) -> Result<(), E>,
        E: From<DesError>,
    {
        let now = self.clock.now();
        if t_end < now {
            return Err(DesError::PastHorizon { t_end, now }.into());
        }
        let mut count = 0;
        while let Some(event) = self.pop_until(t_end) {
            count += 1;
            handler(self, event)?;
        }
        self.clock.advance_to(t_end);
        Ok(count)
    }
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A named, reproducible random stream.
///
/// The master seed keys a ChaCha8 generator and the stream id selects one of
/// its 2^64 independent streams, so streams never overlap and creating a new
/// one does not disturb any other.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        Self::from_parts(seed, fnv1a(label))
    }

    fn from_parts(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Derives the `index`-th child stream. Children depend only on the parent
    /// identity and the index, never on how much of the parent was consumed.
    pub fn child(&self, index: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1)));
        Self::from_parts(self.seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        standard_normal(&mut self.rng)
    }

    pub fn truncated_normal(&mut self, mean: f64, sd: f64, lo: f64, hi: f64) -> Result<f64, DesError> {
        sample_truncated_normal(&mut self.rng, mean, sd, lo, hi)
    }
}

/// Marsaglia polar method.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.gen::<f64>() - 1.0;
        let v = 2.0 * rng.gen::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Normal(mean, sd) conditioned on [lo, hi] by rejection; after
/// [`TRUNCATED_NORMAL_MAX_ATTEMPTS`] misses the last draw is clamped.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> Result<f64, DesError> {
    if !(lo < hi) {
        return Err(DesError::BadBounds { lo, hi });
    }
    if sd <= 1e-9 {
        return Ok(mean.clamp(lo, hi));
    }
    let mut x = mean;
    for _ in 0..TRUNCATED_NORMAL_MAX_ATTEMPTS {
        x = mean + sd * standard_normal(rng);
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
    Ok(x.clamp(lo, hi))
}
