//! Virtual time: simulation timestamps, durations, the event queue that
//! drives the discrete-event emulation, and the calendar mapping used to
//! turn virtual instants into wall-clock dates for reports and CEF lines.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use chrono::{DateTime, Datelike, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

/// An instant on the virtual clock, in milliseconds since scenario start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// A span of virtual time in milliseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Duration since an earlier instant; saturates at zero.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_secs(s: u64) -> Self {
        SimDuration(s * 1000)
    }

    pub fn from_millis(ms: u64) -> Self {
        SimDuration(ms)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl std::ops::Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 + rhs.0)
    }
}

impl std::ops::Mul<u64> for SimDuration {
    type Output = SimDuration;
    fn mul(self, rhs: u64) -> SimDuration {
        SimDuration(self.0 * rhs)
    }
}

impl std::fmt::Display for SimTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}s", self.as_secs_f64())
    }
}

impl std::fmt::Display for SimDuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}s", self.as_secs_f64())
    }
}

/// Calendar quarter used as the seasonal clustering dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl std::fmt::Display for Season {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Season::Q1 => "q1",
            Season::Q2 => "q2",
            Season::Q3 => "q3",
            Season::Q4 => "q4",
        };
        f.write_str(s)
    }
}

/// Anchors virtual time to a wall-clock start instant so timestamps can be
/// rendered as dates and bucketed into seasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub start: DateTime<Utc>,
}

impl Calendar {
    pub fn new(start: DateTime<Utc>) -> Self {
        Calendar { start }
    }

    pub fn datetime(&self, t: SimTime) -> DateTime<Utc> {
        self.start + TimeDelta::milliseconds(t.as_millis() as i64)
    }

    /// Epoch milliseconds for CEF `rt=` extension values.
    pub fn epoch_millis(&self, t: SimTime) -> i64 {
        self.datetime(t).timestamp_millis()
    }

    pub fn rfc3339(&self, t: SimTime) -> String {
        self.datetime(t)
            .to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }

    pub fn season(&self, t: SimTime) -> Season {
        match self.datetime(t).month() {
            1..=3 => Season::Q1,
            4..=6 => Season::Q2,
            7..=9 => Season::Q3,
            _ => Season::Q4,
        }
    }
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar {
            start: DateTime::parse_from_rfc3339("2024-06-15T09:00:00Z")
                .expect("valid default start")
                .with_timezone(&Utc),
        }
    }
}

/// Monotonic virtual clock. Never moves backwards.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: SimTime,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { now: SimTime::ZERO }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Moves the clock forward to `t`. Requests to move backwards are ignored.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// Time-ordered event queue with stable tie-breaking by insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<QueueEntry<E>>>,
    seq: u64,
}

#[derive(Debug)]
struct QueueEntry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for QueueEntry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl<E> Eq for QueueEntry<E> {}
impl<E> PartialOrd for QueueEntry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for QueueEntry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    pub fn schedule(&mut self, at: SimTime, event: E) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(QueueEntry { at, seq, event }));
    }

    pub fn next_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    /// Pops the next event if it fires at or before `t`.
    pub fn pop_due(&mut self, t: SimTime) -> Option<(SimTime, E)> {
        if self.next_time()? <= t {
            self.heap.pop().map(|Reverse(e)| (e.at, e.event))
        } else {
            None
        }
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Advances virtual time on behalf of the playbook engine.
///
/// In an end-to-end run the driver is the simulation itself, so emulated
/// traffic keeps flowing while response steps consume virtual time. In unit
/// tests a bare clock suffices.
pub trait TimeDriver {
    fn now(&self) -> SimTime;
    fn advance_to(&mut self, t: SimTime);
}

/// Driver backed by a plain clock; advancing performs no side effects.
#[derive(Debug, Default)]
pub struct ClockDriver {
    clock: VirtualClock,
}

impl ClockDriver {
    pub fn new() -> Self {
        ClockDriver {
            clock: VirtualClock::new(),
        }
    }

    pub fn at(t: SimTime) -> Self {
        let mut clock = VirtualClock::new();
        clock.advance_to(t);
        ClockDriver { clock }
    }
}

impl TimeDriver for ClockDriver {
    fn now(&self) -> SimTime {
        self.clock.now()
    }

    fn advance_to(&mut self, t: SimTime) {
        self.clock.advance_to(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_is_monotonic() {
        let mut clock = VirtualClock::new();
        clock.advance_to(SimTime::from_secs(10));
        clock.advance_to(SimTime::from_secs(5));
        assert_eq!(clock.now(), SimTime::from_secs(10));
    }

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(2), "b");
        q.schedule(SimTime::from_secs(1), "a");
        q.schedule(SimTime::from_secs(2), "c");
        let horizon = SimTime::from_secs(10);
        let mut order = Vec::new();
        while let Some((_, e)) = q.pop_due(horizon) {
            order.push(e);
        }
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    #[test]
    fn queue_pop_due_respects_horizon() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(5), ());
        assert!(q.pop_due(SimTime::from_secs(4)).is_none());
        assert!(q.pop_due(SimTime::from_secs(5)).is_some());
    }

    #[test]
    fn calendar_seasons_follow_quarters() {
        let cal = Calendar::default(); // mid June
        assert_eq!(cal.season(SimTime::ZERO), Season::Q2);
        // 20 days later is early July
        assert_eq!(
            cal.season(SimTime::from_secs(20 * 24 * 3600)),
            Season::Q3
        );
    }

    #[test]
    fn calendar_epoch_millis_offsets() {
        let cal = Calendar::default();
        let base = cal.epoch_millis(SimTime::ZERO);
        assert_eq!(cal.epoch_millis(SimTime::from_secs(2)) - base, 2000);
    }
}
