//! Accumulated-time watch.
//!
//! Instead of a fresh timelock per protocol step, each party has one watch
//! that runs only while it is that party's turn. Every closed interval is
//! committed to a write-once slot (the stand-in for a one-time signature in
//! a stop transaction), and the aggregate is compared against a single
//! censorship-resistance threshold.
//!
//! While a watch runs, the waiting counterparty mines timelocked interval
//! markers with power-of-two denominations (1, 2, 4, ... ticks). A marker of
//! denomination `d` is minable once `d` ticks of the open interval have
//! elapsed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{FunctionaryId, Tick};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WatchError {
    #[error("watch is already running")]
    AlreadyRunning,
    #[error("watch is not running")]
    NotRunning,
    #[error("marker of {denomination} ticks has not matured ({elapsed} elapsed)")]
    NotMatured { denomination: u64, elapsed: u64 },
    #[error("marker denomination {0} is not a power of two")]
    InvalidDenomination(u64),
    #[error("marker of {0} ticks already mined in this interval")]
    MarkerSpent(u64),
    #[error("interval slot {0} is already committed")]
    SlotCommitted(usize),
    #[error("interval slot {index} is out of order (next free slot is {next})")]
    SlotOutOfOrder { index: usize, next: usize },
    #[error("all {0} interval slots are used")]
    SlotsExhausted(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub interval: usize,
    pub denomination: u64,
    pub mined_at: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopWatch {
    pub party_under_measure: FunctionaryId,
    pub threshold: u64,
    slots: Vec<Option<u64>>,
    running_since: Option<Tick>,
    markers: Vec<Marker>,
}

impl StopWatch {
    /// `max_slots` bounds the number of stop records, one per turn of the
    /// measured party.
    pub fn new(party: FunctionaryId, threshold: u64, max_slots: usize) -> StopWatch {
        StopWatch {
            party_under_measure: party,
            threshold,
            slots: vec![None; max_slots],
            running_since: None,
            markers: Vec::new(),
        }
    }

    pub fn is_running(&self) -> bool {
        self.running_since.is_some()
    }

    pub fn running_since(&self) -> Option<Tick> {
        self.running_since
    }

    pub fn start(&mut self, now: Tick) -> Result<(), WatchError> {
        if self.running_since.is_some() {
            return Err(WatchError::AlreadyRunning);
        }
        self.running_since = Some(now);
        Ok(())
    }

    /// Closes the open interval and commits its length. Returns the length.
    pub fn stop(&mut self, now: Tick) -> Result<u64, WatchError> {
        let since = self.running_since.ok_or(WatchError::NotRunning)?;
        let elapsed = now.saturating_sub(since);
        let next = self.committed_count();
        self.commit_interval(next, elapsed)?;
        self.running_since = None;
        Ok(elapsed)
    }

    /// Writes `duration` into slot `index`. Slots are filled in order and
    /// each exactly once.
    pub fn commit_interval(&mut self, index: usize, duration: u64) -> Result<(), WatchError> {
        let next = self.committed_count();
        match self.slots.get(index) {
            None if next >= self.slots.len() => Err(WatchError::SlotsExhausted(self.slots.len())),
            None => Err(WatchError::SlotOutOfOrder { index, next }),
            Some(Some(_)) => Err(WatchError::SlotCommitted(index)),
            Some(None) if index != next => Err(WatchError::SlotOutOfOrder { index, next }),
            Some(None) => {
                self.slots[index] = Some(duration);
                Ok(())
            }
        }
    }

    pub fn committed_count(&self) -> usize {
        self.slots.iter().take_while(|s| s.is_some()).count()
    }

    pub fn intervals(&self) -> Vec<u64> {
        self.slots.iter().map_while(|s| *s).collect()
    }

    pub fn accumulated(&self, now: Tick) -> u64 {
        let closed: u64 = self.intervals().iter().sum();
        closed + self.open_elapsed(now)
    }

    pub fn open_elapsed(&self, now: Tick) -> u64 {
        self.running_since.map_or(0, |s| now.saturating_sub(s))
    }

    /// True iff the measured party has used up the whole budget.
    pub fn check_aggregate_timeout(&self, now: Tick) -> bool {
        self.accumulated(now) > self.threshold
    }

    /// Marker denominations offered by the interval outputs: powers of two
    /// up to the first one exceeding the threshold.
    pub fn denominations(&self) -> Vec<u64> {
        let mut out = vec![1u64];
        while *out.last().unwrap() <= self.threshold {
            let next = out.last().unwrap() * 2;
            out.push(next);
        }
        out
    }

    /// Denominations that have matured in the open interval and are not yet
    /// mined.
    pub fn minable_markers(&self, now: Tick) -> Vec<u64> {
        if !self.is_running() {
            return Vec::new();
        }
        let elapsed = self.open_elapsed(now);
        let interval = self.committed_count();
        self.denominations()
            .into_iter()
            .filter(|d| *d <= elapsed)
            .filter(|d| {
                !self
                    .markers
                    .iter()
                    .any(|m| m.interval == interval && m.denomination == *d)
            })
            .collect()
    }

    pub fn mine_marker(&mut self, now: Tick, denomination: u64) -> Result<Marker, WatchError> {
        if !self.is_running() {
            return Err(WatchError::NotRunning);
        }
        if !denomination.is_power_of_two() {
            return Err(WatchError::InvalidDenomination(denomination));
        }
        let elapsed = self.open_elapsed(now);
        if elapsed < denomination {
            return Err(WatchError::NotMatured {
                denomination,
                elapsed,
            });
        }
        let interval = self.committed_count();
        if self
            .markers
            .iter()
            .any(|m| m.interval == interval && m.denomination == denomination)
        {
            return Err(WatchError::MarkerSpent(denomination));
        }
        let marker = Marker {
            interval,
            denomination,
            mined_at: now,
        };
        self.markers.push(marker);
        Ok(marker)
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    /// Lower bound on the open interval proven by mined markers.
    pub fn proven_open_elapsed(&self) -> u64 {
        let interval = self.committed_count();
        self.markers
            .iter()
            .filter(|m| m.interval == interval)
            .map(|m| m.denomination)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn watch(threshold: u64) -> StopWatch {
        StopWatch::new(FunctionaryId(2), threshold, 16)
    }

    #[test]
    fn start_and_stop() {
        let mut w = watch(7);
        w.start(10).unwrap();
        assert_eq!(w.running_since(), Some(10));
        assert_eq!(w.start(11), Err(WatchError::AlreadyRunning));
        assert_eq!(w.stop(12), Ok(2));
        assert_eq!(w.intervals(), vec![2]);
        assert_eq!(w.stop(13), Err(WatchError::NotRunning));
    }

    #[test]
    fn unstopped_watch_times_out() {
        let mut w = watch(5);
        w.start(10).unwrap();
        assert!(!w.check_aggregate_timeout(15));
        assert!(w.check_aggregate_timeout(16));
    }

    #[test]
    fn intervals_accumulate() {
        let mut w = watch(7);
        let mut t = 0;
        for d in [2, 3, 1] {
            w.start(t).unwrap();
            t += d;
            w.stop(t).unwrap();
            t += 5;
        }
        assert_eq!(w.accumulated(t), 6);
        assert!(!w.check_aggregate_timeout(t));
    }

    #[test]
    fn aggregate_timeout_cases() {
        let mut w = watch(7);
        w.commit_interval(0, 4).unwrap();
        w.commit_interval(1, 4).unwrap();
        assert!(w.check_aggregate_timeout(0));

        let mut w = watch(7);
        w.commit_interval(0, 3).unwrap();
        w.start(100).unwrap();
        assert!(w.check_aggregate_timeout(105));
        assert!(!w.check_aggregate_timeout(104));
    }

    #[test]
    fn markers_mature_by_elapsed_time() {
        let mut w = watch(3);
        w.start(0).unwrap();
        assert_eq!(w.minable_markers(0), Vec::<u64>::new());
        assert_eq!(
            w.mine_marker(0, 1),
            Err(WatchError::NotMatured {
                denomination: 1,
                elapsed: 0
            })
        );
        assert_eq!(w.minable_markers(3), vec![1, 2]);
        w.mine_marker(3, 2).unwrap();
        assert_eq!(w.mine_marker(3, 2), Err(WatchError::MarkerSpent(2)));
        assert_eq!(w.mine_marker(3, 3), Err(WatchError::InvalidDenomination(3)));
        assert_eq!(w.proven_open_elapsed(), 2);
        assert_eq!(w.minable_markers(4), vec![1, 4]);
    }

    #[test]
    fn committed_slots_cannot_be_rewritten() {
        let mut w = watch(10);
        w.commit_interval(0, 3).unwrap();
        assert_eq!(w.commit_interval(0, 1), Err(WatchError::SlotCommitted(0)));
        assert_eq!(
            w.commit_interval(2, 1),
            Err(WatchError::SlotOutOfOrder { index: 2, next: 1 })
        );
        let mut small = StopWatch::new(FunctionaryId(0), 10, 1);
        small.commit_interval(0, 1).unwrap();
        assert_eq!(
            small.commit_interval(1, 1),
            Err(WatchError::SlotsExhausted(1))
        );
    }

    proptest! {
        #[test]
        fn rewrite_always_rejected(durations in prop::collection::vec(0u64..50, 1..10), idx in 0usize..10, v in 0u64..50) {
            let mut w = StopWatch::new(FunctionaryId(0), 1000, 16);
            for (i, d) in durations.iter().enumerate() {
                w.commit_interval(i, *d).unwrap();
            }
            let before = w.intervals();
            if idx < durations.len() {
                prop_assert_eq!(w.commit_interval(idx, v), Err(WatchError::SlotCommitted(idx)));
            }
            prop_assert_eq!(&w.intervals()[..before.len()], &before[..]);
        }

        #[test]
        fn responsive_party_stays_under_threshold(
            delays in prop::collection::vec(1u64..5, 1..12),
            gap in 1u64..4,
        ) {
            let r = *delays.iter().max().unwrap();
            let k = delays.len() as u64;
            let mut w = StopWatch::new(FunctionaryId(0), k * r, 32);
            let mut t = 0;
            for d in &delays {
                w.start(t).unwrap();
                t += d;
                w.stop(t).unwrap();
                t += gap;
            }
            let total: u64 = delays.iter().sum();
            prop_assert_eq!(w.accumulated(t), total);
            prop_assert!(total <= k * r);
            prop_assert!(!w.check_aggregate_timeout(t));
        }

        #[test]
        fn minable_or_mined_set_only_grows(steps in prop::collection::vec(0u64..4, 1..20)) {
            let mut w = StopWatch::new(FunctionaryId(0), 64, 4);
            w.start(0).unwrap();
            let mut now = 0;
            let mut seen: std::collections::BTreeSet<u64> = Default::default();
            for (i, s) in steps.iter().enumerate() {
                now += s;
                let minable = w.minable_markers(now);
                let mut available: std::collections::BTreeSet<u64> = minable.iter().copied().collect();
                available.extend(w.markers().iter().map(|m| m.denomination));
                prop_assert!(seen.is_subset(&available));
                seen = available;
                if i % 2 == 0 {
                    if let Some(d) = minable.first() {
                        w.mine_marker(now, *d).unwrap();
                    }
                }
            }
        }
    }
}
