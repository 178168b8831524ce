//! Interest stream handling: exponentially decayed popularity scores.
//!
//! An item's popularity is `(1-alpha) * sum_i a_i * alpha^(n-i)` where
//! `a_i` indicates whether the item appeared in the interest stream at tick
//! `i` and `n` is the current tick. The ledger keeps one decayed accumulator
//! per item and updates it incrementally, which is exactly equivalent to the
//! direct summation. Re-indexing itself happens inside the tick loop; this
//! module owns the event type and the scores.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One interest-stream arrival. `quality` optionally overrides the item's
/// stored quality from this tick on (qualities may drift over time); when
/// absent the stored value keeps governing re-index coins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestEvent {
    pub id: String,
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LedgerState {
    /// Decayed indicator sum as of `last`: `sum_i a_i * alpha^(last - i)`.
    pub state: f64,
    pub last: u64,
}

/// Per-item decayed popularity state.
#[derive(Clone, Debug)]
pub struct PopularityLedger {
    alpha: f64,
    scores: HashMap<String, LedgerState>,
}

impl PopularityLedger {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "interest decay alpha must lie strictly in (0,1), got {alpha}"
            )));
        }
        Ok(Self { alpha, scores: HashMap::new() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Records an appearance of `id` at `tick`. Repeated appearances within
    /// one tick collapse to a single indicator; ticks must not go backwards
    /// per item.
    pub fn record(&mut self, id: &str, tick: u64) -> Result<()> {
        match self.scores.get_mut(id) {
            None => {
                self.scores.insert(id.to_owned(), LedgerState { state: 1.0, last: tick });
            }
            Some(s) if tick < s.last => {
                return Err(Error::Protocol(format!(
                    "interest for {id} at tick {tick} arrived after tick {}",
                    s.last
                )));
            }
            Some(s) if tick == s.last => {} // same-tick repeat: indicator already 1
            Some(s) => {
                s.state = s.state * self.alpha.powi((tick - s.last) as i32) + 1.0;
                s.last = tick;
            }
        }
        Ok(())
    }

    /// Records a batch of events (any mix of items) at their own ticks.
    pub fn record_interest(&mut self, events: &[InterestEvent]) -> Result<()> {
        for ev in events {
            self.record(&ev.id, ev.tick)?;
        }
        Ok(())
    }

    /// Popularity of `id` at tick `now`, in `[0, 1]`; 0 for never-seen ids.
    pub fn pop(&self, id: &str, now: u64) -> f64 {
        match self.scores.get(id) {
            None => 0.0,
            Some(s) => {
                debug_assert!(now >= s.last, "popularity queried before the last event");
                let elapsed = now.saturating_sub(s.last);
                (1.0 - self.alpha) * s.state * self.alpha.powi(elapsed as i32)
            }
        }
    }

    /// Builds a ledger directly from a tick-sorted event stream.
    pub fn from_events(alpha: f64, events: &[InterestEvent]) -> Result<Self> {
        let mut ledger = Self::new(alpha)?;
        ledger.record_interest(events)?;
        Ok(ledger)
    }

    /// (id, state) pairs sorted by id, for serialization.
    pub fn entries_sorted(&self) -> Vec<(&str, LedgerState)> {
        let mut out: Vec<(&str, LedgerState)> =
            self.scores.iter().map(|(id, &s)| (id.as_str(), s)).collect();
        out.sort_unstable_by_key(|&(id, _)| id);
        out
    }

    pub(crate) fn restore_entry(&mut self, id: String, state: LedgerState) {
        self.scores.insert(id, state);
    }
}
