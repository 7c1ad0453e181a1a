//! Behavior management: credit scoring, blocking, and coin returns.
//!
//! Devices start with the same credit. Each resource request is scored
//! against a price threshold and a request-frequency limit; observed network
//! activity is scored against the registered port and destination set. Good
//! behavior earns a small credit gain, each violation costs a larger fixed
//! amount, and a device whose credit reaches zero is blocked from all future
//! service. When an allocation ends, the coins charged for it are returned
//! adjusted by the credit change that request earned.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coins::Coins;
use crate::hash::{Address, Hash32};

/// One observed rule violation. Price and frequency violations come from
/// request evaluation; port and destination violations from activity
/// matching against the registered device specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    PriceExceeded,
    FrequencyExceeded,
    WrongPort,
    UnknownDestination,
}

#[derive(Debug, Error, PartialEq)]
pub enum CreditError {
    #[error("invalid credit policy: {0}")]
    InvalidPolicy(String),
    #[error("device {0} is blocked; behavior evaluation must be gated earlier")]
    DeviceBlocked(Address),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditPolicy {
    /// Credit granted at registration.
    pub initial_credit: i64,
    /// Upper clamp for credit.
    pub max_credit: i64,
    /// Coin-return influence factor (eta).
    pub eta: f64,
    /// The per-device price threshold is this factor times the price of the
    /// device's registered maximum demand against the full pool capacity.
    pub price_threshold_factor: f64,
    /// Maximum requests allowed within `freq_window` consecutive timeslots.
    pub freq_limit: u32,
    pub freq_window: u64,
    /// Credit change for a violation-free request.
    pub delta_good: i64,
    /// Credit change per violation (non-positive).
    pub delta_bad: i64,
    /// Coin returns are capped at `charged * return_cap_factor +
    /// eta * delta_good`.
    pub return_cap_factor: f64,
}

impl Default for CreditPolicy {
    fn default() -> Self {
        CreditPolicy {
            initial_credit: 100,
            max_credit: 100,
            eta: 1.0,
            price_threshold_factor: 1.5,
            freq_limit: 10,
            freq_window: 10,
            delta_good: 1,
            delta_bad: -10,
            return_cap_factor: 1.0,
        }
    }
}

impl CreditPolicy {
    pub fn validate(&self) -> Result<(), CreditError> {
        if self.initial_credit < 0 || self.initial_credit > self.max_credit {
            return Err(CreditError::InvalidPolicy(format!(
                "initial_credit must be in [0, max_credit], got {} with max {}",
                self.initial_credit, self.max_credit
            )));
        }
        if self.eta < 0.0 {
            return Err(CreditError::InvalidPolicy(format!(
                "eta must be >= 0, got {}",
                self.eta
            )));
        }
        if self.freq_window < 1 {
            return Err(CreditError::InvalidPolicy("freq_window must be >= 1".into()));
        }
        if self.delta_good < 0 {
            return Err(CreditError::InvalidPolicy(format!(
                "delta_good must be >= 0, got {}",
                self.delta_good
            )));
        }
        if self.delta_bad > 0 {
            return Err(CreditError::InvalidPolicy(format!(
                "delta_bad must be <= 0, got {}",
                self.delta_bad
            )));
        }
        Ok(())
    }
}

/// Outcome of evaluating one request or one batch of activity violations.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub delta: i64,
    pub violations: Vec<ViolationKind>,
}

/// Result of applying a credit delta to an account.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditChange {
    pub credit_before: i64,
    pub credit_after: i64,
    /// True when this change drove the credit to zero.
    pub blocked_now: bool,
}

/// Per-device request history ring used by the frequency rule.
#[derive(Debug, Clone, Default)]
pub struct CreditTracker {
    history: BTreeMap<Address, VecDeque<(u64, Hash32)>>,
}

impl CreditTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a request at `timeslot` and return how many requests the device
    /// has made within the window ending at `timeslot` (inclusive).
    fn record(&mut self, device: Address, timeslot: u64, request_id: Hash32, window: u64) -> usize {
        let ring = self.history.entry(device).or_default();
        ring.push_back((timeslot, request_id));
        while let Some((t, _)) = ring.front() {
            if t + window <= timeslot {
                ring.pop_front();
            } else {
                break;
            }
        }
        ring.len()
    }
}

/// Score one resource request.
///
/// `computed_price` is the request's total price at evaluation time; pass
/// `None` when the request cannot be priced (demand exceeds current
/// availability), in which case only the frequency rule applies.
/// `price_threshold` is the device's precomputed threshold.
pub fn evaluate_request(
    tracker: &mut CreditTracker,
    device: Address,
    request_id: Hash32,
    timeslot: u64,
    computed_price: Option<f64>,
    price_threshold: f64,
    policy: &CreditPolicy,
) -> Evaluation {
    let mut violations = Vec::new();
    if let Some(price) = computed_price {
        if price > price_threshold {
            violations.push(ViolationKind::PriceExceeded);
        }
    }
    let in_window = tracker.record(device, timeslot, request_id, policy.freq_window);
    if in_window > policy.freq_limit as usize {
        violations.push(ViolationKind::FrequencyExceeded);
    }
    let delta = if violations.is_empty() {
        policy.delta_good
    } else {
        policy.delta_bad * violations.len() as i64
    };
    Evaluation { delta, violations }
}

/// Score observed activity violations. Conformant activity earns nothing;
/// each violation costs `delta_bad`.
pub fn evaluate_activity(violations: &[ViolationKind], policy: &CreditPolicy) -> i64 {
    if violations.is_empty() {
        0
    } else {
        policy.delta_bad * violations.len() as i64
    }
}

/// Apply a credit delta, clamping to `[0, max_credit]`.
pub fn apply_delta(credit: i64, delta: i64, policy: &CreditPolicy) -> CreditChange {
    let after = (credit + delta).clamp(0, policy.max_credit);
    CreditChange {
        credit_before: credit,
        credit_after: after,
        blocked_now: after == 0 && credit > 0,
    }
}

/// Coins returned when an allocation's lifetime expires:
/// `charged + delta * eta`, floored at zero and capped at
/// `charged * return_cap_factor + eta * delta_good`. Computed in integer
/// hundredths so the off-floor/off-cap identity `return - charged =
/// delta * eta` is exact.
pub fn coin_return(charged: Coins, delta: i64, policy: &CreditPolicy) -> Coins {
    let adjust_cents = (delta as f64 * policy.eta * 100.0).round_ties_even() as i64;
    let raw = charged.cents() + adjust_cents;
    let cap_cents = (charged.cents() as f64 * policy.return_cap_factor
        + policy.eta * policy.delta_good as f64 * 100.0)
        .round_ties_even() as i64;
    Coins::from_cents(raw.clamp(0, cap_cents.max(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy() -> CreditPolicy {
        CreditPolicy::default()
    }

    fn req_id(n: u64) -> Hash32 {
        Hash32::digest(format!("req:{n}").as_bytes())
    }

    #[test]
    fn good_request_earns_delta_good() {
        let mut tracker = CreditTracker::new();
        let dev = Address::derive("d");
        let eval = evaluate_request(&mut tracker, dev, req_id(0), 1, Some(10.0), 50.0, &policy());
        assert_eq!(eval.delta, 1);
        assert!(eval.violations.is_empty());
    }

    #[test]
    fn price_over_threshold_is_a_violation() {
        let mut tracker = CreditTracker::new();
        let dev = Address::derive("d");
        let eval = evaluate_request(&mut tracker, dev, req_id(0), 1, Some(51.0), 50.0, &policy());
        assert_eq!(eval.delta, -10);
        assert_eq!(eval.violations, vec![ViolationKind::PriceExceeded]);
    }

    #[test]
    fn eleventh_request_in_window_trips_frequency_rule() {
        // freq_limit 10 over a 10-slot window: the 11th within the window is
        // flagged, matching a direct count of the ring.
        let mut tracker = CreditTracker::new();
        let dev = Address::derive("d");
        for i in 0..10u64 {
            let eval = evaluate_request(
                &mut tracker,
                dev,
                req_id(i),
                1 + i % 10,
                Some(1.0),
                50.0,
                &policy(),
            );
            assert!(eval.violations.is_empty(), "request {i} should be clean");
        }
        let eval = evaluate_request(&mut tracker, dev, req_id(10), 10, Some(1.0), 50.0, &policy());
        assert_eq!(eval.violations, vec![ViolationKind::FrequencyExceeded]);
        assert_eq!(eval.delta, -10);
    }

    #[test]
    fn window_slides() {
        let mut tracker = CreditTracker::new();
        let dev = Address::derive("d");
        for i in 0..10u64 {
            evaluate_request(&mut tracker, dev, req_id(i), 1, Some(1.0), 50.0, &policy());
        }
        // Far enough in the future that the old burst has left the window.
        let eval = evaluate_request(&mut tracker, dev, req_id(99), 11, Some(1.0), 50.0, &policy());
        assert!(eval.violations.is_empty());
    }

    #[test]
    fn activity_scoring() {
        let p = policy();
        assert_eq!(evaluate_activity(&[], &p), 0);
        assert_eq!(evaluate_activity(&[ViolationKind::WrongPort], &p), -10);
        assert_eq!(
            evaluate_activity(
                &[ViolationKind::WrongPort, ViolationKind::UnknownDestination],
                &p
            ),
            -20
        );
    }

    #[test]
    fn apply_delta_clamps_and_blocks() {
        let p = policy();
        let c = apply_delta(100, -10, &p);
        assert_eq!(c.credit_after, 90);
        assert!(!c.blocked_now);
        let c = apply_delta(5, -10, &p);
        assert_eq!(c.credit_after, 0);
        assert!(c.blocked_now);
        let c = apply_delta(100, 1, &p);
        assert_eq!(c.credit_after, 100);
        assert!(!c.blocked_now);
    }

    #[test]
    fn coin_return_examples() {
        let p = policy();
        let charged = "29.49".parse::<Coins>().unwrap();
        assert_eq!(coin_return(charged, 0, &p).to_string(), "29.49");
        assert_eq!(coin_return(charged, 1, &p).to_string(), "30.49");
        assert_eq!(coin_return(charged, -10, &p).to_string(), "19.49");
        // Floor: a heavy penalty cannot make the return negative.
        assert_eq!(coin_return(Coins::from_cents(500), -10, &p), Coins::ZERO);
    }

    proptest! {
        #[test]
        fn credit_stays_in_bounds(credit in 0i64..=100, delta in -50i64..=50) {
            let p = policy();
            let c = apply_delta(credit, delta, &p);
            prop_assert!(c.credit_after >= 0 && c.credit_after <= p.max_credit);
            prop_assert_eq!(c.blocked_now, c.credit_after == 0 && credit > 0);
        }

        #[test]
        fn coin_return_linear_off_floor_and_cap(charged_cents in 2000i64..100_000, delta in -15i64..=1) {
            let p = policy();
            let charged = Coins::from_cents(charged_cents);
            let ret = coin_return(charged, delta, &p);
            let expected = charged_cents + delta * 100;
            if expected >= 0 && expected <= charged_cents + 100 {
                prop_assert_eq!(ret.cents() - charged_cents, delta * 100);
            }
        }
    }
}
