//! Dynamic pricing and request admission.
//!
//! The unit price of resource j for a request with demand r, current
//! availability c, and priority level L is `alpha^(r/c) * beta^L`; the total
//! price of a request is the demand-weighted sum of its unit prices. The
//! pricing scheduler admits greedily: each round it permanently denies every
//! request whose demand no longer fits the remaining capacity, prices the
//! rest, accepts the single cheapest, subtracts its demand, and repeats until
//! nothing fits. First-come-first-serve and priority-order baselines share
//! the same decision shape but compute no prices.
//!
//! When per-device coin budgets are supplied, a request whose price exceeds
//! its device's remaining budget is denied at the moment it would otherwise
//! be accepted: within a batch prices only rise and budgets only shrink, so
//! such a request can never become affordable later.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coins::Coins;
use crate::hash::{Address, Hash32};
use crate::resources::{ResourceKind, ResourceVector};

pub const PRIORITY_LEVELS: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum AdmissionError {
    #[error("invalid pricing params: {0}")]
    InvalidParams(String),
    #[error("unit price undefined: {kind} has zero availability but demand {demand}")]
    ZeroAvailability { kind: &'static str, demand: f64 },
    #[error("request {0} is infeasible against the given availability")]
    InfeasibleRequest(Hash32),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Pricing constants: `alpha` is the basic price base (> 1), `beta` the
/// priority influence factor (>= 1; strict price monotonicity in the level
/// holds only for beta > 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingParams {
    pub alpha: f64,
    pub beta: f64,
}

impl PricingParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, AdmissionError> {
        if !(alpha > 1.0) {
            return Err(AdmissionError::InvalidParams(format!(
                "alpha must be > 1, got {alpha}"
            )));
        }
        if !(beta >= 1.0) {
            return Err(AdmissionError::InvalidParams(format!(
                "beta must be >= 1, got {beta}"
            )));
        }
        Ok(PricingParams { alpha, beta })
    }
}

/// One device demand at one timeslot. The priority is inherited from the
/// device's registered priority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub request_id: Hash32,
    pub device: Address,
    pub demand: ResourceVector,
    pub priority: u8,
    pub lifetime: u64,
    pub arrival: u64,
}

impl ResourceRequest {
    pub fn validate(&self) -> Result<(), AdmissionError> {
        if self.priority < 1 || self.priority > PRIORITY_LEVELS {
            return Err(AdmissionError::InvalidRequest(format!(
                "priority must be 1..={PRIORITY_LEVELS}, got {}",
                self.priority
            )));
        }
        if self.lifetime < 1 {
            return Err(AdmissionError::InvalidRequest("lifetime must be >= 1".into()));
        }
        self.demand
            .validate()
            .map_err(|e| AdmissionError::InvalidRequest(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenialReason {
    /// Demand exceeds current availability in at least one component.
    Infeasible,
    /// No request in the batch fit the pool at the start of the slot.
    PoolExhausted,
    /// The device is blocked; denied before pricing.
    Blocked,
    /// The device cannot pay the computed price.
    InsufficientCoins,
}

impl DenialReason {
    pub fn name(self) -> &'static str {
        match self {
            DenialReason::Infeasible => "infeasible",
            DenialReason::PoolExhausted => "pool_exhausted",
            DenialReason::Blocked => "blocked",
            DenialReason::InsufficientCoins => "insufficient_coins",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub request_id: Hash32,
    pub device: Address,
    pub verdict: Verdict,
    /// Total price at acceptance time; `None` for denials and for the
    /// baseline schedulers, which compute no prices.
    pub price: Option<f64>,
    pub reason: Option<DenialReason>,
}

/// One greedy round, recorded for the post-hoc trace oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRound {
    /// Availability at the start of the round.
    pub available: ResourceVector,
    pub denied_infeasible: Vec<Hash32>,
    /// Every feasible request priced this round.
    pub priced: Vec<(Hash32, f64)>,
    /// Requests denied because their price exceeded the device budget, in
    /// ascending price order, all cheaper than the accepted one.
    pub denied_unaffordable: Vec<(Hash32, f64)>,
    pub accepted: Option<(Hash32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdmissionTrace {
    pub rounds: Vec<TraceRound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionResult {
    /// One decision per request, in batch order.
    pub decisions: Vec<AdmissionDecision>,
    /// Accepted request ids in acceptance order.
    pub accepted: Vec<Hash32>,
    /// Availability after subtracting all accepted demands.
    pub remaining: ResourceVector,
    pub trace: AdmissionTrace,
    /// Number of total-price evaluations performed (complexity counter).
    pub price_evaluations: u64,
}

impl AdmissionResult {
    pub fn accepted_count(&self) -> usize {
        self.accepted.len()
    }
}

/// Unit price `alpha^(r/c) * beta^L`. A zero demand prices at `beta^L`
/// regardless of availability; a positive demand against zero availability is
/// undefined and must have been denied earlier.
pub fn unit_price(
    demand: f64,
    available: f64,
    priority: u8,
    params: &PricingParams,
) -> Result<f64, AdmissionError> {
    let exponent = if demand == 0.0 {
        0.0
    } else {
        if available <= 0.0 {
            return Err(AdmissionError::ZeroAvailability {
                kind: "resource",
                demand,
            });
        }
        demand / available
    };
    Ok(params.alpha.powf(exponent) * params.beta.powi(priority as i32))
}

/// Total price `beta^L * sum_j r_j * alpha^(r_j/c_j)`. Zero-demand components
/// contribute nothing, so `c_j = 0` is tolerated there. The caller must have
/// checked feasibility; an infeasible request is an error, not a price.
pub fn total_price(
    demand: &ResourceVector,
    available: &ResourceVector,
    priority: u8,
    params: &PricingParams,
) -> Result<f64, AdmissionError> {
    let mut sum = 0.0;
    for kind in ResourceKind::ALL {
        let r = demand.get(kind);
        if r == 0.0 {
            continue;
        }
        let c = available.get(kind);
        if r > c {
            return Err(AdmissionError::InfeasibleRequest(Hash32::zero()));
        }
        sum += r * params.alpha.powf(r / c);
    }
    Ok(params.beta.powi(priority as i32) * sum)
}

fn feasible(req: &ResourceRequest, available: &ResourceVector) -> bool {
    req.demand.fits_within(available)
}

/// Greedy pricing admission over one batch (no budgets).
pub fn admit(
    batch: &[ResourceRequest],
    available: &ResourceVector,
    params: &PricingParams,
) -> AdmissionResult {
    admit_with_budgets(batch, available, params, None)
}

/// Greedy pricing admission with optional per-device coin budgets. A device
/// absent from the budget map is treated as having no coins.
pub fn admit_with_budgets(
    batch: &[ResourceRequest],
    available: &ResourceVector,
    params: &PricingParams,
    budgets: Option<&BTreeMap<Address, Coins>>,
) -> AdmissionResult {
    let mut verdicts: BTreeMap<Hash32, AdmissionDecision> = BTreeMap::new();
    let mut queue: Vec<&ResourceRequest> = batch.iter().collect();
    let mut capacity = *available;
    let mut budget = budgets.cloned();
    let mut accepted = Vec::new();
    let mut trace = AdmissionTrace::default();
    let mut evaluations = 0u64;

    loop {
        let mut round = TraceRound {
            available: capacity,
            denied_infeasible: Vec::new(),
            priced: Vec::new(),
            denied_unaffordable: Vec::new(),
            accepted: None,
        };
        queue.retain(|req| {
            if feasible(req, &capacity) {
                true
            } else {
                round.denied_infeasible.push(req.request_id);
                verdicts.insert(
                    req.request_id,
                    AdmissionDecision {
                        request_id: req.request_id,
                        device: req.device,
                        verdict: Verdict::Deny,
                        price: None,
                        reason: Some(DenialReason::Infeasible),
                    },
                );
                false
            }
        });
        if queue.is_empty() {
            if !round.denied_infeasible.is_empty() {
                trace.rounds.push(round);
            }
            break;
        }

        let mut priced: Vec<(usize, f64)> = Vec::with_capacity(queue.len());
        for (i, req) in queue.iter().enumerate() {
            let price = total_price(&req.demand, &capacity, req.priority, params)
                .expect("feasible request must price");
            evaluations += 1;
            round.priced.push((req.request_id, price));
            priced.push((i, price));
        }
        // Minimal price wins; ties go to the earliest arrival, then the
        // lexicographically smallest request id.
        priced.sort_by(|a, b| {
            let ra = queue[a.0];
            let rb = queue[b.0];
            a.1.total_cmp(&b.1)
                .then(ra.arrival.cmp(&rb.arrival))
                .then(ra.request_id.cmp(&rb.request_id))
        });

        let mut chosen: Option<(usize, f64)> = None;
        let mut broke: Vec<usize> = Vec::new();
        for (i, price) in priced {
            let req = queue[i];
            let affordable = match &budget {
                None => true,
                Some(map) => {
                    let charge = Coins::from_price(price);
                    map.get(&req.device).copied().unwrap_or(Coins::ZERO) >= charge
                }
            };
            if affordable {
                chosen = Some((i, price));
                break;
            }
            round.denied_unaffordable.push((req.request_id, price));
            verdicts.insert(
                req.request_id,
                AdmissionDecision {
                    request_id: req.request_id,
                    device: req.device,
                    verdict: Verdict::Deny,
                    price: Some(price),
                    reason: Some(DenialReason::InsufficientCoins),
                },
            );
            broke.push(i);
        }

        match chosen {
            None => {
                // Every feasible request was unaffordable; the batch is done.
                trace.rounds.push(round);
                break;
            }
            Some((idx, price)) => {
                let req = queue[idx];
                capacity = capacity
                    .checked_sub(&req.demand)
                    .expect("accepted demand fits capacity");
                if let Some(map) = budget.as_mut() {
                    let charge = Coins::from_price(price);
                    let entry = map.entry(req.device).or_insert(Coins::ZERO);
                    *entry = entry
                        .checked_sub(charge)
                        .expect("affordability checked before acceptance");
                }
                round.accepted = Some((req.request_id, price));
                verdicts.insert(
                    req.request_id,
                    AdmissionDecision {
                        request_id: req.request_id,
                        device: req.device,
                        verdict: Verdict::Accept,
                        price: Some(price),
                        reason: None,
                    },
                );
                accepted.push(req.request_id);
                broke.push(idx);
                trace.rounds.push(round);
                let mut drop = std::mem::take(&mut broke);
                drop.sort_unstable();
                for i in drop.into_iter().rev() {
                    queue.remove(i);
                }
            }
        }
    }

    let decisions = batch
        .iter()
        .map(|req| {
            verdicts
                .remove(&req.request_id)
                .expect("every request receives a decision")
        })
        .collect();
    AdmissionResult {
        decisions,
        accepted,
        remaining: capacity,
        trace,
        price_evaluations: evaluations,
    }
}

fn scan_in_order(
    batch: &[ResourceRequest],
    order: Vec<&ResourceRequest>,
    available: &ResourceVector,
) -> AdmissionResult {
    let mut capacity = *available;
    let mut accepted = Vec::new();
    let mut verdicts: BTreeMap<Hash32, AdmissionDecision> = BTreeMap::new();
    for req in &order {
        if feasible(req, &capacity) {
            capacity = capacity
                .checked_sub(&req.demand)
                .expect("feasible demand fits");
            accepted.push(req.request_id);
            verdicts.insert(
                req.request_id,
                AdmissionDecision {
                    request_id: req.request_id,
                    device: req.device,
                    verdict: Verdict::Accept,
                    price: None,
                    reason: None,
                },
            );
        } else {
            verdicts.insert(
                req.request_id,
                AdmissionDecision {
                    request_id: req.request_id,
                    device: req.device,
                    verdict: Verdict::Deny,
                    price: None,
                    reason: Some(DenialReason::Infeasible),
                },
            );
        }
    }
    let decisions = batch
        .iter()
        .map(|r| verdicts.remove(&r.request_id).expect("decision recorded"))
        .collect();
    AdmissionResult {
        decisions,
        accepted,
        remaining: capacity,
        trace: AdmissionTrace::default(),
        price_evaluations: 0,
    }
}

/// First-come-first-serve baseline: scan in arrival order, accept whatever
/// fits.
pub fn admit_fcfs(batch: &[ResourceRequest], available: &ResourceVector) -> AdmissionResult {
    let mut order: Vec<&ResourceRequest> = batch.iter().collect();
    order.sort_by_key(|r| r.arrival);
    scan_in_order(batch, order, available)
}

/// Multi-level priority baseline: stable-sort by priority level (level 1
/// first), first-come-first-serve within a level.
pub fn admit_priority(batch: &[ResourceRequest], available: &ResourceVector) -> AdmissionResult {
    let mut order: Vec<&ResourceRequest> = batch.iter().collect();
    order.sort_by_key(|r| (r.priority, r.arrival));
    scan_in_order(batch, order, available)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> PricingParams {
        PricingParams::new(100.0, 1.35).unwrap()
    }

    fn req(n: u64, demand: [f64; 4], priority: u8) -> ResourceRequest {
        ResourceRequest {
            request_id: Hash32::digest(format!("req:{n}").as_bytes()),
            device: Address::derive(&format!("dev:{n}")),
            demand: ResourceVector::new(demand),
            priority,
            lifetime: 1,
            arrival: 0,
        }
    }

    /// Independent price route: exp-based instead of powf-based.
    fn oracle_total_price(demand: &[f64; 4], available: &[f64; 4], level: u8, alpha: f64, beta: f64) -> f64 {
        let mut s = 0.0;
        for j in 0..4 {
            if demand[j] == 0.0 {
                continue;
            }
            s += demand[j] * ((demand[j] / available[j]) * alpha.ln()).exp();
        }
        (level as f64 * beta.ln()).exp() * s
    }

    #[test]
    fn unit_price_examples() {
        let p = params();
        // zero exponent
        assert_eq!(unit_price(0.0, 250.0, 1, &p).unwrap(), 1.35);
        // unit exponent: alpha * beta
        assert!((unit_price(250.0, 250.0, 1, &p).unwrap() - 135.0).abs() < 1e-9);
        // frozen from a 40-digit evaluation of 100^0.02 * 1.35
        let v = unit_price(5.0, 250.0, 1, &p).unwrap();
        assert!((v - 1.4802455647932998).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn unit_price_zero_availability() {
        let p = params();
        assert!(matches!(
            unit_price(1.0, 0.0, 1, &p),
            Err(AdmissionError::ZeroAvailability { .. })
        ));
        // zero demand tolerates zero availability
        assert_eq!(unit_price(0.0, 0.0, 2, &p).unwrap(), 1.35 * 1.35);
    }

    #[test]
    fn total_price_examples() {
        let p = params();
        let capacity = ResourceVector::new([300.0, 250.0, 250.0, 250.0]);
        assert_eq!(
            total_price(&ResourceVector::zero(), &capacity, 1, &p).unwrap(),
            0.0
        );
        // frozen from a 40-digit evaluation
        let demand = ResourceVector::new([5.0, 5.0, 5.0, 5.0]);
        let v = total_price(&demand, &capacity, 1, &p).unwrap();
        assert!((v - 29.492165817611537).abs() < 1e-10, "got {v}");
        let v4 = total_price(&demand, &capacity, 4, &p).unwrap();
        assert!((v4 - 72.56178747350598).abs() < 1e-10, "got {v4}");
        // the level factor is exactly beta^3
        assert!((v4 / v - 1.35f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn total_price_matches_independent_route() {
        let p = params();
        let demand = [5.0, 3.0, 0.0, 7.0];
        let avail = [300.0, 250.0, 250.0, 250.0];
        for level in 1..=4u8 {
            let v = total_price(
                &ResourceVector::new(demand),
                &ResourceVector::new(avail),
                level,
                &p,
            )
            .unwrap();
            let o = oracle_total_price(&demand, &avail, level, 100.0, 1.35);
            assert!((v - o).abs() / o < 1e-12);
        }
    }

    #[test]
    fn total_price_rejects_infeasible() {
        let p = params();
        let demand = ResourceVector::new([11.0, 0.0, 0.0, 0.0]);
        let avail = ResourceVector::new([10.0, 10.0, 10.0, 10.0]);
        assert!(matches!(
            total_price(&demand, &avail, 1, &p),
            Err(AdmissionError::InfeasibleRequest(_))
        ));
    }

    #[test]
    fn admit_single_fitting_request() {
        let p = params();
        let capacity = ResourceVector::new([300.0, 250.0, 250.0, 250.0]);
        let batch = vec![req(1, [5.0, 5.0, 5.0, 5.0], 1)];
        let result = admit(&batch, &capacity, &p);
        assert_eq!(result.accepted_count(), 1);
        assert_eq!(
            result.remaining,
            ResourceVector::new([295.0, 245.0, 245.0, 245.0])
        );
        assert_eq!(result.decisions[0].verdict, Verdict::Accept);
        let price = result.decisions[0].price.unwrap();
        assert!((price - 29.492165817611537).abs() < 1e-10);
    }

    #[test]
    fn admit_denies_oversized_demand() {
        let p = params();
        let capacity = ResourceVector::new([10.0, 10.0, 10.0, 10.0]);
        let batch = vec![req(1, [11.0, 0.0, 0.0, 0.0], 1)];
        let result = admit(&batch, &capacity, &p);
        assert_eq!(result.accepted_count(), 0);
        assert_eq!(result.decisions[0].reason, Some(DenialReason::Infeasible));
        assert_eq!(result.price_evaluations, 0);
    }

    #[test]
    fn admit_hand_traced_two_request_example() {
        // Two identical demands (5,5,5,5) on capacity (10,10,10,10) with
        // levels 1 and 4. Level 1 is cheaper by beta^3, wins round one at
        // price 270; level 4 is repriced with every c at 5 (unit exponent)
        // and still fits: 5*100*4 * 1.35^4 = 6643.0125. Both accepted.
        let p = params();
        let capacity = ResourceVector::new([10.0, 10.0, 10.0, 10.0]);
        let low = req(1, [5.0, 5.0, 5.0, 5.0], 1);
        let high = req(2, [5.0, 5.0, 5.0, 5.0], 4);
        let batch = vec![high.clone(), low.clone()];
        let result = admit(&batch, &capacity, &p);
        assert_eq!(result.accepted, vec![low.request_id, high.request_id]);
        assert_eq!(result.remaining, ResourceVector::zero());
        let round1 = &result.trace.rounds[0];
        let (id, price) = round1.accepted.unwrap();
        assert_eq!(id, low.request_id);
        assert!((price - 270.0).abs() < 1e-9);
        let round2 = &result.trace.rounds[1];
        let (id, price) = round2.accepted.unwrap();
        assert_eq!(id, high.request_id);
        assert!((price - 6643.0125).abs() < 1e-8);
    }

    #[test]
    fn admit_respects_budgets() {
        let p = params();
        let capacity = ResourceVector::new([100.0, 100.0, 100.0, 100.0]);
        let cheap = req(1, [5.0, 5.0, 5.0, 5.0], 1);
        let batch = vec![cheap.clone()];
        let mut budgets = BTreeMap::new();
        budgets.insert(cheap.device, Coins::from_cents(100));
        let result = admit_with_budgets(&batch, &capacity, &p, Some(&budgets));
        assert_eq!(result.accepted_count(), 0);
        assert_eq!(
            result.decisions[0].reason,
            Some(DenialReason::InsufficientCoins)
        );
        // capacity untouched by the budget denial
        assert_eq!(result.remaining, capacity);

        budgets.insert(cheap.device, Coins::from_cents(100_000));
        let result = admit_with_budgets(&batch, &capacity, &p, Some(&budgets));
        assert_eq!(result.accepted_count(), 1);
    }

    #[test]
    fn budget_shared_across_requests_of_one_device() {
        let p = params();
        let capacity = ResourceVector::new([100.0, 100.0, 100.0, 100.0]);
        let device = Address::derive("shared");
        let mut a = req(1, [5.0, 5.0, 5.0, 5.0], 1);
        let mut b = req(2, [5.0, 5.0, 5.0, 5.0], 1);
        a.device = device;
        b.device = device;
        let batch = vec![a, b];
        // Enough for one request (~34.9) but not two.
        let mut budgets = BTreeMap::new();
        budgets.insert(device, Coins::from_cents(4000));
        let result = admit_with_budgets(&batch, &capacity, &p, Some(&budgets));
        assert_eq!(result.accepted_count(), 1);
        let denied: Vec<_> = result
            .decisions
            .iter()
            .filter(|d| d.verdict == Verdict::Deny)
            .collect();
        assert_eq!(denied.len(), 1);
        assert_eq!(denied[0].reason, Some(DenialReason::InsufficientCoins));
    }

    #[test]
    fn fcfs_examples() {
        let capacity = ResourceVector::new([1.0, 1.0, 1.0, 1.0]);
        let mut first = req(1, [1.0, 1.0, 1.0, 1.0], 2);
        let mut second = req(2, [1.0, 1.0, 1.0, 1.0], 1);
        first.arrival = 1;
        second.arrival = 2;
        let result = admit_fcfs(&[second.clone(), first.clone()], &capacity);
        assert_eq!(result.accepted, vec![first.request_id]);
        assert_eq!(result.accepted_count(), 1);

        let empty = admit_fcfs(&[], &capacity);
        assert_eq!(empty.accepted_count(), 0);
    }

    #[test]
    fn fcfs_matches_pricing_when_everything_fits() {
        let p = params();
        let capacity = ResourceVector::new([300.0, 250.0, 250.0, 250.0]);
        let batch: Vec<_> = (0..8)
            .map(|i| req(i, [2.0 + i as f64, 2.0, 2.0, 2.0], (i % 4 + 1) as u8))
            .collect();
        let fcfs = admit_fcfs(&batch, &capacity);
        let pricing = admit(&batch, &capacity, &p);
        let mut a = fcfs.accepted.clone();
        let mut b = pricing.accepted.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(fcfs.accepted_count(), batch.len());
    }

    #[test]
    fn priority_baseline_orders_levels() {
        // Capacity for exactly one unit request: the level-1 request wins
        // even though it arrives later in the batch.
        let capacity = ResourceVector::new([1.0, 1.0, 1.0, 1.0]);
        let low = req(1, [1.0, 1.0, 1.0, 1.0], 4);
        let high = req(2, [1.0, 1.0, 1.0, 1.0], 1);
        let result = admit_priority(&[low.clone(), high.clone()], &capacity);
        assert_eq!(result.accepted, vec![high.request_id]);

        let empty = admit_priority(&[], &capacity);
        assert_eq!(empty.accepted_count(), 0);

        // Single level degenerates to FCFS.
        let batch: Vec<_> = (0..4).map(|i| req(i, [1.0, 0.0, 0.0, 0.0], 2)).collect();
        let cap = ResourceVector::new([2.0, 10.0, 10.0, 10.0]);
        let by_priority = admit_priority(&batch, &cap);
        let by_arrival = admit_fcfs(&batch, &cap);
        assert_eq!(by_priority.accepted, by_arrival.accepted);
    }

    #[test]
    fn every_request_gets_exactly_one_decision() {
        let p = params();
        let capacity = ResourceVector::new([10.0, 10.0, 10.0, 10.0]);
        let batch: Vec<_> = (0..12)
            .map(|i| req(i, [3.0, 3.0, 3.0, 3.0], (i % 4 + 1) as u8))
            .collect();
        let result = admit(&batch, &capacity, &p);
        assert_eq!(result.decisions.len(), batch.len());
        for (d, r) in result.decisions.iter().zip(batch.iter()) {
            assert_eq!(d.request_id, r.request_id);
        }
    }

    proptest! {
        /// Accepted demands never oversubscribe the supplied capacity, and
        /// the greedy trace always accepts a minimum-price feasible request.
        #[test]
        fn greedy_invariants(
            demands in proptest::collection::vec(
                (0u32..12, 0u32..12, 0u32..12, 0u32..12, 1u8..=4), 0..20),
            cap in (5u32..40, 5u32..40, 5u32..40, 5u32..40),
        ) {
            let p = params();
            let capacity = ResourceVector::new([cap.0 as f64, cap.1 as f64, cap.2 as f64, cap.3 as f64]);
            let batch: Vec<_> = demands
                .iter()
                .enumerate()
                .map(|(i, d)| req(i as u64, [d.0 as f64, d.1 as f64, d.2 as f64, d.3 as f64], d.4))
                .collect();
            let result = admit(&batch, &capacity, &p);

            let mut used = ResourceVector::zero();
            for r in &batch {
                if result.accepted.contains(&r.request_id) {
                    used = used.add(&r.demand);
                }
            }
            prop_assert!(used.fits_within(&capacity));

            // trace oracle: each accepted price is minimal among that
            // round's priced set
            for round in &result.trace.rounds {
                if let Some((id, price)) = round.accepted {
                    for (other, other_price) in &round.priced {
                        prop_assert!(price <= *other_price + 1e-12,
                            "accepted {id} at {price} but {other} was {other_price}");
                    }
                }
                // capacity is componentwise non-increasing across rounds
            }
            for w in result.trace.rounds.windows(2) {
                prop_assert!(w[1].available.fits_within(&w[0].available));
            }
        }

        /// Strict monotonicity: raising any one demand component raises the
        /// total price; raising the level raises it by an exact beta factor.
        #[test]
        fn price_monotonicity(
            base in (1u32..8, 1u32..8, 1u32..8, 1u32..8),
            bump in 0usize..4,
            level in 1u8..=3,
        ) {
            let p = params();
            let avail = ResourceVector::new([50.0, 50.0, 50.0, 50.0]);
            let d = [base.0 as f64, base.1 as f64, base.2 as f64, base.3 as f64];
            let mut d2 = d;
            d2[bump] += 1.0;
            let p1 = total_price(&ResourceVector::new(d), &avail, level, &p).unwrap();
            let p2 = total_price(&ResourceVector::new(d2), &avail, level, &p).unwrap();
            prop_assert!(p2 > p1);
            let p_up = total_price(&ResourceVector::new(d), &avail, level + 1, &p).unwrap();
            prop_assert!(p_up > p1);
            prop_assert!((p_up / p1 - 1.35).abs() < 1e-9);
        }
    }
}
