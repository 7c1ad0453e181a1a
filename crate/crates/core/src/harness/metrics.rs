//! Run metrics and audit reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::resources::RESOURCE_KINDS;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelStats {
    pub submitted: u64,
    pub accepted: u64,
}

impl LevelStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.submitted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.submitted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub timeslots: u64,
    pub submitted: u64,
    pub accepted: u64,
    pub denied: u64,
    pub acceptance_rate: f64,
    pub per_level: [LevelStats; 4],
    pub denials: BTreeMap<String, u64>,
    /// Mean charged price over accepted requests (pricing scheduler only).
    pub mean_price: f64,
    /// Mean used fraction per resource kind over all slots.
    pub mean_utilization: [f64; RESOURCE_KINDS],
    pub blocked_devices: u64,
    pub blocks: u64,
    pub transactions: u64,
    /// Mean canonical block size in bytes, reported (never asserted; block
    /// sizes are workload-dependent).
    pub mean_block_bytes: f64,
    /// Activity events dropped because their device was blocked.
    pub dropped_blocked_events: u64,
    /// Coin returns clamped because the revenue account ran dry.
    pub clamped_refunds: u64,
}

/// One row of the decision trace export.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub timeslot: u64,
    pub request_id: crate::hash::Hash32,
    pub device: crate::hash::Address,
    pub level: u8,
    pub accepted: bool,
    pub price: Option<f64>,
    pub reason: Option<&'static str>,
}

/// End-of-run consistency audit. Every flag must hold for the run to count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub chain_valid: bool,
    pub pending_empty: bool,
    pub replay_matches: bool,
    pub coins_conserved: bool,
    pub counts_consistent: bool,
    pub pool_identity: bool,
    pub ordering_ok: bool,
    pub events_complete: bool,
    pub failures: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.chain_valid
            && self.pending_empty
            && self.replay_matches
            && self.coins_conserved
            && self.counts_consistent
            && self.pool_identity
            && self.ordering_ok
            && self.events_complete
    }

    pub fn summary(&self) -> String {
        if self.ok() {
            "audit: pass".to_string()
        } else {
            format!("audit: FAIL ({})", self.failures.join("; "))
        }
    }
}
