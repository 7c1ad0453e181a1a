//! Edge resource pool: total capacity, current availability, and allocation
//! lifetimes.
//!
//! An allocation accepted at slot `start` with lifetime `n` occupies the pool
//! for slots `start..start+n-1` inclusive and is released when the clock
//! reaches `start+n`, before the new batch of that slot is admitted.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::admission::ResourceRequest;
use crate::coins::Coins;
use crate::hash::{Address, Hash32};
use crate::resources::ResourceVector;

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("request {0} is already reserved")]
    DuplicateReservation(Hash32),
    #[error("reservation for {request} exceeds availability: demand {demand} vs {available}")]
    CapacityDrift {
        request: Hash32,
        demand: ResourceVector,
        available: ResourceVector,
    },
    #[error("allocation lifetime must be >= 1")]
    ZeroLifetime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub request_id: Hash32,
    pub device: Address,
    pub demand: ResourceVector,
    pub start: u64,
    pub lifetime: u64,
    pub coins_charged: Coins,
    /// Credit change the request's behavior evaluation produced; feeds the
    /// coin return at release.
    pub credit_delta: i64,
}

#[derive(Debug, Clone)]
pub struct Pool {
    pub total: ResourceVector,
    pub available: ResourceVector,
    live: Vec<Allocation>,
    reserved_ids: BTreeSet<Hash32>,
}

impl Pool {
    pub fn new(total: ResourceVector) -> Pool {
        Pool {
            total,
            available: total,
            live: Vec::new(),
            reserved_ids: BTreeSet::new(),
        }
    }

    pub fn live_allocations(&self) -> &[Allocation] {
        &self.live
    }

    /// Commit an accepted request. Feasibility was guaranteed by admission
    /// but is re-checked; a failure here means admission and the pool have
    /// drifted apart and the run must abort.
    pub fn reserve(
        &mut self,
        request: &ResourceRequest,
        start: u64,
        coins_charged: Coins,
        credit_delta: i64,
    ) -> Result<&Allocation, PoolError> {
        if request.lifetime < 1 {
            return Err(PoolError::ZeroLifetime);
        }
        if self.reserved_ids.contains(&request.request_id) {
            return Err(PoolError::DuplicateReservation(request.request_id));
        }
        let Some(left) = self.available.checked_sub(&request.demand) else {
            return Err(PoolError::CapacityDrift {
                request: request.request_id,
                demand: request.demand,
                available: self.available,
            });
        };
        self.available = left;
        self.reserved_ids.insert(request.request_id);
        self.live.push(Allocation {
            request_id: request.request_id,
            device: request.device,
            demand: request.demand,
            start,
            lifetime: request.lifetime,
            coins_charged,
            credit_delta,
        });
        Ok(self.live.last().expect("just pushed"))
    }

    /// Release every allocation whose lifetime has elapsed and return them.
    pub fn release_expired(&mut self, now: u64) -> Vec<Allocation> {
        let (released, kept): (Vec<Allocation>, Vec<Allocation>) = std::mem::take(&mut self.live)
            .into_iter()
            .partition(|a| a.start + a.lifetime <= now);
        self.live = kept;
        for alloc in &released {
            self.available = self.available.add(&alloc.demand);
        }
        released
    }

    /// True when no request in the batch fits the current availability.
    /// An empty batch is exhausted by convention (nothing can be served).
    pub fn is_exhausted(&self, batch: &[ResourceRequest]) -> bool {
        !batch.iter().any(|r| r.demand.fits_within(&self.available))
    }

    /// Accounting identity: available plus live demands equals total.
    pub fn audit_identity(&self) -> bool {
        let mut used = ResourceVector::zero();
        for alloc in &self.live {
            used = used.add(&alloc.demand);
        }
        self.available.add(&used) == self.total && self.available.fits_within(&self.total)
    }
}
