//! Seeded workload generation.
//!
//! All randomness flows from named ChaCha20 streams derived from the
//! experiment seed, and integer draws use explicit rejection sampling, so a
//! seed pins the entire run bit-for-bit regardless of platform or library
//! version.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::admission::ResourceRequest;
use crate::hash::{Address, Hash32};
use crate::registry::ActivityEvent;
use crate::resources::{ResourceVector, RESOURCE_KINDS};

use super::config::{CountDistribution, ExperimentConfig, RequestProfile};

/// ChaCha20 stream for one named purpose of one seed.
pub fn rng_for(seed: u64, stream: &str) -> ChaCha20Rng {
    let key = Hash32::digest(format!("rng:{seed}:{stream}").as_bytes());
    ChaCha20Rng::from_seed(key.0)
}

/// Uniform integer in `[lo, hi]` inclusive via modulo-rejection sampling.
pub fn uniform_u64(rng: &mut impl RngCore, lo: u64, hi: u64) -> u64 {
    debug_assert!(lo <= hi);
    let span = hi - lo + 1;
    if span == 0 {
        // full u64 range
        return rng.next_u64();
    }
    let rem = (u64::MAX % span + 1) % span;
    let bound = u64::MAX - rem;
    loop {
        let v = rng.next_u64();
        if v <= bound {
            return lo + v % span;
        }
    }
}

fn draw(rng: &mut impl RngCore, dist: CountDistribution) -> u64 {
    match dist {
        CountDistribution::Constant { value } => value,
        CountDistribution::Uniform { min, max } => uniform_u64(rng, min, max),
    }
}

/// Request generator over the synthetic fleet plus any explicit devices.
pub struct WorkloadGenerator {
    rng: ChaCha20Rng,
    /// Device addresses grouped by priority level (index = level - 1).
    level_devices: [Vec<Address>; 4],
    profiles: [RequestProfile; 4],
    requests_per_slot: CountDistribution,
    chain_id: String,
}

impl WorkloadGenerator {
    pub fn new(config: &ExperimentConfig, level_devices: [Vec<Address>; 4]) -> Self {
        WorkloadGenerator {
            rng: rng_for(config.seed, "workload"),
            level_devices,
            profiles: config.request_profiles,
            requests_per_slot: config.requests_per_slot,
            chain_id: config.ledger.chain_id.clone(),
        }
    }

    /// Generate the slot's batch: the request count comes from the
    /// configured distribution, each request picks a level uniformly among
    /// the levels that have devices, a device uniformly within the level,
    /// and integer demands and lifetime uniformly from the level's profile.
    pub fn generate_batch(&mut self, t: u64) -> Vec<ResourceRequest> {
        let count = draw(&mut self.rng, self.requests_per_slot);
        let populated: Vec<usize> = (0..4)
            .filter(|i| !self.level_devices[*i].is_empty())
            .collect();
        if populated.is_empty() {
            return Vec::new();
        }
        let mut batch = Vec::with_capacity(count as usize);
        for i in 0..count {
            let level_idx =
                populated[uniform_u64(&mut self.rng, 0, populated.len() as u64 - 1) as usize];
            let devices = &self.level_devices[level_idx];
            let device = devices[uniform_u64(&mut self.rng, 0, devices.len() as u64 - 1) as usize];
            let profile = &self.profiles[level_idx];
            let mut demand = [0.0; RESOURCE_KINDS];
            for (j, (lo, hi)) in profile.demand_ranges().into_iter().enumerate() {
                demand[j] = uniform_u64(&mut self.rng, lo, hi) as f64;
            }
            let lifetime = uniform_u64(&mut self.rng, profile.lifetime.0, profile.lifetime.1);
            batch.push(ResourceRequest {
                request_id: Hash32::digest(
                    format!("req:{}:{t}:{i}:{device}", self.chain_id).as_bytes(),
                ),
                device,
                demand: ResourceVector::new(demand),
                priority: (level_idx + 1) as u8,
                lifetime,
                arrival: t,
            });
        }
        batch
    }
}

/// Activity-event source for legacy devices, observed through the proxy.
pub struct ActivityGenerator {
    devices: Vec<Address>,
    events_per_slot: u64,
    wrong_port_every: Option<u64>,
    unknown_destination_every: Option<u64>,
    bytes_per_slot: Vec<u64>,
    emitted: u64,
}

impl ActivityGenerator {
    pub fn new(config: &ExperimentConfig) -> Self {
        let legacy = &config.legacy;
        let devices: Vec<Address> = (0..legacy.devices)
            .map(|i| Address::derive(&format!("legacy:{}:{i}", config.ledger.chain_id)))
            .collect();
        let bytes_per_slot = (0..legacy.devices as usize)
            .map(|i| {
                if legacy.app_profiles.is_empty() {
                    540
                } else {
                    legacy.app_profiles[i % legacy.app_profiles.len()].bytes_per_slot
                }
            })
            .collect();
        ActivityGenerator {
            devices,
            events_per_slot: legacy.events_per_slot,
            wrong_port_every: legacy.wrong_port_every,
            unknown_destination_every: legacy.unknown_destination_every,
            bytes_per_slot,
            emitted: 0,
        }
    }

    pub fn device_port(i: usize) -> u16 {
        41000 + i as u16
    }

    /// Events for one slot. Device 0 is the configurable misbehaver: every
    /// n-th of its events uses a wrong port or an unknown destination.
    pub fn events_for_slot(&mut self, t: u64) -> Vec<ActivityEvent> {
        let mut out = Vec::new();
        for (i, device) in self.devices.iter().enumerate() {
            for _ in 0..self.events_per_slot {
                let mut port = Self::device_port(i);
                let mut destination = format!("svc:{}", i % 3);
                if i == 0 {
                    self.emitted += 1;
                    if let Some(n) = self.wrong_port_every {
                        if self.emitted % n == 0 {
                            port += 1;
                        }
                    }
                    if let Some(n) = self.unknown_destination_every {
                        if self.emitted % n == 0 {
                            destination = format!("rogue:{t}");
                        }
                    }
                }
                out.push(ActivityEvent {
                    device: *device,
                    port_used: port,
                    destination,
                    bytes: self.bytes_per_slot[i],
                    timeslot: t,
                });
            }
        }
        out
    }
}
