//! Experiment configuration.
//!
//! Defaults encode the evaluation setup: alpha 100 and a capacity of
//! (300, 250, 250, 250) for (cpu, memory, storage, bandwidth); per-level
//! demand and lifetime ranges; registration defaults of 100 credit and
//! 200.00 coins. All of it can be overridden from a TOML file (see
//! `configs/example.toml` in the repository root).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coins::Coins;
use crate::credit::CreditPolicy;
use crate::resources::{ResourceVector, RESOURCE_KINDS};

#[derive(Debug, Error)]
#[error("config key `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    Pricing,
    Fcfs,
    Priority,
}

impl Scheduler {
    pub const ALL: [Scheduler; 3] = [Scheduler::Pricing, Scheduler::Fcfs, Scheduler::Priority];

    pub fn name(self) -> &'static str {
        match self {
            Scheduler::Pricing => "pricing",
            Scheduler::Fcfs => "fcfs",
            Scheduler::Priority => "priority",
        }
    }
}

impl std::str::FromStr for Scheduler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pricing" => Ok(Scheduler::Pricing),
            "fcfs" => Ok(Scheduler::Fcfs),
            "priority" => Ok(Scheduler::Priority),
            other => Err(format!(
                "unknown scheduler {other:?}; expected pricing, fcfs, or priority"
            )),
        }
    }
}

/// How many requests arrive per timeslot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CountDistribution {
    Constant { value: u64 },
    Uniform { min: u64, max: u64 },
}

impl CountDistribution {
    pub fn validate(&self, key: &str) -> Result<(), ConfigError> {
        if let CountDistribution::Uniform { min, max } = self {
            if min > max {
                return Err(bad(key, format!("uniform min {min} > max {max}")));
            }
        }
        Ok(())
    }
}

/// Integer demand and lifetime ranges for one priority level, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestProfile {
    pub cpu: (u64, u64),
    pub memory: (u64, u64),
    pub storage: (u64, u64),
    pub bandwidth: (u64, u64),
    pub lifetime: (u64, u64),
}

impl RequestProfile {
    pub fn demand_ranges(&self) -> [(u64, u64); RESOURCE_KINDS] {
        [self.cpu, self.memory, self.storage, self.bandwidth]
    }

    fn validate(&self, key: &str) -> Result<(), ConfigError> {
        for (name, (lo, hi)) in [
            ("cpu", self.cpu),
            ("memory", self.memory),
            ("storage", self.storage),
            ("bandwidth", self.bandwidth),
            ("lifetime", self.lifetime),
        ] {
            if lo > hi {
                return Err(bad(&format!("{key}.{name}"), format!("min {lo} > max {hi}")));
            }
        }
        if self.lifetime.0 < 1 {
            return Err(bad(&format!("{key}.lifetime"), "must be >= 1"));
        }
        Ok(())
    }
}

/// The per-level request parameters used throughout the evaluation.
pub fn default_profiles() -> [RequestProfile; 4] {
    [
        RequestProfile {
            cpu: (1, 5),
            memory: (1, 5),
            storage: (1, 5),
            bandwidth: (1, 5),
            lifetime: (1, 5),
        },
        RequestProfile {
            cpu: (10, 15),
            memory: (5, 10),
            storage: (5, 10),
            bandwidth: (1, 10),
            lifetime: (1, 5),
        },
        RequestProfile {
            cpu: (1, 5),
            memory: (1, 5),
            storage: (1, 5),
            bandwidth: (1, 5),
            lifetime: (1, 5),
        },
        RequestProfile {
            cpu: (1, 3),
            memory: (1, 3),
            storage: (1, 3),
            bandwidth: (1, 3),
            lifetime: (1, 3),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Basic price constant.
    pub alpha: f64,
    /// Pool capacity in resource-vector order (cpu, memory, storage,
    /// bandwidth).
    pub capacity: [f64; RESOURCE_KINDS],
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            alpha: 100.0,
            capacity: [300.0, 250.0, 250.0, 250.0],
        }
    }
}

/// An explicitly listed device, registered in addition to the synthetic
/// fleet. Ranges are `[min, max]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub network_port: u16,
    #[serde(default)]
    pub io_data_types: Vec<String>,
    pub bandwidth_request: [f64; 2],
    pub cpu_request: [f64; 2],
    pub memory_request: [f64; 2],
    pub storage_request: [f64; 2],
    pub mac_address: String,
    pub priority: u8,
    #[serde(default)]
    pub legacy: bool,
    #[serde(default)]
    pub allowed_destinations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    /// Synthetic non-legacy devices per priority level (1..=4).
    pub devices_per_level: [u32; 4],
    /// Extra devices listed attribute-by-attribute.
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            devices_per_level: [25, 25, 25, 25],
            devices: Vec::new(),
        }
    }
}

/// Descriptive application traffic profile; scales activity-event byte
/// counts, never admission math.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub name: String,
    pub bytes_per_slot: u64,
}

pub fn default_app_profiles() -> Vec<AppProfile> {
    vec![
        AppProfile {
            name: "chain-client".into(),
            bytes_per_slot: 540,
        },
        AppProfile {
            name: "face-recognition".into(),
            bytes_per_slot: 1_640_000,
        },
        AppProfile {
            name: "nlp".into(),
            bytes_per_slot: 8_120,
        },
    ]
}

/// Legacy devices observed through the proxy. They produce activity events,
/// not resource requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyConfig {
    pub devices: u32,
    /// Events per device per slot.
    pub events_per_slot: u64,
    /// Every n-th event of device 0 uses a wrong port (a hacked device).
    pub wrong_port_every: Option<u64>,
    /// Every n-th event of device 0 targets an unknown destination.
    pub unknown_destination_every: Option<u64>,
    /// Slots after first contact during which new destinations are learned.
    pub learning_window: u64,
    #[serde(default = "default_app_profiles")]
    pub app_profiles: Vec<AppProfile>,
}

impl Default for LegacyConfig {
    fn default() -> Self {
        LegacyConfig {
            devices: 4,
            events_per_slot: 1,
            wrong_port_every: Some(7),
            unknown_destination_every: None,
            learning_window: 20,
            app_profiles: default_app_profiles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerParams {
    pub chain_id: String,
    pub difficulty_bits: u32,
    pub per_block_tx_cap: usize,
    pub timestamp: u64,
    /// Genesis float for the edge revenue account; coin returns draw on it.
    pub edge_float: Coins,
}

impl Default for LedgerParams {
    fn default() -> Self {
        LedgerParams {
            chain_id: "edgemeter-sim".into(),
            difficulty_bits: 8,
            per_block_tx_cap: 208,
            timestamp: 0,
            edge_float: "1000000.00".parse().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub timeslots: u64,
    pub requests_per_slot: CountDistribution,
    pub beta: f64,
    pub scheduler: Scheduler,
    /// Fraction of the configured capacity actually available to the run.
    pub resource_scale: f64,
    /// Coins minted for each device at registration.
    pub initial_coins: Coins,
    /// Keep denied requests in the queue for the next slot (off by default;
    /// denied requests are dropped at the end of their slot).
    pub carry_over: bool,
    pub system: SystemParams,
    pub fleet: FleetConfig,
    pub legacy: LegacyConfig,
    pub credit: CreditPolicy,
    pub ledger: LedgerParams,
    pub request_profiles: [RequestProfile; 4],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            timeslots: 2000,
            requests_per_slot: CountDistribution::Uniform { min: 15, max: 35 },
            beta: 1.35,
            scheduler: Scheduler::Pricing,
            resource_scale: 1.0,
            initial_coins: "200.00".parse().unwrap(),
            carry_over: false,
            system: SystemParams::default(),
            fleet: FleetConfig::default(),
            legacy: LegacyConfig::default(),
            credit: CreditPolicy::default(),
            ledger: LedgerParams::default(),
            request_profiles: default_profiles(),
        }
    }
}

impl ExperimentConfig {
    pub fn capacity(&self) -> ResourceVector {
        ResourceVector::new(self.system.capacity).scale(self.resource_scale)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.timeslots == 0 {
            return Err(bad("timeslots", "must be >= 1"));
        }
        if !(self.system.alpha > 1.0) {
            return Err(bad("system.alpha", format!("must be > 1, got {}", self.system.alpha)));
        }
        if !(self.beta >= 1.0) {
            return Err(bad("beta", format!("must be >= 1, got {}", self.beta)));
        }
        if !(self.resource_scale > 0.0 && self.resource_scale <= 1.0) {
            return Err(bad(
                "resource_scale",
                format!("must be in (0, 1], got {}", self.resource_scale),
            ));
        }
        for (i, v) in self.system.capacity.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(bad("system.capacity", format!("component {i} must be > 0, got {v}")));
            }
        }
        self.requests_per_slot.validate("requests_per_slot")?;
        if self.initial_coins.is_negative() {
            return Err(bad("initial_coins", "must be >= 0"));
        }
        for (i, profile) in self.request_profiles.iter().enumerate() {
            profile.validate(&format!("request_profiles[{i}]"))?;
        }
        if self.fleet.devices_per_level.iter().all(|n| *n == 0) && self.fleet.devices.is_empty() {
            return Err(bad("fleet.devices_per_level", "fleet must contain at least one device"));
        }
        for (i, spec) in self.fleet.devices.iter().enumerate() {
            if spec.priority < 1 || spec.priority > 4 {
                return Err(bad(
                    &format!("fleet.devices[{i}].priority"),
                    format!("must be 1..=4, got {}", spec.priority),
                ));
            }
            if spec.name.is_empty() {
                return Err(bad(&format!("fleet.devices[{i}].name"), "must be nonempty"));
            }
        }
        if self.ledger.chain_id.is_empty() {
            return Err(bad("ledger.chain_id", "must be nonempty"));
        }
        if self.ledger.difficulty_bits > 32 {
            return Err(bad("ledger.difficulty_bits", "must be <= 32"));
        }
        if self.ledger.per_block_tx_cap == 0 {
            return Err(bad("ledger.per_block_tx_cap", "must be >= 1"));
        }
        if self.legacy.learning_window == 0 {
            return Err(bad("legacy.learning_window", "must be >= 1"));
        }
        self.credit
            .validate()
            .map_err(|e| bad("credit", e.to_string()))?;
        Ok(())
    }

    /// Seeds used by the preset experiments when none are given.
    pub fn default_seeds() -> Vec<u64> {
        vec![1, 2, 3]
    }

    /// Beta grid for the sweep preset: 1.00 to 3.00 in steps of 0.05.
    pub fn beta_grid() -> Vec<f64> {
        (0..=40).map(|i| 1.0 + i as f64 * 0.05).collect()
    }

    /// Capacity scales for the resource-scaling preset.
    pub fn scale_grid() -> Vec<f64> {
        vec![1.0, 0.8, 0.6, 0.4]
    }
}
