//! Device registration records and behavior-specification matching.
//!
//! A registered device carries the attributes it declared (port, data types,
//! demand ranges, MAC) plus the fields only the edge server may set:
//! priority, coin balance, credit, block/registration flags, and the last
//! request id. Legacy devices that cannot run a chain client are registered
//! on their behalf by the proxy, which observes their activity stream; the
//! resulting record has the same shape with `legacy` set.
//!
//! The allowed-destination set plays the role of a manufacturer usage
//! description: for proxy-registered devices it is learned from traffic seen
//! during a configurable window after first contact, after which unknown
//! destinations are violations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coins::Coins;
use crate::credit::ViolationKind;
use crate::hash::{Address, Hash32};
use crate::resources::{ResourceRange, ResourceVector};

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("device {0} is already registered")]
    AlreadyRegistered(Address),
    #[error("device {0} is not registered")]
    UnknownDevice(Address),
    #[error("invalid device attributes: {0}")]
    InvalidAttrs(String),
}

/// Attributes a device (or the proxy on its behalf) supplies at registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAttrs {
    pub network_port: u16,
    pub io_data_types: BTreeSet<String>,
    pub bandwidth_request: ResourceRange,
    pub cpu_request: ResourceRange,
    pub memory_request: ResourceRange,
    pub storage_request: ResourceRange,
    pub mac_address: String,
    /// Application priority level, validated and adopted by the edge server.
    pub priority: u8,
    pub legacy: bool,
    pub allowed_destinations: BTreeSet<String>,
}

impl DeviceAttrs {
    pub fn validate(&self) -> Result<(), RegistryError> {
        for (name, range) in [
            ("bandwidth_request", &self.bandwidth_request),
            ("cpu_request", &self.cpu_request),
            ("memory_request", &self.memory_request),
            ("storage_request", &self.storage_request),
        ] {
            range
                .validate()
                .map_err(|e| RegistryError::InvalidAttrs(format!("{name}: {e}")))?;
        }
        if self.priority < 1 || self.priority > 4 {
            return Err(RegistryError::InvalidAttrs(format!(
                "priority must be 1..=4, got {}",
                self.priority
            )));
        }
        if self.network_port == 0 {
            return Err(RegistryError::InvalidAttrs("network_port must be nonzero".into()));
        }
        Ok(())
    }
}

/// On-chain registration record. Fields after `mac_address` are mutable only
/// through edge-server authority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub account_address: Address,
    pub network_port: u16,
    pub io_data_types: BTreeSet<String>,
    pub bandwidth_request: ResourceRange,
    pub cpu_request: ResourceRange,
    pub memory_request: ResourceRange,
    pub storage_request: ResourceRange,
    pub mac_address: String,
    pub priority: u8,
    pub coin_balance: Coins,
    pub credit: i64,
    pub is_blocked: bool,
    pub is_registered: bool,
    pub last_request_id: Option<Hash32>,
    pub legacy: bool,
    pub allowed_destinations: BTreeSet<String>,
}

impl DeviceRecord {
    /// Build the full record the edge server stores at registration. Coins
    /// are minted in a separate transfer, so the balance starts at zero.
    pub fn from_attrs(
        address: Address,
        attrs: &DeviceAttrs,
        initial_credit: i64,
    ) -> Result<DeviceRecord, RegistryError> {
        attrs.validate()?;
        Ok(DeviceRecord {
            account_address: address,
            network_port: attrs.network_port,
            io_data_types: attrs.io_data_types.clone(),
            bandwidth_request: attrs.bandwidth_request,
            cpu_request: attrs.cpu_request,
            memory_request: attrs.memory_request,
            storage_request: attrs.storage_request,
            mac_address: attrs.mac_address.clone(),
            priority: attrs.priority,
            coin_balance: Coins::ZERO,
            credit: initial_credit,
            is_blocked: false,
            is_registered: true,
            last_request_id: None,
            legacy: attrs.legacy,
            allowed_destinations: attrs.allowed_destinations.clone(),
        })
    }

    /// The registered maximum demand, in resource-vector order.
    pub fn max_demand(&self) -> ResourceVector {
        ResourceVector::new([
            self.cpu_request.max,
            self.memory_request.max,
            self.storage_request.max,
            self.bandwidth_request.max,
        ])
    }
}

/// One observed action of a device on the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub device: Address,
    pub port_used: u16,
    pub destination: String,
    pub bytes: u64,
    pub timeslot: u64,
}

/// Match an observed event against a device's registered specification.
/// An empty list means the activity conforms.
pub fn match_spec(
    record: &DeviceRecord,
    event: &ActivityEvent,
) -> Result<Vec<ViolationKind>, RegistryError> {
    if !record.is_registered {
        return Err(RegistryError::UnknownDevice(record.account_address));
    }
    let mut violations = Vec::new();
    if event.port_used != record.network_port {
        violations.push(ViolationKind::WrongPort);
    }
    if !record.allowed_destinations.contains(&event.destination) {
        violations.push(ViolationKind::UnknownDestination);
    }
    Ok(violations)
}

/// What the proxy wants done for one slot of observed traffic, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxyAction {
    /// First contact from an unknown device: register it.
    Register { device: Address, attrs: DeviceAttrs },
    /// Log an observed event, with any violations found and a destination
    /// learned during the window (applied to the record when the log
    /// transaction commits).
    LogActivity {
        event: ActivityEvent,
        violations: Vec<ViolationKind>,
        learned_destination: Option<String>,
    },
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct SlotObservation {
    pub actions: Vec<ProxyAction>,
    pub dropped_blocked: u64,
    pub malformed: u64,
}

/// Observer for legacy-device traffic. Unknown devices are auto-registered on
/// first contact, events from blocked devices are dropped without analysis,
/// and everything else is logged with its specification violations.
#[derive(Debug, Clone)]
pub struct Proxy {
    pub address: Address,
    /// Destinations seen within this many slots of first contact are adopted
    /// into the device's allowed set instead of flagged.
    pub learning_window: u64,
    first_seen: BTreeMap<Address, u64>,
    last_slot: BTreeMap<Address, u64>,
}

impl Proxy {
    pub fn new(address: Address, learning_window: u64) -> Self {
        Proxy {
            address,
            learning_window,
            first_seen: BTreeMap::new(),
            last_slot: BTreeMap::new(),
        }
    }

    fn default_attrs(event: &ActivityEvent) -> DeviceAttrs {
        DeviceAttrs {
            network_port: event.port_used,
            io_data_types: BTreeSet::from(["data".to_string()]),
            bandwidth_request: ResourceRange::new(0.0, 0.0),
            cpu_request: ResourceRange::new(0.0, 0.0),
            memory_request: ResourceRange::new(0.0, 0.0),
            storage_request: ResourceRange::new(0.0, 0.0),
            mac_address: format!("auto:{}", event.device),
            priority: 4,
            legacy: true,
            allowed_destinations: BTreeSet::new(),
        }
    }

    /// Process one slot of events against the current registry view.
    /// Malformed events (zero port, empty destination, or a timeslot that
    /// goes backwards for the device) are counted and skipped.
    pub fn observe(
        &mut self,
        events: &[ActivityEvent],
        devices: &BTreeMap<Address, DeviceRecord>,
    ) -> SlotObservation {
        let mut out = SlotObservation::default();
        // Overlay of records created or mutated earlier in this same slot.
        let mut overlay: BTreeMap<Address, DeviceRecord> = BTreeMap::new();

        for event in events {
            if event.port_used == 0 || event.destination.is_empty() {
                out.malformed += 1;
                continue;
            }
            if let Some(last) = self.last_slot.get(&event.device) {
                if event.timeslot < *last {
                    out.malformed += 1;
                    continue;
                }
            }
            self.last_slot.insert(event.device, event.timeslot);

            let known = overlay.contains_key(&event.device) || devices.contains_key(&event.device);
            if !known {
                let attrs = Self::default_attrs(event);
                let record = DeviceRecord::from_attrs(event.device, &attrs, 0)
                    .expect("auto-registration attrs are valid");
                overlay.insert(event.device, record);
                self.first_seen.insert(event.device, event.timeslot);
                out.actions.push(ProxyAction::Register {
                    device: event.device,
                    attrs,
                });
            }
            let record = overlay
                .get(&event.device)
                .or_else(|| devices.get(&event.device))
                .expect("record exists after registration");
            if record.is_blocked {
                out.dropped_blocked += 1;
                continue;
            }
            let registered_port = record.network_port;
            let destination_known = record.allowed_destinations.contains(&event.destination);
            let base_record = record.clone();
            let first = *self
                .first_seen
                .entry(event.device)
                .or_insert(event.timeslot);

            let mut violations = Vec::new();
            if event.port_used != registered_port {
                violations.push(ViolationKind::WrongPort);
            }
            let mut learned = None;
            if !destination_known {
                if event.timeslot < first + self.learning_window {
                    learned = Some(event.destination.clone());
                    overlay
                        .entry(event.device)
                        .or_insert(base_record)
                        .allowed_destinations
                        .insert(event.destination.clone());
                } else {
                    violations.push(ViolationKind::UnknownDestination);
                }
            }
            out.actions.push(ProxyAction::LogActivity {
                event: event.clone(),
                violations,
                learned_destination: learned,
            });
        }
        out
    }
}
