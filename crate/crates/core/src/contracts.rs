//! Deterministic contract engine.
//!
//! Two fixed contracts carry the system's rules: the registration contract
//! owns the device registry, the allocation contract owns coin issuance and
//! decision records. Contracts are native code behind a uniform dispatch
//! interface; every committed call becomes a transaction and may emit events
//! watched by application interfaces. The edge server holds the higher
//! authority: devices reach only the functions exposed to them.
//!
//! A call is validated fully before any state is touched, so a rejected call
//! leaves storage unchanged. Policy rejections (an overdrawn charge, a
//! duplicate registration) are ordinary data results; engine errors (unknown
//! function, authority violation) are errors.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::coins::Coins;
use crate::credit::ViolationKind;
use crate::hash::{Address, Hash32};
use crate::ledger::{CoinOp, DecisionRecord, GenesisConfig, Transaction, TxKind};
use crate::registry::{ActivityEvent, DeviceAttrs, DeviceRecord};
use crate::state::{CodeId, StateError, SystemState};

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("unknown contract {0}")]
    UnknownContract(Address),
    #[error("contract {0} has been superseded by a newer deployment")]
    OutdatedContract(Address),
    #[error("function {function} is not exposed to {authority:?} authority")]
    AuthorityViolation {
        function: &'static str,
        authority: Authority,
    },
    #[error("function {function} does not exist on {code:?}")]
    UnknownFunction {
        function: &'static str,
        code: CodeId,
    },
    #[error("caller {caller} cannot register device {device}")]
    CallerMismatch { caller: Address, device: Address },
    #[error("invalid call: {0}")]
    InvalidCall(String),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Authority {
    EdgeServer,
    Device,
    Proxy,
}

/// Typed contract functions. Registration-contract functions first, then
/// allocation-contract functions.
#[derive(Debug, Clone, PartialEq)]
pub enum ContractFunction {
    Register {
        device: Address,
        attrs: DeviceAttrs,
    },
    SetPriority {
        device: Address,
        priority: u8,
    },
    SetBlocked {
        device: Address,
        blocked: bool,
    },
    ApplyCreditDelta {
        device: Address,
        delta: i64,
        violations: Vec<ViolationKind>,
    },
    RecordActivity {
        event: ActivityEvent,
        violations: Vec<ViolationKind>,
        learned_destination: Option<String>,
    },
    Mint {
        device: Address,
        amount: Coins,
    },
    Charge {
        device: Address,
        amount: Coins,
        request_id: Option<Hash32>,
    },
    Refund {
        device: Address,
        amount: Coins,
        request_id: Option<Hash32>,
    },
    RecordDecision {
        decision: DecisionRecord,
    },
}

impl ContractFunction {
    pub fn name(&self) -> &'static str {
        match self {
            ContractFunction::Register { .. } => "register",
            ContractFunction::SetPriority { .. } => "set_priority",
            ContractFunction::SetBlocked { .. } => "set_blocked",
            ContractFunction::ApplyCreditDelta { .. } => "apply_credit_delta",
            ContractFunction::RecordActivity { .. } => "record_activity",
            ContractFunction::Mint { .. } => "mint",
            ContractFunction::Charge { .. } => "charge",
            ContractFunction::Refund { .. } => "refund",
            ContractFunction::RecordDecision { .. } => "record_decision",
        }
    }

    fn code(&self) -> CodeId {
        match self {
            ContractFunction::Register { .. }
            | ContractFunction::SetPriority { .. }
            | ContractFunction::SetBlocked { .. }
            | ContractFunction::ApplyCreditDelta { .. }
            | ContractFunction::RecordActivity { .. } => CodeId::RegistrationContract,
            ContractFunction::Mint { .. }
            | ContractFunction::Charge { .. }
            | ContractFunction::Refund { .. }
            | ContractFunction::RecordDecision { .. } => CodeId::AllocationContract,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractCall {
    pub caller: Address,
    pub contract: Address,
    pub function: ContractFunction,
    pub authority: Authority,
}

/// Typed policy rejection: recorded as data, never an engine failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyRejection {
    InsufficientBalance { balance: Coins, requested: Coins },
    AlreadyRegistered { device: Address },
    UnknownDevice { device: Address },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallOutcome {
    Applied(AppliedResult),
    Rejected(PolicyRejection),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AppliedResult {
    Registered(Box<DeviceRecord>),
    PrioritySet { priority: u8 },
    BlockFlagSet { blocked: bool },
    CreditApplied { credit_after: i64 },
    ActivityRecorded,
    Minted { balance_after: Coins },
    Charged { balance_after: Coins },
    Refunded { balance_after: Coins },
    DecisionRecorded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventName {
    RegistrationEvent,
    AllocationAccepted,
    AllocationDenied,
    CoinMinted,
    CoinCharged,
    CoinRefunded,
    CreditChanged,
    DeviceBlocked,
}

impl std::fmt::Display for EventName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EventName::RegistrationEvent => "RegistrationEvent",
            EventName::AllocationAccepted => "AllocationAccepted",
            EventName::AllocationDenied => "AllocationDenied",
            EventName::CoinMinted => "CoinMinted",
            EventName::CoinCharged => "CoinCharged",
            EventName::CoinRefunded => "CoinRefunded",
            EventName::CreditChanged => "CreditChanged",
            EventName::DeviceBlocked => "DeviceBlocked",
        };
        f.write_str(s)
    }
}

/// An event as produced by a call, before it is assigned a block height.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub contract: Address,
    pub name: EventName,
    pub payload: serde_json::Value,
}

/// A committed event, delivered in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub block_height: u64,
    pub contract: Address,
    pub name: EventName,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub outcome: CallOutcome,
    /// The transaction recording this call; absent for rejections.
    pub tx: Option<Transaction>,
    pub events: Vec<EventDraft>,
}

impl Invocation {
    fn rejected(rejection: PolicyRejection) -> Invocation {
        Invocation {
            outcome: CallOutcome::Rejected(rejection),
            tx: None,
            events: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineDefaults {
    pub initial_credit: i64,
    pub max_credit: i64,
}

/// The contract engine: folded state plus call validation and dispatch.
#[derive(Debug, Clone)]
pub struct ContractEngine {
    pub state: SystemState,
    pub edge: Address,
    defaults: EngineDefaults,
    deploy_seq: u64,
    tx_seq: u64,
}

impl ContractEngine {
    pub fn new(genesis: &GenesisConfig, defaults: EngineDefaults) -> ContractEngine {
        ContractEngine {
            state: SystemState::from_genesis(genesis),
            edge: genesis.miner,
            defaults,
            deploy_seq: 0,
            tx_seq: 0,
        }
    }

    /// Build a transaction carrying the engine's next sequence number. The
    /// fleet's direct submissions (resource requests) use this too, so
    /// sequence numbers are unique chain-wide.
    pub fn build_tx(&mut self, sender: Address, kind: TxKind, timeslot: u64) -> Transaction {
        let seq = self.tx_seq;
        self.tx_seq += 1;
        Transaction::build(sender, seq, kind, timeslot)
    }

    /// Deploy a fresh contract instance. Only the edge server may deploy.
    /// Redeploying a code id yields a new address with empty storage; callers
    /// holding the old address become outdated.
    pub fn deploy_contract(
        &mut self,
        code: CodeId,
        authority: Authority,
        timeslot: u64,
    ) -> Result<(Address, Transaction), ContractError> {
        if authority != Authority::EdgeServer {
            return Err(ContractError::AuthorityViolation {
                function: "deploy",
                authority,
            });
        }
        let address = Address::derive(&format!(
            "contract:{}:{code:?}:{}",
            self.state.chain_id, self.deploy_seq
        ));
        self.deploy_seq += 1;
        let tx = self.build_tx(
            self.edge,
            TxKind::ContractDeploy {
                code,
                address,
                owner: self.edge,
            },
            timeslot,
        );
        self.state.apply_tx(&tx)?;
        Ok((address, tx))
    }

    pub fn active_address(&self, code: CodeId) -> Result<Address, ContractError> {
        Ok(self.state.active_contract(code)?.address)
    }

    fn check_target(&self, call: &ContractCall) -> Result<(), ContractError> {
        let account = self
            .state
            .contracts
            .get(&call.contract)
            .ok_or(ContractError::UnknownContract(call.contract))?;
        let expected = call.function.code();
        if account.code != expected {
            return Err(ContractError::UnknownFunction {
                function: call.function.name(),
                code: account.code,
            });
        }
        if self.state.active.get(&account.code) != Some(&call.contract) {
            return Err(ContractError::OutdatedContract(call.contract));
        }
        Ok(())
    }

    fn check_authority(&self, call: &ContractCall) -> Result<(), ContractError> {
        let allowed = match &call.function {
            ContractFunction::Register { device, attrs } => match call.authority {
                Authority::EdgeServer => true,
                Authority::Device => {
                    if call.caller != *device {
                        return Err(ContractError::CallerMismatch {
                            caller: call.caller,
                            device: *device,
                        });
                    }
                    !attrs.legacy
                }
                Authority::Proxy => attrs.legacy,
            },
            ContractFunction::RecordActivity { .. } => matches!(
                call.authority,
                Authority::EdgeServer | Authority::Proxy
            ),
            // Everything else touches edge-maintained fields.
            _ => call.authority == Authority::EdgeServer,
        };
        if allowed {
            Ok(())
        } else {
            Err(ContractError::AuthorityViolation {
                function: call.function.name(),
                authority: call.authority,
            })
        }
    }

    /// Execute a call: validate, build the transaction, apply it, emit
    /// events. Deterministic: the result is a pure function of the current
    /// state and the call.
    pub fn invoke(&mut self, call: ContractCall, timeslot: u64) -> Result<Invocation, ContractError> {
        self.check_target(&call)?;
        self.check_authority(&call)?;
        let contract = call.contract;
        match call.function {
            ContractFunction::Register { device, attrs } => {
                if self.state.devices().contains_key(&device) {
                    return Ok(Invocation::rejected(PolicyRejection::AlreadyRegistered {
                        device,
                    }));
                }
                let record = DeviceRecord::from_attrs(device, &attrs, self.defaults.initial_credit)
                    .map_err(|e| ContractError::InvalidCall(e.to_string()))?;
                let tx = self.build_tx(
                    call.caller,
                    TxKind::Register {
                        record: record.clone(),
                    },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::Registered(Box::new(
                        record.clone(),
                    ))),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: EventName::RegistrationEvent,
                        payload: json!({
                            "device": device,
                            "legacy": record.legacy,
                            "priority": record.priority,
                        }),
                    }],
                })
            }
            ContractFunction::SetPriority { device, priority } => {
                if !(1..=4).contains(&priority) {
                    return Err(ContractError::InvalidCall(format!(
                        "priority must be 1..=4, got {priority}"
                    )));
                }
                if !self.state.devices().contains_key(&device) {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device,
                    }));
                }
                let tx = self.build_tx(
                    self.edge,
                    TxKind::PriorityUpdate { device, priority },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::PrioritySet { priority }),
                    tx: Some(tx),
                    events: Vec::new(),
                })
            }
            ContractFunction::SetBlocked { device, blocked } => {
                if !self.state.devices().contains_key(&device) {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device,
                    }));
                }
                let tx = self.build_tx(
                    self.edge,
                    TxKind::BlockDevice { device, blocked },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::BlockFlagSet { blocked }),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: EventName::DeviceBlocked,
                        payload: json!({ "device": device, "blocked": blocked }),
                    }],
                })
            }
            ContractFunction::ApplyCreditDelta {
                device,
                delta,
                violations,
            } => {
                let Ok(record) = self.state.device(&device) else {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device,
                    }));
                };
                let credit_after = (record.credit + delta).clamp(0, self.defaults.max_credit);
                let tx = self.build_tx(
                    self.edge,
                    TxKind::CreditUpdate {
                        device,
                        delta,
                        credit_after,
                        violations,
                    },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::CreditApplied { credit_after }),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: EventName::CreditChanged,
                        payload: json!({
                            "device": device,
                            "delta": delta,
                            "credit": credit_after,
                        }),
                    }],
                })
            }
            ContractFunction::RecordActivity {
                event,
                violations,
                learned_destination,
            } => {
                if !self.state.devices().contains_key(&event.device) {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device: event.device,
                    }));
                }
                let tx = self.build_tx(
                    call.caller,
                    TxKind::ActivityLog {
                        event,
                        violations,
                        learned_destination,
                    },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::ActivityRecorded),
                    tx: Some(tx),
                    events: Vec::new(),
                })
            }
            ContractFunction::Mint { device, amount } => {
                if !self.state.devices().contains_key(&device) {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device,
                    }));
                }
                let tx = self.build_tx(
                    self.edge,
                    TxKind::CoinTransfer {
                        op: CoinOp::Mint,
                        device,
                        amount,
                        request_id: None,
                    },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                let balance_after = self.state.device(&device)?.coin_balance;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::Minted { balance_after }),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: EventName::CoinMinted,
                        payload: json!({ "device": device, "amount": amount }),
                    }],
                })
            }
            ContractFunction::Charge {
                device,
                amount,
                request_id,
            } => {
                let Ok(record) = self.state.device(&device) else {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device,
                    }));
                };
                if record.coin_balance < amount {
                    return Ok(Invocation::rejected(PolicyRejection::InsufficientBalance {
                        balance: record.coin_balance,
                        requested: amount,
                    }));
                }
                let tx = self.build_tx(
                    self.edge,
                    TxKind::CoinTransfer {
                        op: CoinOp::Charge,
                        device,
                        amount,
                        request_id,
                    },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                let balance_after = self.state.device(&device)?.coin_balance;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::Charged { balance_after }),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: EventName::CoinCharged,
                        payload: json!({
                            "device": device,
                            "amount": amount,
                            "request_id": request_id,
                        }),
                    }],
                })
            }
            ContractFunction::Refund {
                device,
                amount,
                request_id,
            } => {
                if !self.state.devices().contains_key(&device) {
                    return Ok(Invocation::rejected(PolicyRejection::UnknownDevice {
                        device,
                    }));
                }
                if self.state.revenue() < amount {
                    return Ok(Invocation::rejected(PolicyRejection::InsufficientBalance {
                        balance: self.state.revenue(),
                        requested: amount,
                    }));
                }
                let tx = self.build_tx(
                    self.edge,
                    TxKind::CoinTransfer {
                        op: CoinOp::Refund,
                        device,
                        amount,
                        request_id,
                    },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                let balance_after = self.state.device(&device)?.coin_balance;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::Refunded { balance_after }),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: EventName::CoinRefunded,
                        payload: json!({
                            "device": device,
                            "amount": amount,
                            "request_id": request_id,
                        }),
                    }],
                })
            }
            ContractFunction::RecordDecision { decision } => {
                let accepted = decision.verdict == crate::admission::Verdict::Accept;
                let payload = json!({
                    "request_id": decision.request_id,
                    "device": decision.device,
                    "price": decision.price,
                    "reason": decision.reason.map(|r| r.name()),
                });
                let tx = self.build_tx(
                    self.edge,
                    TxKind::AdmissionDecision { decision },
                    timeslot,
                );
                self.state.apply_tx(&tx)?;
                Ok(Invocation {
                    outcome: CallOutcome::Applied(AppliedResult::DecisionRecorded),
                    tx: Some(tx),
                    events: vec![EventDraft {
                        contract,
                        name: if accepted {
                            EventName::AllocationAccepted
                        } else {
                            EventName::AllocationDenied
                        },
                        payload,
                    }],
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EventFilter {
    pub contract: Option<Address>,
    pub name: Option<EventName>,
}

impl EventFilter {
    pub fn matches(&self, event: &Event) -> bool {
        self.contract.map_or(true, |c| c == event.contract)
            && self.name.map_or(true, |n| n == event.name)
    }
}

/// Committed event log. Watchers each hold a cursor, so every watcher sees
/// each matching event exactly once, in block order.
#[derive(Debug, Clone, Default)]
pub struct EventBus {
    log: Vec<Event>,
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, block_height: u64, drafts: Vec<EventDraft>) {
        for draft in drafts {
            self.log.push(Event {
                block_height,
                contract: draft.contract,
                name: draft.name,
                payload: draft.payload,
            });
        }
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.log.iter()
    }

    pub fn watch(&self, filter: EventFilter) -> EventWatcher {
        EventWatcher { filter, cursor: 0 }
    }

    /// Count of committed events with the given name.
    pub fn count(&self, name: EventName) -> usize {
        self.log.iter().filter(|e| e.name == name).count()
    }

    /// Export as line-delimited JSON records (height, contract, name,
    /// payload).
    pub fn write_file(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for event in &self.log {
            writeln!(out, "{}", crate::hash::canonical_json(event))?;
        }
        out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventWatcher {
    pub filter: EventFilter,
    cursor: usize,
}

impl EventWatcher {
    /// Drain newly committed matching events.
    pub fn poll(&mut self, bus: &EventBus) -> Vec<Event> {
        let out: Vec<Event> = bus.log[self.cursor..]
            .iter()
            .filter(|e| self.filter.matches(e))
            .cloned()
            .collect();
        self.cursor = bus.log.len();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::ResourceRange;
    use std::collections::BTreeSet;

    fn attrs(legacy: bool) -> DeviceAttrs {
        DeviceAttrs {
            network_port: 42024,
            io_data_types: BTreeSet::from(["text".into()]),
            bandwidth_request: ResourceRange::new(1.0, 5.0),
            cpu_request: ResourceRange::new(1.0, 5.0),
            memory_request: ResourceRange::new(1.0, 5.0),
            storage_request: ResourceRange::new(1.0, 5.0),
            mac_address: "00-14-22-01-23-45".into(),
            priority: 2,
            legacy,
            allowed_destinations: BTreeSet::new(),
        }
    }

    fn engine_with_contracts() -> (ContractEngine, Address, Address) {
        let genesis = GenesisConfig {
            difficulty_bits: 0,
            ..GenesisConfig::default()
        };
        let mut engine = ContractEngine::new(&genesis, EngineDefaults { initial_credit: 100, max_credit: 100 });
        let (reg, _) = engine
            .deploy_contract(CodeId::RegistrationContract, Authority::EdgeServer, 0)
            .unwrap();
        let (alloc, _) = engine
            .deploy_contract(CodeId::AllocationContract, Authority::EdgeServer, 0)
            .unwrap();
        (engine, reg, alloc)
    }

    fn register(engine: &mut ContractEngine, reg: Address, label: &str) -> Address {
        let device = Address::derive(label);
        let call = ContractCall {
            caller: device,
            contract: reg,
            function: ContractFunction::Register {
                device,
                attrs: attrs(false),
            },
            authority: Authority::Device,
        };
        let inv = engine.invoke(call, 0).unwrap();
        assert!(matches!(inv.outcome, CallOutcome::Applied(_)));
        device
    }

    #[test]
    fn deploy_requires_edge_authority() {
        let genesis = GenesisConfig {
            difficulty_bits: 0,
            ..GenesisConfig::default()
        };
        let mut engine = ContractEngine::new(&genesis, EngineDefaults { initial_credit: 100, max_credit: 100 });
        assert!(matches!(
            engine.deploy_contract(CodeId::RegistrationContract, Authority::Device, 0),
            Err(ContractError::AuthorityViolation { .. })
        ));
        let (addr, _) = engine
            .deploy_contract(CodeId::RegistrationContract, Authority::EdgeServer, 0)
            .unwrap();
        assert!(engine.state.contracts[&addr].storage.is_empty());
    }

    #[test]
    fn redeploy_changes_address_and_orphans_old_instance() {
        let (mut engine, reg, _) = engine_with_contracts();
        register(&mut engine, reg, "device:x");
        let (reg2, _) = engine
            .deploy_contract(CodeId::RegistrationContract, Authority::EdgeServer, 1)
            .unwrap();
        assert_ne!(reg, reg2);
        assert!(engine.state.contracts[&reg2].storage.is_empty());
        // calls to the old address are refused, not forwarded
        let call = ContractCall {
            caller: engine.edge,
            contract: reg,
            function: ContractFunction::SetBlocked {
                device: Address::derive("device:x"),
                blocked: true,
            },
            authority: Authority::EdgeServer,
        };
        assert!(matches!(
            engine.invoke(call, 1),
            Err(ContractError::OutdatedContract(_))
        ));
    }

    #[test]
    fn register_then_duplicate_is_rejected_as_policy() {
        let (mut engine, reg, _) = engine_with_contracts();
        let device = register(&mut engine, reg, "device:a");
        let call = ContractCall {
            caller: device,
            contract: reg,
            function: ContractFunction::Register {
                device,
                attrs: attrs(false),
            },
            authority: Authority::Device,
        };
        let before = engine.state.clone();
        let inv = engine.invoke(call, 1).unwrap();
        assert!(matches!(
            inv.outcome,
            CallOutcome::Rejected(PolicyRejection::AlreadyRegistered { .. })
        ));
        assert_eq!(engine.state, before, "rejected call must not touch storage");
    }

    #[test]
    fn proxy_registers_legacy_devices_only() {
        let (mut engine, reg, _) = engine_with_contracts();
        let device = Address::derive("legacy:a");
        let legacy_call = ContractCall {
            caller: Address::derive("proxy"),
            contract: reg,
            function: ContractFunction::Register {
                device,
                attrs: attrs(true),
            },
            authority: Authority::Proxy,
        };
        assert!(engine.invoke(legacy_call, 0).is_ok());
        let non_legacy = ContractCall {
            caller: Address::derive("proxy"),
            contract: reg,
            function: ContractFunction::Register {
                device: Address::derive("direct:a"),
                attrs: attrs(false),
            },
            authority: Authority::Proxy,
        };
        assert!(matches!(
            engine.invoke(non_legacy, 0),
            Err(ContractError::AuthorityViolation { .. })
        ));
    }

    #[test]
    fn edge_only_functions_reject_other_authorities() {
        let (mut engine, reg, alloc) = engine_with_contracts();
        let device = register(&mut engine, reg, "device:b");
        let functions: Vec<(Address, ContractFunction)> = vec![
            (
                reg,
                ContractFunction::SetPriority {
                    device,
                    priority: 3,
                },
            ),
            (
                reg,
                ContractFunction::SetBlocked {
                    device,
                    blocked: true,
                },
            ),
            (
                reg,
                ContractFunction::ApplyCreditDelta {
                    device,
                    delta: -10,
                    violations: vec![],
                },
            ),
            (
                alloc,
                ContractFunction::Mint {
                    device,
                    amount: "200.00".parse().unwrap(),
                },
            ),
            (
                alloc,
                ContractFunction::Charge {
                    device,
                    amount: "1.00".parse().unwrap(),
                    request_id: None,
                },
            ),
            (
                alloc,
                ContractFunction::Refund {
                    device,
                    amount: "1.00".parse().unwrap(),
                    request_id: None,
                },
            ),
        ];
        for (contract, function) in functions {
            for authority in [Authority::Device, Authority::Proxy] {
                let call = ContractCall {
                    caller: device,
                    contract,
                    function: function.clone(),
                    authority,
                };
                let before = engine.state.clone();
                let err = engine.invoke(call, 1).unwrap_err();
                assert!(
                    matches!(err, ContractError::AuthorityViolation { .. }),
                    "{} under {authority:?} should be an authority violation",
                    function.name()
                );
                assert_eq!(engine.state, before);
            }
            // edge authority succeeds (or is a policy result), never an
            // authority error
            let call = ContractCall {
                caller: engine.edge,
                contract,
                function,
                authority: Authority::EdgeServer,
            };
            assert!(engine.invoke(call, 1).is_ok());
        }
    }

    #[test]
    fn coin_flow_with_examples() {
        let (mut engine, reg, alloc) = engine_with_contracts();
        let device = register(&mut engine, reg, "device:c");
        let mint = ContractCall {
            caller: engine.edge,
            contract: alloc,
            function: ContractFunction::Mint {
                device,
                amount: "200.00".parse().unwrap(),
            },
            authority: Authority::EdgeServer,
        };
        let inv = engine.invoke(mint, 0).unwrap();
        let CallOutcome::Applied(AppliedResult::Minted { balance_after }) = inv.outcome else {
            panic!("mint applied");
        };
        assert_eq!(balance_after.to_string(), "200.00");

        let charge = |engine: &mut ContractEngine, amount: &str| {
            engine.invoke(
                ContractCall {
                    caller: engine.edge,
                    contract: alloc,
                    function: ContractFunction::Charge {
                        device,
                        amount: amount.parse().unwrap(),
                        request_id: None,
                    },
                    authority: Authority::EdgeServer,
                },
                1,
            )
        };
        let inv = charge(&mut engine, "10.00").unwrap();
        let CallOutcome::Applied(AppliedResult::Charged { balance_after }) = inv.outcome else {
            panic!("charge applied");
        };
        assert_eq!(balance_after.to_string(), "190.00");

        let inv = charge(&mut engine, "29.49").unwrap();
        let CallOutcome::Applied(AppliedResult::Charged { balance_after }) = inv.outcome else {
            panic!("charge applied");
        };
        assert_eq!(balance_after.to_string(), "160.51");

        // Insufficient balance: a typed rejection, storage untouched.
        let before = engine.state.clone();
        let inv = charge(&mut engine, "300.00").unwrap();
        assert!(matches!(
            inv.outcome,
            CallOutcome::Rejected(PolicyRejection::InsufficientBalance { .. })
        ));
        assert_eq!(engine.state, before);
        assert!(engine.state.coins_conserved());
    }

    #[test]
    fn invoke_is_deterministic() {
        let (engine, reg, _) = engine_with_contracts();
        let device = Address::derive("device:d");
        let call = ContractCall {
            caller: device,
            contract: reg,
            function: ContractFunction::Register {
                device,
                attrs: attrs(false),
            },
            authority: Authority::Device,
        };
        let mut a = engine.clone();
        let mut b = engine;
        let ia = a.invoke(call.clone(), 3).unwrap();
        let ib = b.invoke(call, 3).unwrap();
        assert_eq!(ia, ib);
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn unknown_contract_and_wrong_code() {
        let (mut engine, reg, _) = engine_with_contracts();
        let device = register(&mut engine, reg, "device:e");
        let call = ContractCall {
            caller: engine.edge,
            contract: Address::derive("nowhere"),
            function: ContractFunction::SetBlocked {
                device,
                blocked: true,
            },
            authority: Authority::EdgeServer,
        };
        assert!(matches!(
            engine.invoke(call, 0),
            Err(ContractError::UnknownContract(_))
        ));
        // registration function aimed at the allocation contract
        let alloc = engine.active_address(CodeId::AllocationContract).unwrap();
        let call = ContractCall {
            caller: engine.edge,
            contract: alloc,
            function: ContractFunction::SetBlocked {
                device,
                blocked: true,
            },
            authority: Authority::EdgeServer,
        };
        assert!(matches!(
            engine.invoke(call, 0),
            Err(ContractError::UnknownFunction { .. })
        ));
    }

    #[test]
    fn event_bus_fan_out_and_order() {
        let (mut engine, reg, alloc) = engine_with_contracts();
        let device = register(&mut engine, reg, "device:f");
        let mut bus = EventBus::new();
        let mut drafts = Vec::new();
        for i in 0..3u64 {
            let inv = engine
                .invoke(
                    ContractCall {
                        caller: engine.edge,
                        contract: alloc,
                        function: ContractFunction::RecordDecision {
                            decision: DecisionRecord {
                                request_id: Hash32::digest(format!("r{i}").as_bytes()),
                                device,
                                verdict: crate::admission::Verdict::Accept,
                                price: Some("1.00".parse().unwrap()),
                                reason: None,
                            },
                        },
                        authority: Authority::EdgeServer,
                    },
                    i,
                )
                .unwrap();
            drafts.push((i + 1, inv.events));
        }
        let mut watcher_a = bus.watch(EventFilter {
            contract: Some(alloc),
            name: Some(EventName::AllocationAccepted),
        });
        let mut watcher_b = bus.watch(EventFilter::default());
        for (height, events) in drafts {
            bus.append(height, events);
        }
        let got_a = watcher_a.poll(&bus);
        let got_b = watcher_b.poll(&bus);
        assert_eq!(got_a.len(), 3);
        assert_eq!(got_b.len(), 3);
        assert_eq!(got_a, got_b);
        let heights: Vec<u64> = got_a.iter().map(|e| e.block_height).collect();
        assert_eq!(heights, vec![1, 2, 3]);
        // second poll yields nothing: exactly-once per watcher
        assert!(watcher_a.poll(&bus).is_empty());

        let empty_bus = EventBus::new();
        let mut w = empty_bus.watch(EventFilter::default());
        assert!(w.poll(&empty_bus).is_empty());
    }
}
