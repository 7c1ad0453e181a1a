//! Folded on-chain state and replay.
//!
//! Every state change in the system is expressed as a transaction; this
//! module is the single place transactions are applied. The live contract
//! engine validates a call, builds the transaction, and applies it here, and
//! the replay tool applies the same transactions read back from a chain, so
//! a replay from genesis reproduces the live registry, balances, and credit
//! exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::Verdict;
use crate::coins::Coins;
use crate::hash::Address;
use crate::ledger::{Chain, CoinOp, GenesisConfig, Transaction, TxKind};
use crate::registry::DeviceRecord;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("no active {0:?} contract")]
    NoActiveContract(CodeId),
    #[error("contract address {0} already exists")]
    ContractExists(Address),
    #[error("device {0} already registered")]
    AlreadyRegistered(Address),
    #[error("device {0} not registered")]
    UnknownDevice(Address),
    #[error("account {0} balance {balance} cannot cover {amount}", balance = .1, amount = .2)]
    Overdraft(Address, Coins, Coins),
    #[error("external account {0} does not exist")]
    UnknownAccount(Address),
    #[error("credit_after {0} is negative")]
    NegativeCredit(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeId {
    RegistrationContract,
    AllocationContract,
}

/// Registration contract storage: the device registry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistrationStorage {
    pub devices: BTreeMap<Address, DeviceRecord>,
}

/// Allocation contract storage: coin issuance and decision counters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AllocationStorage {
    /// Total coins created by mint transfers (registration grants).
    pub minted: Coins,
    pub decisions: u64,
    pub accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContractStorage {
    Registration(RegistrationStorage),
    Allocation(AllocationStorage),
}

impl ContractStorage {
    pub fn empty_for(code: CodeId) -> ContractStorage {
        match code {
            CodeId::RegistrationContract => {
                ContractStorage::Registration(RegistrationStorage::default())
            }
            CodeId::AllocationContract => ContractStorage::Allocation(AllocationStorage::default()),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ContractStorage::Registration(s) => s.devices.is_empty(),
            ContractStorage::Allocation(s) => {
                s.minted == Coins::ZERO && s.decisions == 0 && s.accepted == 0
            }
        }
    }
}

/// A deployed contract instance. Redeployment creates a fresh account with
/// empty storage; the old instance stays addressable but inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractAccount {
    pub address: Address,
    pub code: CodeId,
    pub owner: Address,
    pub deployed_at: u64,
    pub storage: ContractStorage,
}

/// Complete folded state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub chain_id: String,
    /// The edge server (miner) address; its balance is the revenue account.
    pub edge: Address,
    /// Non-device accounts seeded at genesis (edge revenue float, proxy).
    pub balances: BTreeMap<Address, Coins>,
    pub contracts: BTreeMap<Address, ContractAccount>,
    pub active: BTreeMap<CodeId, Address>,
    /// Sum of genesis balances, fixed at initialization.
    pub genesis_total: Coins,
}

impl SystemState {
    pub fn from_genesis(config: &GenesisConfig) -> SystemState {
        let balances: BTreeMap<Address, Coins> = config.initial_accounts.iter().copied().collect();
        let genesis_total = balances.values().copied().sum();
        SystemState {
            chain_id: config.chain_id.clone(),
            edge: config.miner,
            balances,
            contracts: BTreeMap::new(),
            active: BTreeMap::new(),
            genesis_total,
        }
    }

    pub fn active_contract(&self, code: CodeId) -> Result<&ContractAccount, StateError> {
        let addr = self
            .active
            .get(&code)
            .ok_or(StateError::NoActiveContract(code))?;
        Ok(&self.contracts[addr])
    }

    fn active_registration_mut(&mut self) -> Result<&mut RegistrationStorage, StateError> {
        let addr = *self
            .active
            .get(&CodeId::RegistrationContract)
            .ok_or(StateError::NoActiveContract(CodeId::RegistrationContract))?;
        match &mut self.contracts.get_mut(&addr).expect("active exists").storage {
            ContractStorage::Registration(s) => Ok(s),
            ContractStorage::Allocation(_) => unreachable!("storage matches code id"),
        }
    }

    fn active_allocation_mut(&mut self) -> Result<&mut AllocationStorage, StateError> {
        let addr = *self
            .active
            .get(&CodeId::AllocationContract)
            .ok_or(StateError::NoActiveContract(CodeId::AllocationContract))?;
        match &mut self.contracts.get_mut(&addr).expect("active exists").storage {
            ContractStorage::Allocation(s) => Ok(s),
            ContractStorage::Registration(_) => unreachable!("storage matches code id"),
        }
    }

    pub fn devices(&self) -> &BTreeMap<Address, DeviceRecord> {
        static EMPTY: std::sync::OnceLock<BTreeMap<Address, DeviceRecord>> =
            std::sync::OnceLock::new();
        match self.active_contract(CodeId::RegistrationContract) {
            Ok(c) => match &c.storage {
                ContractStorage::Registration(s) => &s.devices,
                ContractStorage::Allocation(_) => unreachable!("storage matches code id"),
            },
            Err(_) => EMPTY.get_or_init(BTreeMap::new),
        }
    }

    pub fn device(&self, address: &Address) -> Result<&DeviceRecord, StateError> {
        self.devices()
            .get(address)
            .ok_or(StateError::UnknownDevice(*address))
    }

    pub fn allocation(&self) -> Option<&AllocationStorage> {
        match self.active_contract(CodeId::AllocationContract) {
            Ok(c) => match &c.storage {
                ContractStorage::Allocation(s) => Some(s),
                ContractStorage::Registration(_) => unreachable!("storage matches code id"),
            },
            Err(_) => None,
        }
    }

    /// Edge-server revenue balance.
    pub fn revenue(&self) -> Coins {
        self.balances.get(&self.edge).copied().unwrap_or(Coins::ZERO)
    }

    /// Conservation check: all balances together equal the genesis issue
    /// plus everything minted since.
    pub fn coins_conserved(&self) -> bool {
        let devices: Coins = self.devices().values().map(|d| d.coin_balance).sum();
        let external: Coins = self.balances.values().copied().sum();
        let minted = self.allocation().map(|a| a.minted).unwrap_or(Coins::ZERO);
        let total = devices.checked_add(external);
        let expect = self.genesis_total.checked_add(minted);
        total.is_some() && total == expect
    }

    fn credit_account(&mut self, account: &Address, amount: Coins) -> Result<(), StateError> {
        if let Some(balance) = self.balances.get_mut(account) {
            *balance = balance
                .checked_add(amount)
                .ok_or(StateError::Overdraft(*account, *balance, amount))?;
            return Ok(());
        }
        let record = self
            .active_registration_mut()?
            .devices
            .get_mut(account)
            .ok_or(StateError::UnknownDevice(*account))?;
        record.coin_balance = record
            .coin_balance
            .checked_add(amount)
            .ok_or(StateError::Overdraft(*account, record.coin_balance, amount))?;
        Ok(())
    }

    fn debit_account(&mut self, account: &Address, amount: Coins) -> Result<(), StateError> {
        if let Some(balance) = self.balances.get_mut(account) {
            if *balance < amount {
                return Err(StateError::Overdraft(*account, *balance, amount));
            }
            *balance = balance.checked_sub(amount).expect("checked above");
            return Ok(());
        }
        let record = self
            .active_registration_mut()?
            .devices
            .get_mut(account)
            .ok_or(StateError::UnknownDevice(*account))?;
        if record.coin_balance < amount {
            return Err(StateError::Overdraft(*account, record.coin_balance, amount));
        }
        record.coin_balance = record.coin_balance.checked_sub(amount).expect("checked above");
        Ok(())
    }

    /// Apply one transaction. This is the only state transition in the
    /// system; the engine validates before calling it, replay calls it
    /// directly on transactions read from the chain.
    pub fn apply_tx(&mut self, tx: &Transaction) -> Result<(), StateError> {
        match &tx.kind {
            TxKind::ContractDeploy {
                code,
                address,
                owner,
            } => {
                if self.contracts.contains_key(address) {
                    return Err(StateError::ContractExists(*address));
                }
                self.contracts.insert(
                    *address,
                    ContractAccount {
                        address: *address,
                        code: *code,
                        owner: *owner,
                        deployed_at: tx.timestamp,
                        storage: ContractStorage::empty_for(*code),
                    },
                );
                self.active.insert(*code, *address);
                Ok(())
            }
            TxKind::Register { record } => {
                let devices = &mut self.active_registration_mut()?.devices;
                if devices.contains_key(&record.account_address) {
                    return Err(StateError::AlreadyRegistered(record.account_address));
                }
                devices.insert(record.account_address, record.clone());
                Ok(())
            }
            TxKind::ResourceRequest { request } => {
                let devices = &mut self.active_registration_mut()?.devices;
                let record = devices
                    .get_mut(&request.device)
                    .ok_or(StateError::UnknownDevice(request.device))?;
                record.last_request_id = Some(request.request_id);
                Ok(())
            }
            TxKind::AdmissionDecision { decision } => {
                let alloc = self.active_allocation_mut()?;
                alloc.decisions += 1;
                if decision.verdict == Verdict::Accept {
                    alloc.accepted += 1;
                }
                Ok(())
            }
            TxKind::CoinTransfer {
                op,
                device,
                amount,
                request_id: _,
            } => match op {
                CoinOp::Mint => {
                    self.credit_account(device, *amount)?;
                    let alloc = self.active_allocation_mut()?;
                    alloc.minted = alloc
                        .minted
                        .checked_add(*amount)
                        .ok_or(StateError::Overdraft(*device, alloc.minted, *amount))?;
                    Ok(())
                }
                CoinOp::Charge => {
                    let edge = self.edge;
                    self.debit_account(device, *amount)?;
                    self.credit_account(&edge, *amount)
                }
                CoinOp::Refund => {
                    let edge = self.edge;
                    self.debit_account(&edge, *amount)?;
                    self.credit_account(device, *amount)
                }
            },
            TxKind::CreditUpdate {
                device,
                delta: _,
                credit_after,
                violations: _,
            } => {
                if *credit_after < 0 {
                    return Err(StateError::NegativeCredit(*credit_after));
                }
                let devices = &mut self.active_registration_mut()?.devices;
                let record = devices
                    .get_mut(device)
                    .ok_or(StateError::UnknownDevice(*device))?;
                record.credit = *credit_after;
                Ok(())
            }
            TxKind::ActivityLog {
                event,
                violations: _,
                learned_destination,
            } => {
                let devices = &mut self.active_registration_mut()?.devices;
                let record = devices
                    .get_mut(&event.device)
                    .ok_or(StateError::UnknownDevice(event.device))?;
                if let Some(dest) = learned_destination {
                    record.allowed_destinations.insert(dest.clone());
                }
                Ok(())
            }
            TxKind::BlockDevice { device, blocked } => {
                let devices = &mut self.active_registration_mut()?.devices;
                let record = devices
                    .get_mut(device)
                    .ok_or(StateError::UnknownDevice(*device))?;
                record.is_blocked = *blocked;
                Ok(())
            }
            TxKind::PriorityUpdate { device, priority } => {
                let devices = &mut self.active_registration_mut()?.devices;
                let record = devices
                    .get_mut(device)
                    .ok_or(StateError::UnknownDevice(*device))?;
                record.priority = *priority;
                Ok(())
            }
        }
    }
}

/// Fold a whole chain back into state.
pub fn replay_chain(chain: &Chain) -> Result<SystemState, StateError> {
    let mut state = SystemState::from_genesis(&chain.genesis_config);
    for tx in chain.iter_txs() {
        state.apply_tx(tx)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::ViolationKind;
    use crate::hash::{canonical_json, Hash32};
    use crate::ledger::DecisionRecord;
    use crate::registry::DeviceAttrs;
    use crate::resources::ResourceRange;
    use std::collections::BTreeSet;

    fn genesis() -> GenesisConfig {
        GenesisConfig {
            difficulty_bits: 0,
            ..GenesisConfig::default()
        }
    }

    fn deploy(state: &mut SystemState, code: CodeId, seq: u64) -> Address {
        let addr = Address::derive(&format!("contract:{code:?}:{seq}"));
        let tx = Transaction::build(
            state.edge,
            seq,
            TxKind::ContractDeploy {
                code,
                address: addr,
                owner: state.edge,
            },
            0,
        );
        state.apply_tx(&tx).unwrap();
        addr
    }

    fn sample_record(label: &str) -> DeviceRecord {
        let attrs = DeviceAttrs {
            network_port: 42024,
            io_data_types: BTreeSet::from(["text".into()]),
            bandwidth_request: ResourceRange::new(1.0, 5.0),
            cpu_request: ResourceRange::new(1.0, 5.0),
            memory_request: ResourceRange::new(1.0, 5.0),
            storage_request: ResourceRange::new(1.0, 5.0),
            mac_address: "00-14-22-01-23-45".into(),
            priority: 1,
            legacy: false,
            allowed_destinations: BTreeSet::new(),
        };
        DeviceRecord::from_attrs(Address::derive(label), &attrs, 100).unwrap()
    }

    #[test]
    fn fold_reproduces_registry_balances_and_credit() {
        let config = genesis();
        let mut chain = Chain::init_genesis(config.clone()).unwrap();
        let mut state = SystemState::from_genesis(&config);
        let miner = config.miner;

        let mut apply_and_submit = |state: &mut SystemState, chain: &mut Chain, tx: Transaction| {
            state.apply_tx(&tx).unwrap();
            chain.submit_transaction(tx).unwrap();
        };

        for (seq, code) in [CodeId::RegistrationContract, CodeId::AllocationContract]
            .into_iter()
            .enumerate()
        {
            let addr = Address::derive(&format!("contract:{code:?}:{seq}"));
            let tx = Transaction::build(
                miner,
                seq as u64,
                TxKind::ContractDeploy {
                    code,
                    address: addr,
                    owner: miner,
                },
                0,
            );
            apply_and_submit(&mut state, &mut chain, tx);
        }
        let record = sample_record("device:a");
        let dev = record.account_address;
        apply_and_submit(
            &mut state,
            &mut chain,
            Transaction::build(dev, 10, TxKind::Register { record }, 0),
        );
        apply_and_submit(
            &mut state,
            &mut chain,
            Transaction::build(
                miner,
                11,
                TxKind::CoinTransfer {
                    op: CoinOp::Mint,
                    device: dev,
                    amount: "200.00".parse().unwrap(),
                    request_id: None,
                },
                0,
            ),
        );
        apply_and_submit(
            &mut state,
            &mut chain,
            Transaction::build(
                miner,
                12,
                TxKind::CoinTransfer {
                    op: CoinOp::Charge,
                    device: dev,
                    amount: "29.49".parse().unwrap(),
                    request_id: Some(Hash32::digest(b"req")),
                },
                1,
            ),
        );
        apply_and_submit(
            &mut state,
            &mut chain,
            Transaction::build(
                miner,
                13,
                TxKind::CreditUpdate {
                    device: dev,
                    delta: -10,
                    credit_after: 90,
                    violations: vec![ViolationKind::PriceExceeded],
                },
                1,
            ),
        );
        chain.mine_pending(&miner).unwrap();

        let replayed = replay_chain(&chain).unwrap();
        assert_eq!(replayed, state);
        assert_eq!(canonical_json(&replayed), canonical_json(&state));
        let record = replayed.device(&dev).unwrap();
        assert_eq!(record.coin_balance.to_string(), "170.51");
        assert_eq!(record.credit, 90);
        assert!(replayed.coins_conserved());
    }

    #[test]
    fn charge_rejects_overdraft() {
        let config = genesis();
        let mut state = SystemState::from_genesis(&config);
        deploy(&mut state, CodeId::RegistrationContract, 0);
        deploy(&mut state, CodeId::AllocationContract, 1);
        let record = sample_record("device:b");
        let dev = record.account_address;
        state
            .apply_tx(&Transaction::build(dev, 10, TxKind::Register { record }, 0))
            .unwrap();
        let charge = Transaction::build(
            state.edge,
            11,
            TxKind::CoinTransfer {
                op: CoinOp::Charge,
                device: dev,
                amount: "1.00".parse().unwrap(),
                request_id: None,
            },
            0,
        );
        assert!(matches!(
            state.apply_tx(&charge),
            Err(StateError::Overdraft(..))
        ));
    }

    #[test]
    fn redeploy_switches_active_instance() {
        let config = genesis();
        let mut state = SystemState::from_genesis(&config);
        let first = deploy(&mut state, CodeId::RegistrationContract, 0);
        deploy(&mut state, CodeId::AllocationContract, 1);
        let record = sample_record("device:c");
        state
            .apply_tx(&Transaction::build(
                record.account_address,
                10,
                TxKind::Register { record },
                0,
            ))
            .unwrap();
        assert_eq!(state.devices().len(), 1);

        let second = deploy(&mut state, CodeId::RegistrationContract, 2);
        assert_ne!(first, second);
        // the new instance starts empty; the old data is unreachable
        assert_eq!(state.devices().len(), 0);
        assert!(!state.contracts[&first].storage.is_empty());
    }

    #[test]
    fn decision_counters_fold() {
        let config = genesis();
        let mut state = SystemState::from_genesis(&config);
        deploy(&mut state, CodeId::RegistrationContract, 0);
        deploy(&mut state, CodeId::AllocationContract, 1);
        let tx = Transaction::build(
            state.edge,
            20,
            TxKind::AdmissionDecision {
                decision: DecisionRecord {
                    request_id: Hash32::digest(b"r"),
                    device: Address::derive("d"),
                    verdict: Verdict::Accept,
                    price: Some("29.49".parse().unwrap()),
                    reason: None,
                },
            },
            1,
        );
        state.apply_tx(&tx).unwrap();
        let alloc = state.allocation().unwrap();
        assert_eq!(alloc.decisions, 1);
        assert_eq!(alloc.accepted, 1);
    }
}
