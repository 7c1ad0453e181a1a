//! One simulated deployment: chain, contracts, pool, credit, proxy, and the
//! per-timeslot activity-management pipeline.
//!
//! Slot order is fixed: release expired allocations, observe legacy traffic
//! through the proxy, submit the slot's requests, gate blocked devices,
//! evaluate behavior, check pool exhaustion, admit with the configured
//! scheduler, charge and reserve the accepted requests, then mine. Every
//! outcome lands on the chain, so replaying the chain reproduces the final
//! state exactly.

use std::collections::BTreeMap;

use crate::admission::{
    self, AdmissionResult, DenialReason, PricingParams, ResourceRequest, Verdict,
};
use crate::coins::Coins;
use crate::contracts::{
    Authority, CallOutcome, ContractCall, ContractEngine, ContractError, ContractFunction,
    EngineDefaults, EventBus, EventDraft, EventName, PolicyRejection,
};
use crate::credit::{self, CreditTracker};
use crate::hash::{canonical_json, Address, Hash32};
use crate::ledger::{Chain, DecisionRecord, GenesisConfig, LedgerError, Transaction, TxKind};
use crate::pool::{Pool, PoolError};
use crate::registry::{DeviceAttrs, Proxy, ProxyAction};
use crate::resources::{ResourceRange, ResourceVector, RESOURCE_KINDS};
use crate::state::{replay_chain, CodeId, StateError};

use super::config::{DeviceSpec, ExperimentConfig, Scheduler};
use super::metrics::{AuditReport, DecisionRow, LevelStats, MetricsReport};
use super::workload::{ActivityGenerator, WorkloadGenerator};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("run audit failed: {0}")]
    AuditFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct World {
    pub config: ExperimentConfig,
    params: PricingParams,
    pub chain: Chain,
    pub engine: ContractEngine,
    pub pool: Pool,
    pub bus: EventBus,
    tracker: CreditTracker,
    proxy: Proxy,
    proxy_address: Address,
    registration: Address,
    allocation: Address,
    workload: WorkloadGenerator,
    activity: ActivityGenerator,
    /// Price threshold per device, fixed at registration.
    thresholds: BTreeMap<Address, f64>,
    /// Events waiting for their transaction to be mined.
    pending_events: BTreeMap<Hash32, Vec<EventDraft>>,
    /// Denied-for-capacity requests carried to the next slot (opt-in).
    carried: Vec<ResourceRequest>,
    collect_details: bool,

    // run accumulators
    submitted: u64,
    accepted: u64,
    denials: BTreeMap<&'static str, u64>,
    per_level: [LevelStats; 4],
    charged_total: Coins,
    utilization_sum: [f64; RESOURCE_KINDS],
    slots_run: u64,
    dropped_blocked_events: u64,
    clamped_refunds: u64,
    pub decision_rows: Vec<DecisionRow>,
    pub utilization_rows: Vec<(u64, [f64; RESOURCE_KINDS])>,
    pub credit_rows: Vec<(u64, Address, i64, Coins)>,
}

impl World {
    pub fn new(config: ExperimentConfig, collect_details: bool) -> Result<World, HarnessError> {
        config.validate()?;
        let params = PricingParams::new(config.system.alpha, config.beta)
            .map_err(|e| HarnessError::Consistency(e.to_string()))?;
        let edge = Address::derive("edge-server");
        let proxy_address = Address::derive("iot-proxy");
        let genesis = GenesisConfig {
            chain_id: config.ledger.chain_id.clone(),
            timestamp: config.ledger.timestamp,
            difficulty_bits: config.ledger.difficulty_bits,
            initial_accounts: vec![(edge, config.ledger.edge_float), (proxy_address, Coins::ZERO)],
            miner: edge,
            per_block_tx_cap: config.ledger.per_block_tx_cap,
        };
        let chain = Chain::init_genesis(genesis.clone())?;
        let engine = ContractEngine::new(
            &genesis,
            EngineDefaults {
                initial_credit: config.credit.initial_credit,
                max_credit: config.credit.max_credit,
            },
        );
        let capacity = config.capacity();
        let proxy = Proxy::new(proxy_address, config.legacy.learning_window);
        let activity = ActivityGenerator::new(&config);

        let mut world = World {
            params,
            chain,
            engine,
            pool: Pool::new(capacity),
            bus: EventBus::new(),
            tracker: CreditTracker::new(),
            proxy,
            proxy_address,
            registration: Address::default(),
            allocation: Address::default(),
            workload: WorkloadGenerator::new(&config, Default::default()),
            activity,
            thresholds: BTreeMap::new(),
            pending_events: BTreeMap::new(),
            carried: Vec::new(),
            collect_details,
            submitted: 0,
            accepted: 0,
            denials: BTreeMap::new(),
            per_level: Default::default(),
            charged_total: Coins::ZERO,
            utilization_sum: [0.0; RESOURCE_KINDS],
            slots_run: 0,
            dropped_blocked_events: 0,
            clamped_refunds: 0,
            decision_rows: Vec::new(),
            utilization_rows: Vec::new(),
            credit_rows: Vec::new(),
            config,
        };
        world.deploy_contracts()?;
        let level_devices = world.register_fleet()?;
        world.workload = WorkloadGenerator::new(&world.config, level_devices);
        world.mine_all()?;
        Ok(world)
    }

    fn deploy_contracts(&mut self) -> Result<(), HarnessError> {
        let (reg, tx) = self
            .engine
            .deploy_contract(CodeId::RegistrationContract, Authority::EdgeServer, 0)?;
        self.chain.submit_transaction(tx)?;
        let (alloc, tx) = self
            .engine
            .deploy_contract(CodeId::AllocationContract, Authority::EdgeServer, 0)?;
        self.chain.submit_transaction(tx)?;
        self.registration = reg;
        self.allocation = alloc;
        Ok(())
    }

    fn synthetic_attrs(&self, level: u8, index: u32) -> DeviceAttrs {
        let profile = &self.config.request_profiles[(level - 1) as usize];
        let io: &[&str] = match level {
            1 => &["video", "text"],
            2 => &["video", "audio"],
            3 => &["text"],
            _ => &["text"],
        };
        DeviceAttrs {
            network_port: 42000 + level as u16,
            io_data_types: io.iter().map(|s| s.to_string()).collect(),
            bandwidth_request: ResourceRange::new(profile.bandwidth.0 as f64, profile.bandwidth.1 as f64),
            cpu_request: ResourceRange::new(profile.cpu.0 as f64, profile.cpu.1 as f64),
            memory_request: ResourceRange::new(profile.memory.0 as f64, profile.memory.1 as f64),
            storage_request: ResourceRange::new(profile.storage.0 as f64, profile.storage.1 as f64),
            mac_address: format!("00-14-22-{:02x}-{:02x}-{:02x}", level, index / 256, index % 256),
            priority: level,
            legacy: false,
            allowed_destinations: [format!("svc:{level}")].into_iter().collect(),
        }
    }

    fn spec_attrs(spec: &DeviceSpec) -> DeviceAttrs {
        DeviceAttrs {
            network_port: spec.network_port,
            io_data_types: spec.io_data_types.iter().cloned().collect(),
            bandwidth_request: ResourceRange::new(spec.bandwidth_request[0], spec.bandwidth_request[1]),
            cpu_request: ResourceRange::new(spec.cpu_request[0], spec.cpu_request[1]),
            memory_request: ResourceRange::new(spec.memory_request[0], spec.memory_request[1]),
            storage_request: ResourceRange::new(spec.storage_request[0], spec.storage_request[1]),
            mac_address: spec.mac_address.clone(),
            priority: spec.priority,
            legacy: spec.legacy,
            allowed_destinations: spec.allowed_destinations.iter().cloned().collect(),
        }
    }

    /// Threshold: factor times the price of the registered maximum demand
    /// against the full (scaled) capacity. Devices whose maximum cannot fit
    /// the pool at all never trip the price rule.
    fn price_threshold(&self, max_demand: &ResourceVector, priority: u8) -> f64 {
        match admission::total_price(max_demand, &self.pool.total, priority, &self.params) {
            Ok(price) => self.config.credit.price_threshold_factor * price,
            Err(_) => f64::INFINITY,
        }
    }

    fn register_device(
        &mut self,
        device: Address,
        attrs: DeviceAttrs,
        timeslot: u64,
    ) -> Result<(), HarnessError> {
        let (caller, authority) = if attrs.legacy {
            (self.proxy_address, Authority::Proxy)
        } else {
            (device, Authority::Device)
        };
        let threshold = self.price_threshold(
            &ResourceVector::new([
                attrs.cpu_request.max,
                attrs.memory_request.max,
                attrs.storage_request.max,
                attrs.bandwidth_request.max,
            ]),
            attrs.priority,
        );
        let invocation = self.engine.invoke(
            ContractCall {
                caller,
                contract: self.registration,
                function: ContractFunction::Register { device, attrs },
                authority,
            },
            timeslot,
        )?;
        let CallOutcome::Applied(_) = invocation.outcome else {
            return Err(HarnessError::Consistency(format!(
                "registration of {device} rejected: {:?}",
                invocation.outcome
            )));
        };
        self.commit(invocation.tx, invocation.events)?;
        self.thresholds.insert(device, threshold);
        if self.config.initial_coins > Coins::ZERO {
            self.invoke_edge(
                ContractFunction::Mint {
                    device,
                    amount: self.config.initial_coins,
                },
                timeslot,
            )?;
        }
        Ok(())
    }

    fn register_fleet(&mut self) -> Result<[Vec<Address>; 4], HarnessError> {
        let mut level_devices: [Vec<Address>; 4] = Default::default();
        for level in 1..=4u8 {
            let count = self.config.fleet.devices_per_level[(level - 1) as usize];
            for i in 0..count {
                let device = Address::derive(&format!(
                    "device:{}:{level}:{i}",
                    self.config.ledger.chain_id
                ));
                let attrs = self.synthetic_attrs(level, i);
                self.register_device(device, attrs, 0)?;
                level_devices[(level - 1) as usize].push(device);
            }
        }
        for spec in self.config.fleet.devices.clone() {
            let device = Address::derive(&format!("device:{}", spec.name));
            let attrs = Self::spec_attrs(&spec);
            let legacy = attrs.legacy;
            self.register_device(device, attrs, 0)?;
            if !legacy {
                level_devices[(spec.priority - 1) as usize].push(device);
            }
        }
        Ok(level_devices)
    }

    /// Invoke an allocation/registration function under edge authority and
    /// commit its transaction. Policy rejections are consistency bugs here.
    fn invoke_edge(
        &mut self,
        function: ContractFunction,
        timeslot: u64,
    ) -> Result<CallOutcome, HarnessError> {
        let contract = match function {
            ContractFunction::Mint { .. }
            | ContractFunction::Charge { .. }
            | ContractFunction::Refund { .. }
            | ContractFunction::RecordDecision { .. } => self.allocation,
            _ => self.registration,
        };
        let invocation = self.engine.invoke(
            ContractCall {
                caller: self.engine.edge,
                contract,
                function,
                authority: Authority::EdgeServer,
            },
            timeslot,
        )?;
        if let CallOutcome::Applied(_) = invocation.outcome {
            self.commit(invocation.tx, invocation.events)?;
        }
        Ok(invocation.outcome)
    }

    fn commit(
        &mut self,
        tx: Option<Transaction>,
        events: Vec<EventDraft>,
    ) -> Result<(), HarnessError> {
        let tx = tx.ok_or_else(|| {
            HarnessError::Consistency("applied call produced no transaction".into())
        })?;
        if !events.is_empty() {
            self.pending_events.insert(tx.tx_id, events);
        }
        self.chain.submit_transaction(tx)?;
        Ok(())
    }

    /// Drain the pending pool, delivering events in block order.
    fn mine_all(&mut self) -> Result<(), HarnessError> {
        let miner = self.chain.genesis_config.miner;
        while let Some(block) = self.chain.mine_pending(&miner)? {
            for tx in &block.tx_list {
                if let Some(events) = self.pending_events.remove(&tx.tx_id) {
                    self.bus.append(block.height, events);
                }
            }
        }
        Ok(())
    }

    fn note_denial(&mut self, reason: DenialReason) {
        *self.denials.entry(reason.name()).or_insert(0) += 1;
    }

    fn record_decision_tx(
        &mut self,
        request: &ResourceRequest,
        verdict: Verdict,
        price: Option<f64>,
        reason: Option<DenialReason>,
        timeslot: u64,
    ) -> Result<(), HarnessError> {
        let outcome = self.invoke_edge(
            ContractFunction::RecordDecision {
                decision: DecisionRecord {
                    request_id: request.request_id,
                    device: request.device,
                    verdict,
                    price: price.map(Coins::from_price),
                    reason,
                },
            },
            timeslot,
        )?;
        if !matches!(outcome, CallOutcome::Applied(_)) {
            return Err(HarnessError::Consistency(
                "decision recording rejected".into(),
            ));
        }
        match verdict {
            Verdict::Accept => {
                self.accepted += 1;
                self.per_level[(request.priority - 1) as usize].accepted += 1;
            }
            Verdict::Deny => {
                if let Some(reason) = reason {
                    self.note_denial(reason);
                }
            }
        }
        if self.collect_details {
            self.decision_rows.push(DecisionRow {
                timeslot,
                request_id: request.request_id,
                device: request.device,
                level: request.priority,
                accepted: verdict == Verdict::Accept,
                price,
                reason: reason.map(DenialReason::name),
            });
        }
        Ok(())
    }

    /// Record a credit change; when it drives the credit to zero, block the
    /// device in the same breath.
    fn apply_credit(
        &mut self,
        device: Address,
        delta: i64,
        violations: Vec<crate::credit::ViolationKind>,
        timeslot: u64,
    ) -> Result<(), HarnessError> {
        let before = self.engine.state.device(&device)?.credit;
        let outcome = self.invoke_edge(
            ContractFunction::ApplyCreditDelta {
                device,
                delta,
                violations,
            },
            timeslot,
        )?;
        let CallOutcome::Applied(crate::contracts::AppliedResult::CreditApplied { credit_after }) =
            outcome
        else {
            return Err(HarnessError::Consistency("credit update rejected".into()));
        };
        if credit_after == 0 && before > 0 {
            self.invoke_edge(
                ContractFunction::SetBlocked {
                    device,
                    blocked: true,
                },
                timeslot,
            )?;
        }
        Ok(())
    }

    /// Release expired allocations and settle their coin returns.
    fn release_and_return(&mut self, timeslot: u64) -> Result<(), HarnessError> {
        let released = self.pool.release_expired(timeslot);
        for alloc in released {
            let mut owed = credit::coin_return(
                alloc.coins_charged,
                alloc.credit_delta,
                &self.config.credit,
            );
            let revenue = self.engine.state.revenue();
            if owed > revenue {
                owed = revenue;
                self.clamped_refunds += 1;
            }
            let outcome = self.invoke_edge(
                ContractFunction::Refund {
                    device: alloc.device,
                    amount: owed,
                    request_id: Some(alloc.request_id),
                },
                timeslot,
            )?;
            if !matches!(outcome, CallOutcome::Applied(_)) {
                return Err(HarnessError::Consistency(format!(
                    "coin return for {} rejected",
                    alloc.request_id
                )));
            }
        }
        Ok(())
    }

    /// Observe legacy traffic: auto-register newcomers, log activity, score
    /// violations, block devices whose credit hits zero.
    fn observe_legacy(&mut self, timeslot: u64) -> Result<(), HarnessError> {
        let events = self.activity.events_for_slot(timeslot);
        if events.is_empty() {
            return Ok(());
        }
        let observation = self.proxy.observe(&events, self.engine.state.devices());
        self.dropped_blocked_events += observation.dropped_blocked;
        for action in observation.actions {
            match action {
                ProxyAction::Register { device, attrs } => {
                    self.register_device(device, attrs, timeslot)?;
                }
                ProxyAction::LogActivity {
                    event,
                    violations,
                    learned_destination,
                } => {
                    let device = event.device;
                    let invocation = self.engine.invoke(
                        ContractCall {
                            caller: self.proxy_address,
                            contract: self.registration,
                            function: ContractFunction::RecordActivity {
                                event,
                                violations: violations.clone(),
                                learned_destination,
                            },
                            authority: Authority::Proxy,
                        },
                        timeslot,
                    )?;
                    if let CallOutcome::Applied(_) = invocation.outcome {
                        self.commit(invocation.tx, invocation.events)?;
                    }
                    if !violations.is_empty() {
                        let delta = credit::evaluate_activity(&violations, &self.config.credit);
                        self.apply_credit(device, delta, violations, timeslot)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Run one timeslot of the activity-management pipeline.
    pub fn run_slot(&mut self, timeslot: u64) -> Result<(), HarnessError> {
        self.release_and_return(timeslot)?;
        self.observe_legacy(timeslot)?;

        // new arrivals land on chain and count as submitted exactly once;
        // carried requests were recorded when they first arrived
        let mut batch = std::mem::take(&mut self.carried);
        for request in self.workload.generate_batch(timeslot) {
            let tx = self.engine.build_tx(
                request.device,
                TxKind::ResourceRequest {
                    request: request.clone(),
                },
                timeslot,
            );
            self.engine.state.apply_tx(&tx)?;
            self.chain.submit_transaction(tx)?;
            self.submitted += 1;
            self.per_level[(request.priority - 1) as usize].submitted += 1;
            batch.push(request);
        }

        // gate blocked devices, then score behavior on the slot-start
        // availability snapshot
        let snapshot = self.pool.available;
        let mut eligible: Vec<ResourceRequest> = Vec::with_capacity(batch.len());
        let mut deltas: BTreeMap<Hash32, i64> = BTreeMap::new();
        for request in batch {
            let record = self.engine.state.device(&request.device)?;
            if record.is_blocked {
                self.record_decision_tx(
                    &request,
                    Verdict::Deny,
                    None,
                    Some(DenialReason::Blocked),
                    timeslot,
                )?;
                continue;
            }
            let estimate = admission::total_price(
                &request.demand,
                &snapshot,
                request.priority,
                &self.params,
            )
            .ok();
            let threshold = self
                .thresholds
                .get(&request.device)
                .copied()
                .unwrap_or(f64::INFINITY);
            let evaluation = credit::evaluate_request(
                &mut self.tracker,
                request.device,
                request.request_id,
                timeslot,
                estimate,
                threshold,
                &self.config.credit,
            );
            self.apply_credit(
                request.device,
                evaluation.delta,
                evaluation.violations,
                timeslot,
            )?;
            if self.engine.state.device(&request.device)?.is_blocked {
                // this request drove the credit to zero
                self.record_decision_tx(
                    &request,
                    Verdict::Deny,
                    None,
                    Some(DenialReason::Blocked),
                    timeslot,
                )?;
                continue;
            }
            deltas.insert(request.request_id, evaluation.delta);
            eligible.push(request);
        }

        if self.pool.is_exhausted(&eligible) {
            for request in &eligible {
                self.record_decision_tx(
                    request,
                    Verdict::Deny,
                    None,
                    Some(DenialReason::PoolExhausted),
                    timeslot,
                )?;
            }
        } else {
            self.admit_batch(eligible, &deltas, timeslot)?;
        }

        self.mine_all()?;
        self.sample_metrics(timeslot);
        Ok(())
    }

    fn admit_batch(
        &mut self,
        requests: Vec<ResourceRequest>,
        deltas: &BTreeMap<Hash32, i64>,
        timeslot: u64,
    ) -> Result<(), HarnessError> {
        let result: AdmissionResult = match self.config.scheduler {
            Scheduler::Pricing => {
                let budgets: BTreeMap<Address, Coins> = requests
                    .iter()
                    .map(|r| {
                        let balance = self
                            .engine
                            .state
                            .device(&r.device)
                            .map(|d| d.coin_balance)
                            .unwrap_or(Coins::ZERO);
                        (r.device, balance)
                    })
                    .collect();
                admission::admit_with_budgets(&requests, &self.pool.available, &self.params, Some(&budgets))
            }
            Scheduler::Fcfs => admission::admit_fcfs(&requests, &self.pool.available),
            Scheduler::Priority => admission::admit_priority(&requests, &self.pool.available),
        };

        let by_id: BTreeMap<Hash32, &ResourceRequest> =
            requests.iter().map(|r| (r.request_id, r)).collect();
        let mut carried = Vec::new();
        for decision in &result.decisions {
            let request = by_id[&decision.request_id];
            if self.config.carry_over
                && decision.verdict == Verdict::Deny
                && matches!(
                    decision.reason,
                    Some(DenialReason::Infeasible) | Some(DenialReason::PoolExhausted)
                )
            {
                carried.push((*request).clone());
                continue;
            }
            self.record_decision_tx(
                request,
                decision.verdict,
                decision.price,
                decision.reason,
                timeslot,
            )?;
        }
        self.carried = carried;

        // charge and reserve in acceptance order
        for request_id in &result.accepted {
            let request = by_id[request_id];
            let price = result
                .decisions
                .iter()
                .find(|d| d.request_id == *request_id)
                .and_then(|d| d.price);
            let charged = match self.config.scheduler {
                Scheduler::Pricing => {
                    let amount = Coins::from_price(
                        price.ok_or_else(|| {
                            HarnessError::Consistency("accepted pricing decision without price".into())
                        })?,
                    );
                    let outcome = self.invoke_edge(
                        ContractFunction::Charge {
                            device: request.device,
                            amount,
                            request_id: Some(*request_id),
                        },
                        timeslot,
                    )?;
                    match outcome {
                        CallOutcome::Applied(_) => amount,
                        CallOutcome::Rejected(PolicyRejection::InsufficientBalance {
                            balance,
                            requested,
                        }) => {
                            return Err(HarnessError::Consistency(format!(
                                "budgeted admission accepted an unpayable charge: balance {balance}, requested {requested}"
                            )));
                        }
                        CallOutcome::Rejected(other) => {
                            return Err(HarnessError::Consistency(format!(
                                "charge rejected: {other:?}"
                            )));
                        }
                    }
                }
                _ => Coins::ZERO,
            };
            self.charged_total = self
                .charged_total
                .checked_add(charged)
                .ok_or_else(|| HarnessError::Consistency("charge overflow".into()))?;
            let delta = deltas[request_id];
            self.pool.reserve(request, timeslot, charged, delta)?;
        }
        Ok(())
    }

    fn sample_metrics(&mut self, timeslot: u64) {
        self.slots_run += 1;
        let mut used = [0.0; RESOURCE_KINDS];
        for (i, u) in used.iter_mut().enumerate() {
            let total = self.pool.total.0[i];
            *u = if total > 0.0 {
                (total - self.pool.available.0[i]) / total
            } else {
                0.0
            };
            self.utilization_sum[i] += *u;
        }
        self.utilization_rows.push((timeslot, used));
        if self.collect_details {
            for (address, record) in self.engine.state.devices() {
                self.credit_rows
                    .push((timeslot, *address, record.credit, record.coin_balance));
            }
        }
        debug_assert!(self.pool.audit_identity());
        debug_assert!(self.engine.state.coins_conserved());
    }

    /// Run the configured number of timeslots. Requests still carried when
    /// the run ends are denied so every submission has a decision.
    pub fn run(&mut self) -> Result<(), HarnessError> {
        for t in 1..=self.config.timeslots {
            self.run_slot(t)?;
        }
        let leftover = std::mem::take(&mut self.carried);
        let final_slot = self.config.timeslots;
        for request in leftover {
            self.record_decision_tx(
                &request,
                Verdict::Deny,
                None,
                Some(DenialReason::PoolExhausted),
                final_slot,
            )?;
        }
        self.mine_all()?;
        Ok(())
    }

    pub fn blocked_device_count(&self) -> u64 {
        self.engine
            .state
            .devices()
            .values()
            .filter(|d| d.is_blocked)
            .count() as u64
    }

    pub fn metrics(&self) -> MetricsReport {
        let denied: u64 = self.denials.values().sum();
        let mut mean_utilization = [0.0; RESOURCE_KINDS];
        if self.slots_run > 0 {
            for (i, m) in mean_utilization.iter_mut().enumerate() {
                *m = self.utilization_sum[i] / self.slots_run as f64;
            }
        }
        let tx_count: u64 = self.chain.blocks.iter().map(|b| b.tx_list.len() as u64).sum();
        let block_bytes: usize = self
            .chain
            .blocks
            .iter()
            .map(|b| canonical_json(b).len())
            .sum();
        MetricsReport {
            timeslots: self.slots_run,
            submitted: self.submitted,
            accepted: self.accepted,
            denied,
            acceptance_rate: if self.submitted == 0 {
                0.0
            } else {
                self.accepted as f64 / self.submitted as f64
            },
            per_level: self.per_level,
            denials: self
                .denials
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            mean_price: if self.accepted == 0 {
                0.0
            } else {
                self.charged_total.to_f64() / self.accepted as f64
            },
            mean_utilization,
            blocked_devices: self.blocked_device_count(),
            blocks: self.chain.blocks.len() as u64,
            transactions: tx_count,
            mean_block_bytes: if self.chain.blocks.is_empty() {
                0.0
            } else {
                block_bytes as f64 / self.chain.blocks.len() as f64
            },
            dropped_blocked_events: self.dropped_blocked_events,
            clamped_refunds: self.clamped_refunds,
        }
    }

    /// Full end-of-run consistency audit.
    pub fn audit(&self) -> AuditReport {
        let mut report = AuditReport::default();
        let fail = |flag: &mut bool, failures: &mut Vec<String>, ok: bool, what: &str| {
            *flag = ok;
            if !ok {
                failures.push(what.to_string());
            }
        };
        let mut failures = Vec::new();

        let chain_audit = self.chain.validate_chain();
        fail(
            &mut report.chain_valid,
            &mut failures,
            chain_audit.valid,
            &format!("chain invalid at {:?}", chain_audit.first_violation),
        );
        fail(
            &mut report.pending_empty,
            &mut failures,
            self.chain.pending_len() == 0,
            "pending pool not drained",
        );
        match replay_chain(&self.chain) {
            Ok(replayed) => {
                let matches = canonical_json(&replayed) == canonical_json(&self.engine.state);
                fail(
                    &mut report.replay_matches,
                    &mut failures,
                    matches,
                    "replayed state differs from live state",
                );
            }
            Err(e) => fail(
                &mut report.replay_matches,
                &mut failures,
                false,
                &format!("replay failed: {e}"),
            ),
        }
        fail(
            &mut report.coins_conserved,
            &mut failures,
            self.engine.state.coins_conserved(),
            "coin conservation violated",
        );
        let denied: u64 = self.denials.values().sum();
        fail(
            &mut report.counts_consistent,
            &mut failures,
            self.accepted + denied == self.submitted,
            "accepted + denied != submitted",
        );
        fail(
            &mut report.pool_identity,
            &mut failures,
            self.pool.audit_identity(),
            "pool accounting identity violated",
        );
        fail(
            &mut report.ordering_ok,
            &mut failures,
            self.check_tx_ordering(),
            "transaction ordering violated",
        );
        let accepted_events = self.bus.count(EventName::AllocationAccepted) as u64;
        fail(
            &mut report.events_complete,
            &mut failures,
            accepted_events == self.accepted,
            &format!(
                "{} AllocationAccepted events vs {} accepts",
                accepted_events, self.accepted
            ),
        );
        report.failures = failures;
        report
    }

    #[cfg(test)]
    pub(crate) fn force_block(&mut self, device: Address, timeslot: u64) {
        self.invoke_edge(
            ContractFunction::SetBlocked {
                device,
                blocked: true,
            },
            timeslot,
        )
        .unwrap();
        self.mine_all().unwrap();
    }

    /// No decision before its request, no charge without a decision, at most
    /// one charge and one return per request.
    fn check_tx_ordering(&self) -> bool {
        use crate::ledger::CoinOp;
        let mut request_pos: BTreeMap<Hash32, usize> = BTreeMap::new();
        let mut decision_pos: BTreeMap<Hash32, usize> = BTreeMap::new();
        let mut charge_pos: BTreeMap<Hash32, usize> = BTreeMap::new();
        let mut refund_pos: BTreeMap<Hash32, usize> = BTreeMap::new();
        for (i, tx) in self.chain.iter_txs().enumerate() {
            match &tx.kind {
                TxKind::ResourceRequest { request } => {
                    if request_pos.insert(request.request_id, i).is_some() {
                        return false;
                    }
                }
                TxKind::AdmissionDecision { decision } => {
                    if decision_pos.insert(decision.request_id, i).is_some() {
                        return false;
                    }
                }
                TxKind::CoinTransfer {
                    op,
                    request_id: Some(id),
                    ..
                } => {
                    let map = match op {
                        CoinOp::Charge => &mut charge_pos,
                        CoinOp::Refund => &mut refund_pos,
                        CoinOp::Mint => continue,
                    };
                    if map.insert(*id, i).is_some() {
                        return false;
                    }
                }
                _ => {}
            }
        }
        for (id, decision) in &decision_pos {
            match request_pos.get(id) {
                Some(request) if request < decision => {}
                _ => return false,
            }
        }
        for (id, charge) in &charge_pos {
            match decision_pos.get(id) {
                Some(decision) if decision < charge => {}
                _ => return false,
            }
        }
        for (id, refund) in &refund_pos {
            match decision_pos.get(id) {
                Some(decision) if decision < refund => {}
                _ => return false,
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::CountDistribution;

    fn small_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.timeslots = 30;
        config.fleet.devices_per_level = [3, 3, 3, 3];
        config.requests_per_slot = CountDistribution::Uniform { min: 2, max: 6 };
        config.ledger.difficulty_bits = 0;
        config
    }

    #[test]
    fn small_run_passes_audit() {
        let mut world = World::new(small_config(), true).unwrap();
        world.run().unwrap();
        let audit = world.audit();
        assert!(audit.ok(), "{}", audit.summary());
        let metrics = world.metrics();
        assert_eq!(metrics.submitted, metrics.accepted + metrics.denied);
        assert!(metrics.acceptance_rate > 0.0 && metrics.acceptance_rate <= 1.0);
        assert!(metrics.blocks > 1);
        // 12 synthetic devices + 4 legacy auto-registered through the proxy
        assert_eq!(world.engine.state.devices().len(), 16);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let mut a = World::new(small_config(), true).unwrap();
        let mut b = World::new(small_config(), true).unwrap();
        a.run().unwrap();
        b.run().unwrap();
        assert_eq!(a.chain.tip_hash(), b.chain.tip_hash());
        assert_eq!(a.metrics(), b.metrics());
        assert_eq!(
            canonical_json(&a.engine.state),
            canonical_json(&b.engine.state)
        );
        let mut c_config = small_config();
        c_config.seed = 99;
        let mut c = World::new(c_config, true).unwrap();
        c.run().unwrap();
        assert_ne!(a.chain.tip_hash(), c.chain.tip_hash());
    }

    #[test]
    fn blocked_device_is_denied_before_pricing() {
        let mut config = small_config();
        config.legacy.devices = 0;
        config.requests_per_slot = CountDistribution::Constant { value: 8 };
        let mut world = World::new(config.clone(), true).unwrap();
        let victim = Address::derive(&format!("device:{}:1:0", config.ledger.chain_id));
        world.force_block(victim, 0);
        world.run().unwrap();
        assert!(world.audit().ok());
        let denials: Vec<&DecisionRow> = world
            .decision_rows
            .iter()
            .filter(|row| row.device == victim)
            .collect();
        assert!(!denials.is_empty(), "the blocked device keeps requesting");
        for row in denials {
            assert!(!row.accepted);
            assert_eq!(row.reason, Some("blocked"));
            assert_eq!(row.price, None);
        }
    }

    #[test]
    fn broke_devices_are_denied_for_coins() {
        let mut config = small_config();
        config.legacy.devices = 0;
        // one cent to spend: every priced request is unaffordable
        config.initial_coins = Coins::from_cents(1);
        let mut world = World::new(config, true).unwrap();
        world.run().unwrap();
        assert!(world.audit().ok());
        let metrics = world.metrics();
        assert_eq!(metrics.accepted, 0);
        assert_eq!(
            metrics.denials.get("insufficient_coins").copied(),
            Some(metrics.denied)
        );
    }

    #[test]
    fn empty_slots_mine_no_blocks() {
        let mut config = small_config();
        config.legacy.devices = 0;
        config.requests_per_slot = CountDistribution::Constant { value: 0 };
        config.timeslots = 5;
        let mut world = World::new(config, true).unwrap();
        let blocks_before = world.chain.blocks.len();
        world.run().unwrap();
        assert_eq!(world.chain.blocks.len(), blocks_before);
        assert!(world.audit().ok());
    }

    #[test]
    fn misbehaving_legacy_device_ends_up_blocked() {
        let mut config = small_config();
        config.timeslots = 120;
        config.legacy.devices = 2;
        config.legacy.wrong_port_every = Some(2);
        let mut world = World::new(config.clone(), true).unwrap();
        world.run().unwrap();
        assert!(world.audit().ok());
        let misbehaver = Address::derive(&format!("legacy:{}:0", config.ledger.chain_id));
        let record = world.engine.state.device(&misbehaver).unwrap();
        assert!(record.is_blocked);
        assert_eq!(record.credit, 0);
        let metrics = world.metrics();
        assert!(metrics.dropped_blocked_events > 0);
        assert_eq!(metrics.blocked_devices, 1);
    }

    #[test]
    fn baseline_schedulers_run_clean() {
        for scheduler in [Scheduler::Fcfs, Scheduler::Priority] {
            let mut config = small_config();
            config.scheduler = scheduler;
            let mut world = World::new(config, true).unwrap();
            world.run().unwrap();
            let audit = world.audit();
            assert!(audit.ok(), "{scheduler:?}: {}", audit.summary());
            let metrics = world.metrics();
            assert!(metrics.accepted > 0);
            // baselines neither price nor charge
            assert_eq!(metrics.mean_price, 0.0);
        }
    }

    #[test]
    fn replay_round_trips_through_the_chain_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.jsonl");
        let mut world = World::new(small_config(), false).unwrap();
        world.run().unwrap();
        world.chain.write_file(&path).unwrap();
        let loaded = Chain::read_file(&path).unwrap();
        assert!(loaded.validate_chain().valid);
        let replayed = replay_chain(&loaded).unwrap();
        assert_eq!(
            canonical_json(&replayed),
            canonical_json(&world.engine.state)
        );
    }
}
