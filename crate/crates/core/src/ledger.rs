//! Append-only, hash-chained permissioned ledger.
//!
//! One full node (the edge server) holds the pending pool and is the only
//! node allowed to mine. Mining is a deterministic proof-of-work: the nonce
//! search always starts at zero, so identical inputs produce bit-identical
//! chains. Light nodes hold verified copies and sync only from whitelisted
//! peers.
//!
//! Hash preimages, all SHA-256 over canonical JSON (see [`crate::hash`]):
//!
//! * signature stamp: `"sig:" + sender_hex + ":" + canonical(kind)`
//! * transaction id: `"tx:" + canonical({sender, kind, timestamp, signature})`
//! * tx root: `"txroot:" + concat(tx_id bytes)`; for the genesis block,
//!   `"genesis:" + canonical(genesis_config)` so all nodes initialized from
//!   the same configuration agree on the genesis hash
//! * block hash: `"blk:" + height_le + prev_hash + tx_root + nonce_le + miner`
//!
//! The chain file is line-delimited UTF-8: the first line is the canonical
//! genesis configuration, each following line one canonical block, separated
//! by `\n`.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::{DenialReason, ResourceRequest, Verdict};
use crate::coins::Coins;
use crate::credit::ViolationKind;
use crate::hash::{canonical_json, Address, Hash32};
use crate::registry::{ActivityEvent, DeviceRecord};

pub const DEFAULT_DIFFICULTY_BITS: u32 = 12;
pub const DEFAULT_TX_CAP: usize = 208;
pub const MAX_DIFFICULTY_BITS: u32 = 32;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("invalid genesis config: {0}")]
    InvalidConfig(String),
    #[error("only the configured miner may mine, caller was {0}")]
    NotMiner(Address),
    #[error("duplicate transaction {0}")]
    DuplicateTransaction(Hash32),
    #[error("unknown sender {0} for transaction kind {1}")]
    UnknownSender(Address, &'static str),
    #[error("transaction {0} failed verification")]
    InvalidTransaction(Hash32),
    #[error("peer {0} is not on the enode whitelist")]
    PeerNotWhitelisted(Address),
    #[error("sync mismatch at height {height}: local chain diverges from peer")]
    SyncMismatch { height: u64 },
    #[error("chain file line {line}: {reason}")]
    MalformedChainFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub chain_id: String,
    /// Fixed timestamp recorded in the configuration (simulation origin).
    pub timestamp: u64,
    /// Leading zero bits required of every block hash.
    pub difficulty_bits: u32,
    pub initial_accounts: Vec<(Address, Coins)>,
    /// The single address allowed to mine.
    pub miner: Address,
    pub per_block_tx_cap: usize,
}

impl GenesisConfig {
    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.chain_id.is_empty() {
            return Err(LedgerError::InvalidConfig("chain_id must be nonempty".into()));
        }
        if self.difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err(LedgerError::InvalidConfig(format!(
                "difficulty_bits must be <= {MAX_DIFFICULTY_BITS}, got {}",
                self.difficulty_bits
            )));
        }
        if self.per_block_tx_cap == 0 {
            return Err(LedgerError::InvalidConfig("per_block_tx_cap must be >= 1".into()));
        }
        for (addr, coins) in &self.initial_accounts {
            if coins.is_negative() {
                return Err(LedgerError::InvalidConfig(format!(
                    "initial balance for {addr} is negative"
                )));
            }
        }
        Ok(())
    }
}

impl Default for GenesisConfig {
    fn default() -> Self {
        let miner = Address::derive("edge-server");
        GenesisConfig {
            chain_id: "edgemeter-local".into(),
            timestamp: 0,
            difficulty_bits: DEFAULT_DIFFICULTY_BITS,
            initial_accounts: vec![(miner, "1000000.00".parse().unwrap())],
            miner,
            per_block_tx_cap: DEFAULT_TX_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoinOp {
    Mint,
    Charge,
    Refund,
}

/// Payload of an admission decision transaction. Prices are recorded in
/// coins (the charged amount); the reason is present only for denials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub request_id: Hash32,
    pub device: Address,
    pub verdict: Verdict,
    pub price: Option<Coins>,
    pub reason: Option<DenialReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum TxKind {
    /// A device (or the proxy for it) joins the registry.
    Register { record: DeviceRecord },
    /// A device asks for resources. Folding this sets the device's last
    /// request id.
    ResourceRequest { request: ResourceRequest },
    AdmissionDecision { decision: DecisionRecord },
    CoinTransfer {
        op: CoinOp,
        device: Address,
        amount: Coins,
        /// The request this charge or return settles; None for mints.
        request_id: Option<Hash32>,
    },
    CreditUpdate {
        device: Address,
        delta: i64,
        credit_after: i64,
        violations: Vec<ViolationKind>,
    },
    ActivityLog {
        event: ActivityEvent,
        violations: Vec<ViolationKind>,
        /// Destination adopted into the allowed set by the learning window.
        learned_destination: Option<String>,
    },
    BlockDevice { device: Address, blocked: bool },
    /// Edge-server update of a device's priority level.
    PriorityUpdate { device: Address, priority: u8 },
    /// Contract deployment. Deployments must live on chain for replay to
    /// reproduce the contract set.
    ContractDeploy {
        code: crate::state::CodeId,
        address: Address,
        owner: Address,
    },
}

impl TxKind {
    pub fn name(&self) -> &'static str {
        match self {
            TxKind::Register { .. } => "register",
            TxKind::ResourceRequest { .. } => "resource_request",
            TxKind::AdmissionDecision { .. } => "admission_decision",
            TxKind::CoinTransfer { .. } => "coin_transfer",
            TxKind::CreditUpdate { .. } => "credit_update",
            TxKind::ActivityLog { .. } => "activity_log",
            TxKind::BlockDevice { .. } => "block_device",
            TxKind::PriorityUpdate { .. } => "priority_update",
            TxKind::ContractDeploy { .. } => "contract_deploy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub sender: Address,
    /// Submission sequence number; keeps otherwise-identical payloads (two
    /// equal credit updates in one slot, say) distinct.
    pub seq: u64,
    pub kind: TxKind,
    /// Timeslot index, not wall clock.
    pub timestamp: u64,
    /// Simulated signature: a stamp over sender and payload.
    pub signature: Hash32,
}

#[derive(Serialize)]
struct TxIdPreimage<'a> {
    sender: &'a Address,
    seq: u64,
    kind: &'a TxKind,
    timestamp: u64,
    signature: &'a Hash32,
}

impl Transaction {
    pub fn build(sender: Address, seq: u64, kind: TxKind, timestamp: u64) -> Transaction {
        let signature = sign_stamp(&sender, &kind);
        let tx_id = tx_id(&sender, seq, &kind, timestamp, &signature);
        Transaction {
            tx_id,
            sender,
            seq,
            kind,
            timestamp,
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        self.signature == sign_stamp(&self.sender, &self.kind)
            && self.tx_id
                == tx_id(
                    &self.sender,
                    self.seq,
                    &self.kind,
                    self.timestamp,
                    &self.signature,
                )
    }
}

fn sign_stamp(sender: &Address, kind: &TxKind) -> Hash32 {
    Hash32::digest(format!("sig:{}:{}", sender, canonical_json(kind)).as_bytes())
}

fn tx_id(sender: &Address, seq: u64, kind: &TxKind, timestamp: u64, signature: &Hash32) -> Hash32 {
    let preimage = TxIdPreimage {
        sender,
        seq,
        kind,
        timestamp,
        signature,
    };
    Hash32::digest(format!("tx:{}", canonical_json(&preimage)).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub tx_list: Vec<Transaction>,
    pub nonce: u64,
    pub miner: Address,
    pub block_hash: Hash32,
}

fn tx_root(txs: &[Transaction]) -> Hash32 {
    let mut bytes = b"txroot:".to_vec();
    for tx in txs {
        bytes.extend_from_slice(&tx.tx_id.0);
    }
    Hash32::digest(&bytes)
}

fn genesis_root(config: &GenesisConfig) -> Hash32 {
    Hash32::digest(format!("genesis:{}", canonical_json(config)).as_bytes())
}

fn block_hash(height: u64, prev: &Hash32, root: &Hash32, nonce: u64, miner: &Address) -> Hash32 {
    let mut bytes = b"blk:".to_vec();
    bytes.extend_from_slice(&height.to_le_bytes());
    bytes.extend_from_slice(&prev.0);
    bytes.extend_from_slice(&root.0);
    bytes.extend_from_slice(&nonce.to_le_bytes());
    bytes.extend_from_slice(&miner.0);
    Hash32::digest(&bytes)
}

/// Nonce search from zero until the hash meets the difficulty.
fn mine_block(
    height: u64,
    prev: Hash32,
    root: Hash32,
    miner: Address,
    difficulty_bits: u32,
    txs: Vec<Transaction>,
) -> Block {
    let mut nonce = 0u64;
    loop {
        let hash = block_hash(height, &prev, &root, nonce, &miner);
        if hash.leading_zero_bits() >= difficulty_bits {
            return Block {
                height,
                prev_hash: prev,
                tx_list: txs,
                nonce,
                miner,
                block_hash: hash,
            };
        }
        nonce += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolReceipt {
    pub tx_id: Hash32,
    pub pending: usize,
}

/// Verdict of a full-chain validation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainAudit {
    pub valid: bool,
    pub first_violation: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub genesis_config: GenesisConfig,
    pub blocks: Vec<Block>,
    pending: Vec<Transaction>,
    seen: BTreeSet<Hash32>,
    known_senders: BTreeSet<Address>,
}

impl Chain {
    /// Create the chain with its mined genesis block. Two nodes initialized
    /// from the same configuration hold the same genesis hash.
    pub fn init_genesis(config: GenesisConfig) -> Result<Chain, LedgerError> {
        config.validate()?;
        let root = genesis_root(&config);
        let genesis = mine_block(
            0,
            Hash32::zero(),
            root,
            config.miner,
            config.difficulty_bits,
            Vec::new(),
        );
        let known_senders = config
            .initial_accounts
            .iter()
            .map(|(a, _)| *a)
            .collect::<BTreeSet<_>>();
        Ok(Chain {
            genesis_config: config,
            blocks: vec![genesis],
            pending: Vec::new(),
            seen: BTreeSet::new(),
            known_senders,
        })
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.blocks.last().expect("chain has genesis").block_hash
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn iter_txs(&self) -> impl Iterator<Item = &Transaction> {
        self.blocks.iter().flat_map(|b| b.tx_list.iter())
    }

    /// Add a transaction to the pending pool. Registration admits new
    /// senders; every other kind requires a known sender. Resubmitting a
    /// transaction id is rejected and leaves the pool unchanged.
    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<PoolReceipt, LedgerError> {
        if !tx.verify() {
            return Err(LedgerError::InvalidTransaction(tx.tx_id));
        }
        if self.seen.contains(&tx.tx_id) {
            return Err(LedgerError::DuplicateTransaction(tx.tx_id));
        }
        match &tx.kind {
            TxKind::Register { record } => {
                self.known_senders.insert(record.account_address);
                self.known_senders.insert(tx.sender);
            }
            kind => {
                if !self.known_senders.contains(&tx.sender) {
                    return Err(LedgerError::UnknownSender(tx.sender, kind.name()));
                }
            }
        }
        self.seen.insert(tx.tx_id);
        self.pending.push(tx);
        Ok(PoolReceipt {
            tx_id: self.pending.last().expect("just pushed").tx_id,
            pending: self.pending.len(),
        })
    }

    /// Mine one block of pending transactions (up to the per-block cap).
    /// Returns `None` when the pool is empty: mining happens only when
    /// unconfirmed transactions exist.
    pub fn mine_pending(&mut self, caller: &Address) -> Result<Option<Block>, LedgerError> {
        if *caller != self.genesis_config.miner {
            return Err(LedgerError::NotMiner(*caller));
        }
        if self.pending.is_empty() {
            return Ok(None);
        }
        let take = self.pending.len().min(self.genesis_config.per_block_tx_cap);
        let txs: Vec<Transaction> = self.pending.drain(..take).collect();
        let root = tx_root(&txs);
        let block = mine_block(
            self.height() + 1,
            self.tip_hash(),
            root,
            self.genesis_config.miner,
            self.genesis_config.difficulty_bits,
            txs,
        );
        self.blocks.push(block.clone());
        Ok(Some(block))
    }

    /// Check every block invariant: linkage, recomputed roots and hashes,
    /// difficulty, the transaction cap, and per-transaction verification.
    pub fn validate_chain(&self) -> ChainAudit {
        for (i, block) in self.blocks.iter().enumerate() {
            let height = i as u64;
            let bad = |_: &str| ChainAudit {
                valid: false,
                first_violation: Some(height),
            };
            if block.height != height {
                return bad("height");
            }
            if (height == 0) != block.prev_hash.is_zero() {
                return bad("prev zero iff genesis");
            }
            if height > 0 && block.prev_hash != self.blocks[i - 1].block_hash {
                return bad("linkage");
            }
            if block.tx_list.len() > self.genesis_config.per_block_tx_cap {
                return bad("cap");
            }
            let root = if height == 0 {
                genesis_root(&self.genesis_config)
            } else {
                tx_root(&block.tx_list)
            };
            let expect = block_hash(height, &block.prev_hash, &root, block.nonce, &block.miner);
            if expect != block.block_hash {
                return bad("hash");
            }
            if block.block_hash.leading_zero_bits() < self.genesis_config.difficulty_bits {
                return bad("difficulty");
            }
            if block.miner != self.genesis_config.miner {
                return bad("miner");
            }
            if !block.tx_list.iter().all(Transaction::verify) {
                return bad("tx");
            }
        }
        ChainAudit {
            valid: true,
            first_violation: None,
        }
    }

    /// Persist as line-delimited canonical JSON: genesis config first, then
    /// one block per line.
    pub fn write_file(&self, path: &Path) -> Result<(), LedgerError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", canonical_json(&self.genesis_config))?;
        for block in &self.blocks {
            writeln!(out, "{}", canonical_json(block))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parse a chain file. The result still needs [`Chain::validate_chain`];
    /// this only rejects files that cannot be decoded at all.
    pub fn read_file(path: &Path) -> Result<Chain, LedgerError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines.next().ok_or(LedgerError::MalformedChainFile {
            line: 1,
            reason: "empty file".into(),
        })?;
        let genesis_config: GenesisConfig =
            serde_json::from_str(&first?).map_err(|e| LedgerError::MalformedChainFile {
                line: 1,
                reason: e.to_string(),
            })?;
        let mut blocks = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let block: Block =
                serde_json::from_str(&line).map_err(|e| LedgerError::MalformedChainFile {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            blocks.push(block);
        }
        if blocks.is_empty() {
            return Err(LedgerError::MalformedChainFile {
                line: 2,
                reason: "no blocks".into(),
            });
        }
        let mut seen = BTreeSet::new();
        let mut known_senders: BTreeSet<Address> = genesis_config
            .initial_accounts
            .iter()
            .map(|(a, _)| *a)
            .collect();
        for block in &blocks {
            for tx in &block.tx_list {
                seen.insert(tx.tx_id);
                if let TxKind::Register { record } = &tx.kind {
                    known_senders.insert(record.account_address);
                    known_senders.insert(tx.sender);
                }
            }
        }
        Ok(Chain {
            genesis_config,
            blocks,
            pending: Vec::new(),
            seen,
            known_senders,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    FullMiner,
    LightClient,
    Proxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnodeEntry {
    pub address: Address,
    pub endpoint: String,
}

/// A non-mining node holding a synchronized copy of the chain. Discovery is
/// disabled: the node syncs only with peers on its enode whitelist.
#[derive(Debug, Clone)]
pub struct LightNode {
    pub address: Address,
    pub role: NodeRole,
    pub whitelist: Vec<EnodeEntry>,
    pub blocks: Vec<Block>,
}

impl LightNode {
    pub fn new(address: Address, role: NodeRole, whitelist: Vec<EnodeEntry>) -> Self {
        LightNode {
            address,
            role,
            whitelist,
            blocks: Vec::new(),
        }
    }

    pub fn height(&self) -> Option<u64> {
        self.blocks.last().map(|b| b.height)
    }

    /// Pull the blocks this node is missing from a full node. Returns how
    /// many blocks were transferred. The copy is taken verbatim, so the local
    /// prefix is byte-identical to the peer's.
    pub fn sync(&mut self, peer: &Address, full: &Chain) -> Result<usize, LedgerError> {
        if !self.whitelist.iter().any(|e| e.address == *peer) {
            return Err(LedgerError::PeerNotWhitelisted(*peer));
        }
        let have = self.blocks.len();
        for (i, block) in full.blocks.iter().take(have).enumerate() {
            if self.blocks[i].block_hash != block.block_hash {
                return Err(LedgerError::SyncMismatch { height: i as u64 });
            }
        }
        let mut transferred = 0;
        for block in full.blocks.iter().skip(have) {
            if let Some(last) = self.blocks.last() {
                if block.prev_hash != last.block_hash {
                    return Err(LedgerError::SyncMismatch { height: block.height });
                }
            }
            self.blocks.push(block.clone());
            transferred += 1;
        }
        Ok(transferred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::DeviceAttrs;
    use crate::resources::ResourceRange;
    use std::collections::BTreeSet as Set;
    use std::time::Instant;

    fn test_config(difficulty_bits: u32) -> GenesisConfig {
        GenesisConfig {
            difficulty_bits,
            ..GenesisConfig::default()
        }
    }

    fn register_tx(n: u64, t: u64) -> Transaction {
        let addr = Address::derive(&format!("device:{n}"));
        let attrs = DeviceAttrs {
            network_port: 42024,
            io_data_types: Set::from(["text".into()]),
            bandwidth_request: ResourceRange::new(1.0, 5.0),
            cpu_request: ResourceRange::new(1.0, 5.0),
            memory_request: ResourceRange::new(1.0, 5.0),
            storage_request: ResourceRange::new(1.0, 5.0),
            mac_address: format!("00-14-22-01-23-{n:02}"),
            priority: 1,
            legacy: false,
            allowed_destinations: Set::new(),
        };
        let record = DeviceRecord::from_attrs(addr, &attrs, 100).unwrap();
        Transaction::build(addr, n, TxKind::Register { record }, t)
    }

    #[test]
    fn zero_difficulty_genesis_mines_on_first_nonce() {
        let chain = Chain::init_genesis(test_config(0)).unwrap();
        assert_eq!(chain.blocks[0].nonce, 0);
        assert_eq!(chain.height(), 0);
        assert!(chain.blocks[0].prev_hash.is_zero());
    }

    #[test]
    fn identical_config_gives_identical_genesis() {
        let a = Chain::init_genesis(test_config(4)).unwrap();
        let b = Chain::init_genesis(test_config(4)).unwrap();
        assert_eq!(a.blocks[0].block_hash, b.blocks[0].block_hash);
        let c = Chain::init_genesis(test_config(5)).unwrap();
        assert_ne!(a.blocks[0].block_hash, c.blocks[0].block_hash);
    }

    #[test]
    fn default_difficulty_mines_quickly() {
        // Calibration for the "reasonable low level" default: 12 bits must
        // mine well under a second on desk hardware.
        let start = Instant::now();
        let mut chain = Chain::init_genesis(test_config(DEFAULT_DIFFICULTY_BITS)).unwrap();
        chain.submit_transaction(register_tx(0, 1)).unwrap();
        chain.mine_pending(&chain.genesis_config.miner.clone()).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut config = test_config(64);
        assert!(Chain::init_genesis(config.clone()).is_err());
        config.difficulty_bits = 4;
        config.chain_id = String::new();
        assert!(Chain::init_genesis(config).is_err());
    }

    #[test]
    fn submit_is_idempotent_by_tx_id() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        let tx = register_tx(1, 1);
        let receipt = chain.submit_transaction(tx.clone()).unwrap();
        assert_eq!(receipt.pending, 1);
        let err = chain.submit_transaction(tx).unwrap_err();
        assert!(matches!(err, LedgerError::DuplicateTransaction(_)));
        assert_eq!(chain.pending_len(), 1);
    }

    #[test]
    fn unknown_sender_is_rejected_for_non_register_kinds() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        let stranger = Address::derive("stranger");
        let tx = Transaction::build(
            stranger,
            0,
            TxKind::BlockDevice {
                device: stranger,
                blocked: true,
            },
            1,
        );
        assert!(matches!(
            chain.submit_transaction(tx),
            Err(LedgerError::UnknownSender(..))
        ));
    }

    #[test]
    fn tampered_transaction_fails_verification() {
        let mut tx = register_tx(2, 1);
        tx.timestamp = 99;
        assert!(!tx.verify());
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        assert!(matches!(
            chain.submit_transaction(tx),
            Err(LedgerError::InvalidTransaction(_))
        ));
    }

    #[test]
    fn mine_empty_pool_is_none() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        let miner = chain.genesis_config.miner;
        assert!(chain.mine_pending(&miner).unwrap().is_none());
        assert_eq!(chain.height(), 0);
    }

    #[test]
    fn non_miner_cannot_mine() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        chain.submit_transaction(register_tx(3, 1)).unwrap();
        let outsider = Address::derive("outsider");
        assert!(matches!(
            chain.mine_pending(&outsider),
            Err(LedgerError::NotMiner(_))
        ));
    }

    #[test]
    fn small_pool_mines_single_block() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        for n in 0..3 {
            chain.submit_transaction(register_tx(n, 1)).unwrap();
        }
        let miner = chain.genesis_config.miner;
        let block = chain.mine_pending(&miner).unwrap().unwrap();
        assert_eq!(block.tx_list.len(), 3);
        assert_eq!(chain.pending_len(), 0);
    }

    #[test]
    fn five_hundred_registrations_pack_into_three_blocks() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        for n in 0..500 {
            chain.submit_transaction(register_tx(n, 1)).unwrap();
        }
        let miner = chain.genesis_config.miner;
        let mut sizes = Vec::new();
        while let Some(block) = chain.mine_pending(&miner).unwrap() {
            sizes.push(block.tx_list.len());
        }
        assert_eq!(sizes, vec![208, 208, 84]);
        assert_eq!(chain.height(), 3);
    }

    #[test]
    fn validate_detects_tampering() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        let miner = chain.genesis_config.miner;
        for n in 0..10u64 {
            chain.submit_transaction(register_tx(n, n)).unwrap();
            chain.mine_pending(&miner).unwrap();
        }
        assert!(chain.validate_chain().valid);

        let mut tampered = chain.clone();
        if let TxKind::Register { record } = &mut tampered.blocks[4].tx_list[0].kind {
            record.credit = 9999;
        }
        let audit = tampered.validate_chain();
        assert!(!audit.valid);
        assert_eq!(audit.first_violation, Some(4));

        let genesis_only = Chain::init_genesis(test_config(0)).unwrap();
        assert!(genesis_only.validate_chain().valid);
    }

    #[test]
    fn determinism_two_runs_bit_identical() {
        let build = || {
            let mut chain = Chain::init_genesis(test_config(6)).unwrap();
            let miner = chain.genesis_config.miner;
            for n in 0..20u64 {
                chain.submit_transaction(register_tx(n, n / 4)).unwrap();
                if n % 4 == 3 {
                    chain.mine_pending(&miner).unwrap();
                }
            }
            chain.mine_pending(&miner).unwrap();
            chain
        };
        let a = build();
        let b = build();
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(canonical_json(&a.blocks), canonical_json(&b.blocks));
    }

    #[test]
    fn light_node_sync() {
        let mut chain = Chain::init_genesis(test_config(0)).unwrap();
        let miner = chain.genesis_config.miner;
        for n in 0..5u64 {
            chain.submit_transaction(register_tx(n, n)).unwrap();
            chain.mine_pending(&miner).unwrap();
        }
        // chain has genesis + 5 blocks
        let mut node = LightNode::new(
            Address::derive("pi:0"),
            NodeRole::LightClient,
            vec![EnodeEntry {
                address: miner,
                endpoint: "edge:30303".into(),
            }],
        );
        assert_eq!(node.sync(&miner, &chain).unwrap(), 6);
        assert_eq!(node.height(), Some(5));
        assert_eq!(node.sync(&miner, &chain).unwrap(), 0);
        chain.submit_transaction(register_tx(9, 9)).unwrap();
        chain.mine_pending(&miner).unwrap();
        assert_eq!(node.sync(&miner, &chain).unwrap(), 1);
        assert_eq!(node.blocks, chain.blocks);

        let unknown = Address::derive("intruder");
        assert!(matches!(
            node.sync(&unknown, &chain),
            Err(LedgerError::PeerNotWhitelisted(_))
        ));
    }

    #[test]
    fn chain_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.jsonl");
        let mut chain = Chain::init_genesis(test_config(2)).unwrap();
        let miner = chain.genesis_config.miner;
        for n in 0..6u64 {
            chain.submit_transaction(register_tx(n, n)).unwrap();
        }
        chain.mine_pending(&miner).unwrap();
        chain.write_file(&path).unwrap();

        let loaded = Chain::read_file(&path).unwrap();
        assert_eq!(loaded.blocks, chain.blocks);
        assert_eq!(loaded.genesis_config, chain.genesis_config);
        assert!(loaded.validate_chain().valid);

        // resubmission of an already-mined tx is rejected after reload
        let mut loaded = loaded;
        let tx = chain.blocks[1].tx_list[0].clone();
        assert!(matches!(
            loaded.submit_transaction(tx),
            Err(LedgerError::DuplicateTransaction(_))
        ));
    }
}
