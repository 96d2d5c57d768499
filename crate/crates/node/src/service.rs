//! Node state independent of the HTTP layer.
//!
//! Reads take a short read lock on the current [`ChainView`]. All writes go
//! through [`Node::commit_tick`] (sequencer) or [`Node::sync_once`]
//! (follower), each called from a single background thread.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use neuroledger_core::contract::{
    ContractAddress, Decision, DenyReason, IdentityRecord, ReportId, Resource, Role, WorldState,
};
use neuroledger_core::crypto::{hash_bytes, Address, Digest, KeyPair};
use neuroledger_core::ledger::{
    create_genesis, seal_block, verify_encoded_chain, Block, BootstrapIdentity, ChainConfig, LedgerError,
    VerificationReport,
};
use neuroledger_core::replication::{sync_step, Alarm, BlockTransport, Follower, RetryPolicy, SyncError};
use neuroledger_core::store::{ObjectStore, StorageKey, StoreError};
use neuroledger_core::tx::SignedTransaction;
use parking_lot::{Mutex, RwLock};

use crate::api::{ContractView, NodeStatus, ReportMeta, ReportView, SubmitResponse, TxState, TxStatus};
use crate::auth::{AuthError, SignedReadRequest};
use crate::config::{Mode, NodeConfig};
use crate::keyfile::{self, KeyFileError};
use crate::now_ms;
use crate::persist::{BlockStore, ChainRecord, PersistError};
use crate::pool::TxPool;

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Key(#[from] KeyFileError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("local chain fails verification at height {}: {}", .0.height, .0.reason)]
    Corrupt(Alarm),
}

/// Immutable snapshot of the verified chain.
#[derive(Debug, Default)]
pub struct ChainView {
    pub blocks: Vec<Block>,
    pub state: Arc<WorldState>,
    pub tx_heights: HashMap<Digest, u64>,
}

impl ChainView {
    fn push(&mut self, block: Block, state: WorldState) {
        for tx in &block.txs {
            if let Ok(d) = tx.digest() {
                self.tx_heights.insert(d, block.height);
            }
        }
        self.blocks.push(block);
        self.state = Arc::new(state);
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("view always holds genesis")
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum ReadError {
    Unauthenticated(AuthError),
    Denied(DenyReason),
    NotFound(String),
    Integrity(String),
}

pub struct Node {
    pub config: NodeConfig,
    chain: ChainConfig,
    genesis_hash: Digest,
    keys: Option<KeyPair>,
    block_store: BlockStore,
    objects: ObjectStore,
    view: RwLock<ChainView>,
    pool: Mutex<TxPool>,
    follower: Mutex<Follower>,
}

fn operator_profile(chain_id: &str) -> Digest {
    hash_bytes(format!("operator:{chain_id}").as_bytes())
}

impl Node {
    pub fn open(config: NodeConfig) -> Result<Node, NodeError> {
        let block_store = BlockStore::open(&config.data_dir)?;
        let objects = ObjectStore::open(&config.data_dir)?;
        let record = block_store.read_chain_record()?;
        let (keys, chain, genesis_hash) = match config.mode {
            Mode::Sequencer => {
                let path =
                    config.key_file.as_ref().ok_or_else(|| NodeError::Config("sequencer needs key_file".into()))?;
                let keys = keyfile::load(path)?;
                let chain = ChainConfig {
                    chain_id: config.chain_id.clone(),
                    sequencer: keys.address(),
                    block_interval_ms: config.block_interval_ms,
                };
                let genesis_hash = match &record {
                    Some(r) => {
                        if r.config.chain_id != chain.chain_id || r.config.sequencer != chain.sequencer {
                            return Err(NodeError::Config(format!(
                                "data directory belongs to chain {} sequenced by {}",
                                r.config.chain_id, r.config.sequencer
                            )));
                        }
                        r.genesis_hash
                    }
                    None => {
                        let boot = [BootstrapIdentity::new(Role::Operator, &keys, operator_profile(&chain.chain_id))];
                        let (genesis, _) = create_genesis(&chain, &boot, &keys, now_ms())?;
                        block_store.append(&genesis)?;
                        block_store.write_chain_record(&ChainRecord {
                            config: chain.clone(),
                            genesis_hash: genesis.block_hash,
                        })?;
                        log::info!("created genesis {} for chain {}", genesis.block_hash, chain.chain_id);
                        genesis.block_hash
                    }
                };
                if let Some(t) = config.trusted_genesis.filter(|t| *t != genesis_hash) {
                    return Err(NodeError::Config(format!("local genesis {genesis_hash} differs from trusted {t}")));
                }
                (Some(keys), chain, genesis_hash)
            }
            Mode::Follower => {
                let chain = ChainConfig {
                    chain_id: config.chain_id.clone(),
                    sequencer: config
                        .sequencer_address
                        .ok_or_else(|| NodeError::Config("follower needs sequencer_address".into()))?,
                    block_interval_ms: config.block_interval_ms,
                };
                let genesis_hash =
                    config.trusted_genesis.ok_or_else(|| NodeError::Config("follower needs trusted_genesis".into()))?;
                match &record {
                    Some(r)
                        if r.config.chain_id != chain.chain_id
                            || r.config.sequencer != chain.sequencer
                            || r.genesis_hash != genesis_hash =>
                    {
                        return Err(NodeError::Config("data directory belongs to a different chain".into()))
                    }
                    Some(_) => {}
                    None => block_store.write_chain_record(&ChainRecord { config: chain.clone(), genesis_hash })?,
                }
                (None, chain, genesis_hash)
            }
        };

        let blocks = block_store.load_all()?;
        let follower = Follower::restore(&chain, genesis_hash, &blocks).map_err(NodeError::Corrupt)?;
        let mut view = ChainView::default();
        for b in &blocks {
            for tx in &b.txs {
                if let Ok(d) = tx.digest() {
                    view.tx_heights.insert(d, b.height);
                }
            }
        }
        view.blocks = blocks;
        view.state = Arc::new(follower.state().clone());
        let seen: HashSet<Digest> = view.tx_heights.keys().copied().collect();
        let next = view.blocks.len() as u64;
        let pool = TxPool::new(follower.state().clone(), next, seen);
        Ok(Node {
            config,
            chain,
            genesis_hash,
            keys,
            block_store,
            objects,
            view: RwLock::new(view),
            pool: Mutex::new(pool),
            follower: Mutex::new(follower),
        })
    }

    pub fn chain_config(&self) -> &ChainConfig {
        &self.chain
    }

    pub fn genesis_hash(&self) -> Digest {
        self.genesis_hash
    }

    pub fn objects(&self) -> &ObjectStore {
        &self.objects
    }

    pub fn height(&self) -> u64 {
        self.view.read().head().height
    }

    pub fn state(&self) -> Arc<WorldState> {
        self.view.read().state.clone()
    }

    pub fn blocks_from(&self, from: u64, limit: usize) -> Vec<Block> {
        let v = self.view.read();
        v.blocks.iter().skip(from.min(usize::MAX as u64) as usize).take(limit).cloned().collect()
    }

    pub fn block(&self, height: u64) -> Option<Block> {
        self.view.read().blocks.get(usize::try_from(height).ok()?).cloned()
    }

    pub fn status(&self) -> NodeStatus {
        let (height, head_hash, state_root) = {
            let v = self.view.read();
            let h = v.head();
            (h.height, h.block_hash, h.state_root)
        };
        let pending = self.pool.lock().len() as u64;
        let follower = self.follower.lock();
        NodeStatus {
            chain_id: self.chain.chain_id.clone(),
            mode: self.config.mode.to_string(),
            sequencer: self.chain.sequencer,
            genesis_hash: self.genesis_hash,
            height,
            head_hash,
            state_root,
            pending,
            halted: follower.is_halted(),
            alarms: follower.alarms().to_vec(),
        }
    }

    pub fn submit(&self, tx: SignedTransaction) -> SubmitResponse {
        let mut pool = self.pool.lock();
        match pool.admit(tx, now_ms()) {
            Ok(d) => SubmitResponse { accepted: true, tx_digest: Some(d), reason: None, detail: None },
            Err(r) => {
                log::info!("rejected transaction: {}", r.detail());
                SubmitResponse {
                    accepted: false,
                    tx_digest: None,
                    reason: Some(r.code().into()),
                    detail: Some(r.detail()),
                }
            }
        }
    }

    pub fn tx_status(&self, digest: Digest) -> TxStatus {
        // the pool lock spans a whole seal, so a drained tx is never seen in neither place
        let pool = self.pool.lock();
        if let Some(&h) = self.view.read().tx_heights.get(&digest) {
            return TxStatus { tx_digest: digest, status: TxState::Committed, height: Some(h) };
        }
        let status = if pool.is_pending(&digest) { TxState::Pending } else { TxState::Unknown };
        TxStatus { tx_digest: digest, status, height: None }
    }

    /// Seals everything pending into one block. Returns `None` when idle.
    pub fn commit_tick(&self) -> Result<Option<Block>, NodeError> {
        let Some(keys) = &self.keys else { return Ok(None) };
        let mut pool = self.pool.lock();
        if pool.is_empty() {
            return Ok(None);
        }
        let txs = pool.drain();
        let (parent, state) = {
            let v = self.view.read();
            (v.head().clone(), v.state.clone())
        };
        let timestamp = now_ms().max(parent.timestamp);
        let out = match seal_block(&parent, &state, txs, keys, timestamp) {
            Ok(out) => out,
            Err(e) => {
                pool.committed((*state).clone(), parent.height + 1);
                return match e {
                    LedgerError::EmptyBlock => Ok(None),
                    e => Err(e.into()),
                };
            }
        };
        for (tx, err) in &out.rejected {
            log::warn!("admitted transaction from {} failed at sealing: {err}", tx.sender);
        }
        if let Err(e) = self.block_store.append(&out.block) {
            pool.committed((*state).clone(), parent.height + 1);
            return Err(e.into());
        }
        // keep the follower mirror in step so restarts and status agree
        let report = self.follower.lock().ingest(std::slice::from_ref(&out.block));
        if let Some(alarm) = report.alarm {
            log::error!("own block failed verification: {}", alarm.reason);
        }
        self.view.write().push(out.block.clone(), out.state.clone());
        pool.committed(out.state, out.block.height + 1);
        log::info!("sealed block {} with {} txs", out.block.height, out.block.txs.len());
        Ok(Some(out.block))
    }

    /// One follower pull. Verified blocks are persisted and published.
    pub fn sync_once<T: BlockTransport + ?Sized>(
        &self,
        transport: &mut T,
        policy: &RetryPolicy,
    ) -> Result<Vec<u64>, SyncError> {
        let mut follower = self.follower.lock();
        let out = sync_step(&mut follower, transport, policy)?;
        if out.appended.is_empty() {
            return Ok(out.appended);
        }
        let state = follower.state().clone();
        let new_blocks: Vec<Block> = out.appended.iter().map(|h| follower.blocks()[*h as usize].clone()).collect();
        drop(follower);
        let mut v = self.view.write();
        for b in new_blocks {
            if let Err(e) = self.block_store.append(&b) {
                log::error!("cannot persist block {}: {e}", b.height);
            }
            for tx in &b.txs {
                if let Ok(d) = tx.digest() {
                    v.tx_heights.insert(d, b.height);
                }
            }
            v.blocks.push(b);
        }
        v.state = Arc::new(state.clone());
        let next = v.blocks.len() as u64;
        drop(v);
        let mut pool = self.pool.lock();
        pool.drain();
        pool.committed(state, next);
        Ok(out.appended)
    }

    /// Re-reads the block files from disk and audits them against the trusted genesis.
    pub fn verify(&self) -> Result<VerificationReport, NodeError> {
        let files = self.block_store.read_raw()?;
        Ok(verify_encoded_chain(&self.chain, &self.genesis_hash, &files))
    }

    pub fn identity(&self, address: &Address) -> Option<IdentityRecord> {
        self.state().identity(address).cloned()
    }

    /// Looks up a contract by its own address or by its owner's address.
    pub fn contract(&self, address: &Address) -> Option<ContractView> {
        let state = self.state();
        let (contract_address, contract) = match state.contracts.get(&ContractAddress(*address)) {
            Some(c) => (ContractAddress(*address), c.clone()),
            None => {
                let c = state.identity(address)?.contract_address?;
                (c, state.contracts.get(&c)?.clone())
            }
        };
        Some(ContractView {
            contract_address,
            manager: state.manager_of.get(&contract.owner).copied(),
            state: contract,
        })
    }

    pub fn report_meta(&self, report_id: &ReportId) -> Option<ReportMeta> {
        let state = self.state();
        let contract = state.report_owner(report_id)?;
        let records = &contract.reports[report_id];
        Some(ReportMeta {
            report_id: *report_id,
            owner: contract.owner,
            manager: state.manager_of.get(&contract.owner).copied(),
            appointment: contract.appointments.values().find(|a| a.report_id == *report_id).cloned(),
            records: records.len() as u64,
            latest_updated_at: records.last().map(|r| r.updated_at),
        })
    }

    pub fn authenticate(&self, header: Option<&str>, path: &str) -> Result<Address, ReadError> {
        let req = header
            .ok_or(AuthError::Malformed)
            .and_then(SignedReadRequest::from_header)
            .map_err(ReadError::Unauthenticated)?;
        let state = self.state();
        req.authenticate(path, now_ms(), |a| state.identity(a).map(|r| r.public_key))
            .map_err(ReadError::Unauthenticated)
    }

    pub fn read_report(&self, requester: &Address, report_id: &ReportId) -> Result<ReportView, ReadError> {
        let state = self.state();
        match state.check_permission(requester, &Resource::Report { report_id: *report_id }) {
            Decision::Allow => {}
            Decision::Deny(DenyReason::NotFound) => return Err(ReadError::NotFound(format!("report {report_id}"))),
            Decision::Deny(r) => return Err(ReadError::Denied(r)),
        }
        let contract = state.report_owner(report_id).expect("permission implies existence");
        let records = contract.reports[report_id]
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.wrapped_keys.retain(|addr, _| addr == requester);
                r
            })
            .collect();
        Ok(ReportView { report_id: *report_id, owner: contract.owner, records })
    }

    pub fn read_blob(&self, requester: &Address, key: &StorageKey) -> Result<Vec<u8>, ReadError> {
        match self.state().check_blob_access(requester, key) {
            Decision::Allow => {}
            Decision::Deny(DenyReason::NotFound) => return Err(ReadError::NotFound(format!("blob {key}"))),
            Decision::Deny(r) => return Err(ReadError::Denied(r)),
        }
        match self.objects.get(key) {
            Ok(bytes) => Ok(bytes),
            Err(StoreError::NotFound(_)) => {
                Err(ReadError::NotFound(format!("blob {key} is indexed but not stored here")))
            }
            Err(StoreError::Integrity(_)) => {
                Err(ReadError::Integrity(format!("stored blob {key} does not match its key")))
            }
            Err(e) => Err(ReadError::Integrity(e.to_string())),
        }
    }
}
