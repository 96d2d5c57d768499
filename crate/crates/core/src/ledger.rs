//! Hash-chained blocks, sealing, verification and replay.
//!
//! ```text
//! block_hash   = H({height, prev_hash, timestamp, txs, state_root, proposer, proposer_sig})
//! proposer_sig = Sign(H({height, prev_hash, timestamp, txs, state_root, proposer}))
//! ```
//!
//! A single sequencer seals every block. Followers and auditors re-derive
//! everything from a trusted genesis hash.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::canonical::{from_canonical_slice, CanonicalError};
use crate::contract::{ContractError, ExecContext, Role, TxEffect, WorldState};
use crate::crypto::{hash_canonical, verify, Address, Digest, KeyPair, PublicKey, Signature};
use crate::tx::{SignedTransaction, TxBody};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub chain_id: String,
    pub sequencer: Address,
    pub block_interval_ms: u64,
}

/// Identity written into genesis by the chain operator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapIdentity {
    pub role: Role,
    pub public_key: PublicKey,
    pub exchange_public: PublicKey,
    pub profile_hash: Digest,
}

impl BootstrapIdentity {
    pub fn new(role: Role, keys: &KeyPair, profile_hash: Digest) -> BootstrapIdentity {
        BootstrapIdentity { role, public_key: keys.public_key, exchange_public: keys.exchange_public, profile_hash }
    }

    pub fn address(&self) -> Address {
        Address::from_public_key(&self.public_key)
    }

    fn register_tx(&self) -> SignedTransaction {
        SignedTransaction {
            sender: self.address(),
            nonce: 0,
            body: TxBody::Register {
                role: self.role,
                public_key: self.public_key,
                exchange_public: self.exchange_public,
                profile_hash: self.profile_hash,
            },
            signature: Signature::ZERO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub txs: Vec<SignedTransaction>,
    pub state_root: Digest,
    pub proposer: Address,
    pub proposer_sig: Signature,
    pub block_hash: Digest,
}

#[derive(Serialize)]
struct ProposalView<'a> {
    height: u64,
    prev_hash: &'a Digest,
    timestamp: u64,
    txs: &'a [SignedTransaction],
    state_root: &'a Digest,
    proposer: &'a Address,
}

#[derive(Serialize)]
struct SealedView<'a> {
    height: u64,
    prev_hash: &'a Digest,
    timestamp: u64,
    txs: &'a [SignedTransaction],
    state_root: &'a Digest,
    proposer: &'a Address,
    proposer_sig: &'a Signature,
}

impl Block {
    /// Digest the proposer signs.
    pub fn proposal_digest(&self) -> Result<Digest, CanonicalError> {
        hash_canonical(&ProposalView {
            height: self.height,
            prev_hash: &self.prev_hash,
            timestamp: self.timestamp,
            txs: &self.txs,
            state_root: &self.state_root,
            proposer: &self.proposer,
        })
    }

    /// Recomputes `block_hash` from the other fields.
    pub fn compute_hash(&self) -> Result<Digest, CanonicalError> {
        hash_canonical(&SealedView {
            height: self.height,
            prev_hash: &self.prev_hash,
            timestamp: self.timestamp,
            txs: &self.txs,
            state_root: &self.state_root,
            proposer: &self.proposer,
            proposer_sig: &self.proposer_sig,
        })
    }

    fn sealed(
        height: u64,
        prev_hash: Digest,
        timestamp: u64,
        txs: Vec<SignedTransaction>,
        state_root: Digest,
        proposer: &KeyPair,
    ) -> Result<Block, CanonicalError> {
        let mut block = Block {
            height,
            prev_hash,
            timestamp,
            txs,
            state_root,
            proposer: proposer.address(),
            proposer_sig: Signature::ZERO,
            block_hash: Digest::ZERO,
        };
        block.proposer_sig = proposer.sign(&block.proposal_digest()?);
        block.block_hash = block.compute_hash()?;
        Ok(block)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("proposer {proposer} is not the chain sequencer {sequencer}")]
    Authority { proposer: Address, sequencer: Address },
    #[error("no transaction was accepted; nothing to seal")]
    EmptyBlock,
    #[error("timestamp {got} precedes parent timestamp {parent}")]
    TimestampRegression { parent: u64, got: u64 },
    #[error("block does not extend the chain head: {0}")]
    Linkage(String),
    #[error("replay diverged at height {height}: {reason}")]
    ReplayDivergence { height: u64, reason: String },
    #[error(transparent)]
    Encoding(#[from] CanonicalError),
}

/// Initial world state before any genesis transaction is applied.
pub fn base_state(config: &ChainConfig) -> WorldState {
    WorldState::new(config.chain_id.clone(), config.sequencer)
}

/// Builds the height-0 block that registers the bootstrap identities.
pub fn create_genesis(
    config: &ChainConfig,
    bootstrap: &[BootstrapIdentity],
    sequencer_keys: &KeyPair,
    timestamp: u64,
) -> Result<(Block, WorldState), LedgerError> {
    if sequencer_keys.address() != config.sequencer {
        return Err(LedgerError::Authority { proposer: sequencer_keys.address(), sequencer: config.sequencer });
    }
    let mut seen = BTreeSet::new();
    for b in bootstrap {
        if !seen.insert(b.address()) {
            return Err(LedgerError::Config(format!("duplicate bootstrap identity {}", b.address())));
        }
    }
    match bootstrap.iter().find(|b| b.address() == config.sequencer) {
        Some(b) if b.role == Role::Operator => {}
        Some(_) => return Err(LedgerError::Config("sequencer must be bootstrapped with the Operator role".into())),
        None => return Err(LedgerError::Config("bootstrap identities must include the sequencer".into())),
    }
    let mut state = base_state(config);
    let ctx = ExecContext { height: 0, block_time: timestamp };
    let txs: Vec<_> = bootstrap.iter().map(BootstrapIdentity::register_tx).collect();
    for tx in &txs {
        state.execute(tx, ctx).map_err(|e| LedgerError::Config(format!("bootstrap {}: {e}", tx.sender)))?;
    }
    let block = Block::sealed(0, Digest::ZERO, timestamp, txs, state.state_root()?, sequencer_keys)?;
    Ok((block, state))
}

/// Result of sealing: the new block, the post-state and per-transaction outcomes.
#[derive(Debug)]
pub struct SealOutcome {
    pub block: Block,
    pub state: WorldState,
    pub effects: Vec<TxEffect>,
    pub rejected: Vec<(SignedTransaction, ContractError)>,
}

/// Applies `txs` in order on top of `parent`/`state`; rejected transactions
/// are dropped individually and reported in the outcome.
pub fn seal_block(
    parent: &Block,
    state: &WorldState,
    txs: Vec<SignedTransaction>,
    proposer: &KeyPair,
    timestamp: u64,
) -> Result<SealOutcome, LedgerError> {
    if proposer.address() != state.sequencer {
        return Err(LedgerError::Authority { proposer: proposer.address(), sequencer: state.sequencer });
    }
    if timestamp < parent.timestamp {
        return Err(LedgerError::TimestampRegression { parent: parent.timestamp, got: timestamp });
    }
    let height = parent.height + 1;
    let ctx = ExecContext { height, block_time: timestamp };
    let mut next = state.clone();
    let mut accepted = Vec::with_capacity(txs.len());
    let mut effects = Vec::with_capacity(txs.len());
    let mut rejected = Vec::new();
    for tx in txs {
        match next.execute(&tx, ctx) {
            Ok(effect) => {
                accepted.push(tx);
                effects.push(effect);
            }
            Err(e) => {
                log::info!("height {height}: rejected {} from {}: {e}", tx.tx_type(), tx.sender);
                rejected.push((tx, e));
            }
        }
    }
    if accepted.is_empty() {
        return Err(LedgerError::EmptyBlock);
    }
    let block = Block::sealed(height, parent.block_hash, timestamp, accepted, next.state_root()?, proposer)?;
    Ok(SealOutcome { block, state: next, effects, rejected })
}

/// Ordered blocks plus the configuration they were produced under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub config: ChainConfig,
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn new(config: ChainConfig, genesis: Block) -> Chain {
        Chain { config, blocks: vec![genesis] }
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("chain holds at least genesis")
    }

    pub fn height(&self) -> u64 {
        self.head().height
    }

    pub fn genesis_hash(&self) -> Digest {
        self.blocks[0].block_hash
    }

    /// Appends a block after checking structural linkage only.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        let head = self.head();
        if block.height != head.height + 1 {
            return Err(LedgerError::Linkage(format!("height {} after head {}", block.height, head.height)));
        }
        if block.prev_hash != head.block_hash {
            return Err(LedgerError::Linkage(format!("prev_hash of block {} does not match head", block.height)));
        }
        self.blocks.push(block);
        Ok(())
    }
}

/// Outcome of checking one block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub height: u64,
    pub hash_ok: bool,
    /// Linked to the trusted genesis through verified ancestors.
    pub link_ok: bool,
    pub authority_ok: bool,
    pub txs_ok: bool,
    pub state_ok: bool,
    pub timestamp_ok: bool,
    pub errors: Vec<String>,
}

impl BlockCheck {
    fn failed(height: u64, error: String) -> BlockCheck {
        BlockCheck {
            height,
            hash_ok: false,
            link_ok: false,
            authority_ok: false,
            txs_ok: false,
            state_ok: false,
            timestamp_ok: false,
            errors: vec![error],
        }
    }

    pub fn passed(&self) -> bool {
        self.hash_ok && self.link_ok && self.authority_ok && self.txs_ok && self.state_ok && self.timestamp_ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub first_failure: Option<u64>,
    pub blocks: Vec<BlockCheck>,
}

impl VerificationReport {
    pub fn failed_heights(&self) -> Vec<u64> {
        self.blocks.iter().filter(|b| !b.passed()).map(|b| b.height).collect()
    }
}

/// Incremental verifier: feeds blocks one at a time against a running state.
///
/// Used both for whole-chain audits and by followers before each append.
#[derive(Clone, Debug)]
pub struct BlockVerifier {
    config: ChainConfig,
    trusted_genesis: Digest,
    state: WorldState,
    prev: Option<(u64, Digest, u64, bool)>,
}

impl BlockVerifier {
    pub fn new(config: &ChainConfig, trusted_genesis: Digest) -> BlockVerifier {
        BlockVerifier { config: config.clone(), trusted_genesis, state: base_state(config), prev: None }
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn next_height(&self) -> u64 {
        self.prev.map_or(0, |(h, ..)| h + 1)
    }

    fn sequencer_key(&self) -> Option<PublicKey> {
        self.state.identity(&self.config.sequencer).map(|r| r.public_key)
    }

    /// Checks `block` against everything seen so far, applying its
    /// transactions to the running state regardless of the outcome.
    pub fn check(&mut self, block: &Block) -> BlockCheck {
        let mut errors = Vec::new();
        let recomputed = block.compute_hash();
        let hash_ok = matches!(&recomputed, Ok(h) if *h == block.block_hash);
        if !hash_ok {
            errors.push("block_hash does not match contents".to_string());
        }
        let link_ok = match self.prev {
            None => {
                let ok = block.height == 0
                    && block.prev_hash == Digest::ZERO
                    && hash_ok
                    && block.block_hash == self.trusted_genesis;
                if !ok {
                    errors.push("genesis does not match the trusted genesis hash".into());
                }
                ok
            }
            Some((h, parent_hash, _, parent_ok)) => {
                let mut ok = true;
                if block.height != h + 1 {
                    errors.push(format!("height {} does not follow {h}", block.height));
                    ok = false;
                }
                if block.prev_hash != parent_hash {
                    errors.push("prev_hash does not match parent".into());
                    ok = false;
                }
                if !parent_ok {
                    errors.push("ancestor failed verification".into());
                    ok = false;
                }
                ok
            }
        };
        let timestamp_ok = match self.prev {
            Some((_, _, ts, _)) if block.timestamp < ts => {
                errors.push(format!("timestamp {} precedes parent {ts}", block.timestamp));
                false
            }
            _ => true,
        };

        let ctx = ExecContext { height: block.height, block_time: block.timestamp };
        let mut txs_ok = true;
        for (i, tx) in block.txs.iter().enumerate() {
            if ctx.is_genesis() && !matches!(tx.body, TxBody::Register { .. }) {
                errors.push(format!("tx {i}: genesis may only register identities"));
                txs_ok = false;
                continue;
            }
            if let Err(e) = self.state.execute(tx, ctx) {
                errors.push(format!("tx {i}: {e}"));
                txs_ok = false;
            }
        }
        if block.txs.is_empty() && !ctx.is_genesis() {
            errors.push("block carries no transactions".into());
            txs_ok = false;
        }

        let authority_ok = block.proposer == self.config.sequencer
            && match (self.sequencer_key(), block.proposal_digest()) {
                (Some(pk), Ok(d)) => verify(&pk, &d, &block.proposer_sig),
                _ => false,
            };
        if !authority_ok {
            errors.push(format!("proposer {} is not authorized or signature invalid", block.proposer));
        }

        let state_ok = matches!(self.state.state_root(), Ok(r) if r == block.state_root);
        if !state_ok {
            errors.push("state_root does not match re-execution".into());
        }

        let check =
            BlockCheck { height: block.height, hash_ok, link_ok, authority_ok, txs_ok, state_ok, timestamp_ok, errors };
        let parent_hash = recomputed.unwrap_or(block.block_hash);
        self.prev = Some((block.height, parent_hash, block.timestamp, check.passed()));
        check
    }
}

/// Full audit of `chain` against a trusted genesis hash. Never fails; every
/// problem is an entry in the report.
pub fn verify_chain(chain: &Chain, trusted_genesis_hash: &Digest) -> VerificationReport {
    let mut verifier = BlockVerifier::new(&chain.config, *trusted_genesis_hash);
    let blocks: Vec<BlockCheck> = chain.blocks.iter().map(|b| verifier.check(b)).collect();
    let first_failure = blocks.iter().find(|b| !b.passed()).map(|b| b.height);
    VerificationReport { ok: first_failure.is_none() && !blocks.is_empty(), first_failure, blocks }
}

/// Audit of serialized block files, in height order. A file that does not
/// decode fails at its position and every later block fails linkage.
pub fn verify_encoded_chain(
    config: &ChainConfig,
    trusted_genesis_hash: &Digest,
    files: &[Vec<u8>],
) -> VerificationReport {
    let mut verifier = BlockVerifier::new(config, *trusted_genesis_hash);
    let mut blocks = Vec::with_capacity(files.len());
    let mut unreadable = None;
    for (i, bytes) in files.iter().enumerate() {
        let height = i as u64;
        if let Some(bad) = unreadable {
            blocks.push(BlockCheck::failed(height, format!("ancestor {bad} is unreadable")));
            continue;
        }
        match from_canonical_slice::<Block>(bytes) {
            Ok(block) if block.height == height => blocks.push(verifier.check(&block)),
            Ok(block) => {
                unreadable = Some(height);
                blocks
                    .push(BlockCheck::failed(height, format!("file for height {height} holds block {}", block.height)));
            }
            Err(e) => {
                unreadable = Some(height);
                blocks.push(BlockCheck::failed(height, format!("block file does not decode: {e}")));
            }
        }
    }
    let first_failure = blocks.iter().find(|b| !b.passed()).map(|b| b.height);
    VerificationReport { ok: first_failure.is_none() && !blocks.is_empty(), first_failure, blocks }
}

/// Re-executes every block, returning the final state or the first height
/// whose transactions fail or whose state root disagrees.
pub fn replay(chain: &Chain) -> Result<WorldState, LedgerError> {
    Ok(replay_roots(chain)?.0)
}

/// Like [`replay`], also returning the recomputed state root at each height.
pub fn replay_roots(chain: &Chain) -> Result<(WorldState, Vec<Digest>), LedgerError> {
    let mut state = base_state(&chain.config);
    let mut roots = Vec::with_capacity(chain.blocks.len());
    for block in &chain.blocks {
        let ctx = ExecContext { height: block.height, block_time: block.timestamp };
        for tx in &block.txs {
            state
                .execute(tx, ctx)
                .map_err(|e| LedgerError::ReplayDivergence { height: block.height, reason: e.to_string() })?;
        }
        let root = state.state_root()?;
        if root != block.state_root {
            return Err(LedgerError::ReplayDivergence { height: block.height, reason: "state_root mismatch".into() });
        }
        roots.push(root);
    }
    Ok((state, roots))
}
