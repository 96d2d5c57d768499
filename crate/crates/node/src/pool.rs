//! Pending transactions awaiting the next block.
//!
//! Admission dry-runs each transaction against the committed state plus
//! everything already pending, so whatever is admitted will apply when the
//! block is sealed in the same order.

use std::collections::HashSet;

use neuroledger_core::contract::{ContractError, ExecContext, WorldState};
use neuroledger_core::crypto::Digest;
use neuroledger_core::tx::SignedTransaction;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejection {
    Duplicate,
    Contract(ContractError),
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::Duplicate => "duplicate",
            Rejection::Contract(e) => e.code(),
        }
    }

    pub fn detail(&self) -> String {
        match self {
            Rejection::Duplicate => "transaction already submitted".into(),
            Rejection::Contract(e) => e.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct TxPool {
    pending: Vec<SignedTransaction>,
    pending_digests: HashSet<Digest>,
    seen: HashSet<Digest>,
    speculative: WorldState,
    next_height: u64,
}

impl TxPool {
    /// `committed` is the state at the chain head; `seen` holds digests of
    /// transactions already in blocks.
    pub fn new(committed: WorldState, next_height: u64, seen: HashSet<Digest>) -> TxPool {
        TxPool { pending: Vec::new(), pending_digests: HashSet::new(), seen, speculative: committed, next_height }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn is_pending(&self, digest: &Digest) -> bool {
        self.pending_digests.contains(digest)
    }

    pub fn admit(&mut self, tx: SignedTransaction, now_ms: u64) -> Result<Digest, Rejection> {
        let digest = tx.digest().map_err(|e| Rejection::Contract(ContractError::Encoding(e)))?;
        if self.seen.contains(&digest) {
            return Err(Rejection::Duplicate);
        }
        let ctx = ExecContext { height: self.next_height, block_time: now_ms };
        self.speculative.execute(&tx, ctx).map_err(Rejection::Contract)?;
        self.seen.insert(digest);
        self.pending_digests.insert(digest);
        self.pending.push(tx);
        Ok(digest)
    }

    /// Takes everything pending. The caller seals it and then calls [`TxPool::committed`].
    pub fn drain(&mut self) -> Vec<SignedTransaction> {
        self.pending_digests.clear();
        std::mem::take(&mut self.pending)
    }

    pub fn committed(&mut self, state: WorldState, next_height: u64) {
        debug_assert!(self.pending.is_empty());
        self.speculative = state;
        self.next_height = next_height;
    }
}
