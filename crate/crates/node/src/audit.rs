//! Offline integrity check of a data directory: block files and stored blobs.

use std::collections::BTreeSet;
use std::path::Path;

use neuroledger_core::canonical::from_canonical_slice;
use neuroledger_core::crypto::Digest;
use neuroledger_core::ledger::{replay, verify_encoded_chain, Block, Chain, VerificationReport};
use neuroledger_core::store::{ObjectStatus, ObjectStore, StorageKey};
use serde::{Deserialize, Serialize};

use crate::persist::BlockStore;
use crate::service::NodeError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ok: bool,
    pub genesis_hash: Digest,
    pub chain: VerificationReport,
    pub objects_checked: u64,
    /// Stored blobs whose bytes no longer hash to their key.
    pub corrupt_objects: Vec<StorageKey>,
    /// Keys referenced on chain with no blob in this directory.
    pub missing_objects: Vec<StorageKey>,
}

/// Audits `data_dir` against `trusted` genesis, or the one recorded in `chain.json` when `None`.
pub fn audit_data_dir(data_dir: &Path, trusted: Option<Digest>) -> Result<AuditReport, NodeError> {
    let blocks = BlockStore::open(data_dir)?;
    let record = blocks
        .read_chain_record()?
        .ok_or_else(|| NodeError::Config(format!("{} holds no chain", data_dir.display())))?;
    let genesis_hash = trusted.unwrap_or(record.genesis_hash);
    let files = blocks.read_raw()?;
    let chain = verify_encoded_chain(&record.config, &genesis_hash, &files);

    let objects = ObjectStore::open(data_dir)?;
    let statuses = objects.verify_all()?;
    let corrupt_objects: Vec<StorageKey> =
        statuses.iter().filter(|(_, s)| *s == ObjectStatus::Corrupt).map(|(k, _)| *k).collect();

    let mut missing_objects = Vec::new();
    if chain.ok {
        let decoded: Result<Vec<Block>, _> = files.iter().map(|f| from_canonical_slice(f)).collect();
        if let Ok(decoded) = decoded {
            let state = replay(&Chain { config: record.config.clone(), blocks: decoded })?;
            let mut referenced = BTreeSet::new();
            for c in state.contracts.values() {
                referenced.extend(c.data_index.iter().map(|e| e.storage_key));
                referenced.extend(c.reports.values().flatten().map(|r| r.storage_key));
            }
            missing_objects = referenced.into_iter().filter(|k| !objects.contains(k)).collect();
        }
    }
    Ok(AuditReport {
        ok: chain.ok && corrupt_objects.is_empty() && missing_objects.is_empty(),
        genesis_hash,
        chain,
        objects_checked: statuses.len() as u64,
        corrupt_objects,
        missing_objects,
    })
}
