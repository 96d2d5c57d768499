//! Request and response bodies of the HTTP interface. All JSON bodies use
//! the canonical record encoding.

use neuroledger_core::contract::{AccessContractState, Appointment, ContractAddress, ReportId, ReportRecord};
use neuroledger_core::crypto::{Address, Digest};
use neuroledger_core::replication::Alarm;
use neuroledger_core::store::StorageKey;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PAGE: usize = 64;
pub const MAX_PAGE: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: bool,
    pub tx_digest: Option<Digest>,
    pub reason: Option<String>,
    pub detail: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxState {
    Pending,
    Committed,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxStatus {
    pub tx_digest: Digest,
    pub status: TxState,
    pub height: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub reason: String,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub chain_id: String,
    pub mode: String,
    pub sequencer: Address,
    pub genesis_hash: Digest,
    pub height: u64,
    pub head_hash: Digest,
    pub state_root: Digest,
    pub pending: u64,
    pub halted: bool,
    pub alarms: Vec<Alarm>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractView {
    pub contract_address: ContractAddress,
    pub manager: Option<Address>,
    pub state: AccessContractState,
}

/// Public metadata about a report; carries no record contents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub report_id: ReportId,
    pub owner: Address,
    pub manager: Option<Address>,
    pub appointment: Option<Appointment>,
    pub records: u64,
    pub latest_updated_at: Option<u64>,
}

/// Report records as served to one requester: each record keeps only the
/// requester's own wrapped key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportView {
    pub report_id: ReportId,
    pub owner: Address,
    pub records: Vec<ReportRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobStored {
    pub storage_key: StorageKey,
}
