//! Signed state-transition requests.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalError;
use crate::contract::{ReportId, Role};
use crate::crypto::{hash_canonical, verify, Address, Digest, KeyPair, PublicKey, Signature, WrappedKey};
use crate::store::StorageKey;

/// Type tag plus type-specific payload. Encodes as
/// `{"tx_type": "<Variant>", "payload": {...}}` inside the transaction record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tx_type", content = "payload")]
pub enum TxBody {
    Register {
        role: Role,
        public_key: PublicKey,
        exchange_public: PublicKey,
        profile_hash: Digest,
    },
    GrantAccess {
        grantee: Address,
    },
    RevokeAccess {
        grantee: Address,
    },
    CreateAppointment {
        provider: Address,
        slot: u64,
    },
    UploadDataIndex {
        storage_key: StorageKey,
        content_hash: Digest,
        meta: String,
    },
    UpdateReport {
        report_id: ReportId,
        content_hash: Digest,
        storage_key: StorageKey,
        wrapped_keys: BTreeMap<Address, WrappedKey>,
        updated_at: u64,
    },
    AssignManager {
        manager: Address,
    },
    ShareAnonymous {
        storage_key: StorageKey,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxType {
    Register,
    GrantAccess,
    RevokeAccess,
    CreateAppointment,
    UploadDataIndex,
    UpdateReport,
    AssignManager,
    ShareAnonymous,
}

impl TxType {
    pub const ALL: [TxType; 8] = [
        TxType::Register,
        TxType::GrantAccess,
        TxType::RevokeAccess,
        TxType::CreateAppointment,
        TxType::UploadDataIndex,
        TxType::UpdateReport,
        TxType::AssignManager,
        TxType::ShareAnonymous,
    ];
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl TxBody {
    pub fn tx_type(&self) -> TxType {
        match self {
            TxBody::Register { .. } => TxType::Register,
            TxBody::GrantAccess { .. } => TxType::GrantAccess,
            TxBody::RevokeAccess { .. } => TxType::RevokeAccess,
            TxBody::CreateAppointment { .. } => TxType::CreateAppointment,
            TxBody::UploadDataIndex { .. } => TxType::UploadDataIndex,
            TxBody::UpdateReport { .. } => TxType::UpdateReport,
            TxBody::AssignManager { .. } => TxType::AssignManager,
            TxBody::ShareAnonymous { .. } => TxType::ShareAnonymous,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTransaction {
    pub sender: Address,
    pub nonce: u64,
    #[serde(flatten)]
    pub body: TxBody,
    pub signature: Signature,
}

#[derive(Serialize)]
struct SigningView<'a> {
    sender: &'a Address,
    nonce: u64,
    #[serde(flatten)]
    body: &'a TxBody,
}

impl SignedTransaction {
    /// Builds and signs a transaction from `keys`.
    pub fn sign(keys: &KeyPair, nonce: u64, body: TxBody) -> SignedTransaction {
        let mut tx = SignedTransaction { sender: keys.address(), nonce, body, signature: Signature::ZERO };
        let digest = tx.signing_digest().expect("transaction bodies are always encodable");
        tx.signature = keys.sign(&digest);
        tx
    }

    pub fn tx_type(&self) -> TxType {
        self.body.tx_type()
    }

    /// Digest the sender signs: canonical `(tx_type, sender, nonce, payload)`.
    pub fn signing_digest(&self) -> Result<Digest, CanonicalError> {
        hash_canonical(&SigningView { sender: &self.sender, nonce: self.nonce, body: &self.body })
    }

    /// Identity of the transaction, including its signature.
    pub fn digest(&self) -> Result<Digest, CanonicalError> {
        hash_canonical(self)
    }

    pub fn verify_signature(&self, public_key: &PublicKey) -> bool {
        match self.signing_digest() {
            Ok(d) => verify(public_key, &d, &self.signature),
            Err(_) => false,
        }
    }
}
