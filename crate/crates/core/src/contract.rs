//! Deterministic contract state machine.
//!
//! [`WorldState`] holds the identity registry, one access contract per
//! worker, manager links and the public (anonymously shared) data set. Every
//! `apply_*` method validates completely before it mutates, so a rejected
//! operation leaves the state untouched. [`WorldState::execute`] is the
//! single entry point for signed transactions: it authenticates the sender,
//! enforces nonce monotonicity and dispatches to the matching operation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canonical::CanonicalError;
use crate::crypto::{fixed_hex, hash_canonical, Address, Digest, PublicKey, WrappedKey};
use crate::store::StorageKey;
use crate::tx::{SignedTransaction, TxBody};

/// Longest accepted data-index label, in characters.
pub const MAX_META_CHARS: usize = 256;
/// Tokens credited per anonymous share.
pub const SHARE_REWARD: u64 = 1;

fixed_hex!(
    /// Identifier under which a provider's report versions accumulate.
    ReportId,
    16
);
fixed_hex!(
    /// Identifier of one report version.
    RecordId,
    16
);
fixed_hex!(AppointmentId, 16);

fn truncate16(d: Digest) -> [u8; 16] {
    let mut out = [0u8; 16];
    out.copy_from_slice(&d.0[..16]);
    out
}

/// Address of a worker's access contract.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContractAddress(pub Address);

impl ContractAddress {
    /// First 20 bytes of `hash_canonical(["contract", owner])`.
    pub fn for_owner(owner: &Address) -> ContractAddress {
        let d = hash_canonical(&("contract", owner)).expect("string tuple encodes");
        let mut out = [0u8; 20];
        out.copy_from_slice(&d.0[..20]);
        ContractAddress(Address(out))
    }
}

impl fmt::Display for ContractAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for ContractAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContractAddress({})", self.0)
    }
}

impl std::str::FromStr for ContractAddress {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(ContractAddress)
    }
}

impl Serialize for ContractAddress {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContractAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Address::deserialize(d).map(ContractAddress)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Worker,
    BciProvider,
    ProjectManager,
    /// Chain authority (the sequencer). Only registrable in genesis.
    Operator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub address: Address,
    pub role: Role,
    pub public_key: PublicKey,
    pub exchange_public: PublicKey,
    pub profile_hash: Digest,
    pub contract_address: Option<ContractAddress>,
    /// Highest nonce accepted from this identity.
    pub last_nonce: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appointment {
    pub id: AppointmentId,
    pub provider: Address,
    pub slot: u64,
    pub report_id: ReportId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub record_id: RecordId,
    pub report_id: ReportId,
    pub author: Address,
    pub content_hash: Digest,
    pub storage_key: StorageKey,
    pub wrapped_keys: BTreeMap<Address, WrappedKey>,
    pub updated_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataIndexEntry {
    pub storage_key: StorageKey,
    pub content_hash: Digest,
    pub uploaded_at: u64,
    pub meta: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessContractState {
    pub owner: Address,
    /// Grantee address to grant time (unix ms).
    pub grantees: BTreeMap<Address, u64>,
    pub appointments: BTreeMap<AppointmentId, Appointment>,
    pub reports: BTreeMap<ReportId, Vec<ReportRecord>>,
    pub data_index: Vec<DataIndexEntry>,
    pub token_balance: u64,
}

impl AccessContractState {
    fn new(owner: Address) -> Self {
        AccessContractState {
            owner,
            grantees: BTreeMap::new(),
            appointments: BTreeMap::new(),
            reports: BTreeMap::new(),
            data_index: Vec::new(),
            token_balance: 0,
        }
    }

    pub fn indexes(&self, key: &StorageKey) -> bool {
        self.data_index.iter().any(|e| e.storage_key == *key)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorldState {
    pub chain_id: String,
    pub sequencer: Address,
    pub identities: BTreeMap<Address, IdentityRecord>,
    pub contracts: BTreeMap<ContractAddress, AccessContractState>,
    pub manager_of: BTreeMap<Address, Address>,
    pub public_data: BTreeSet<StorageKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("{0} is already registered")]
    AlreadyRegistered(Address),
    #[error("sender {sender} does not match the key's address {derived}")]
    IdentityForgery { sender: Address, derived: Address },
    #[error("unknown identity {0}")]
    UnknownIdentity(Address),
    #[error("role error: {0}")]
    Role(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("content hash does not match the storage key")]
    Integrity,
    #[error("wrapped key coverage: {0}")]
    KeyCoverage(String),
    #[error("storage key is already public")]
    AlreadyPublic,
    #[error("duplicate record {0}")]
    Duplicate(String),
    #[error("label longer than {MAX_META_CHARS} characters")]
    MetaTooLong,
    #[error("report update at {got} precedes the latest record at {latest}")]
    OutOfOrder { latest: u64, got: u64 },
    #[error("invalid signature")]
    InvalidSignature,
    #[error("stale nonce {got}; last accepted {last}")]
    StaleNonce { last: u64, got: u64 },
    #[error(transparent)]
    Encoding(#[from] CanonicalError),
}

impl ContractError {
    /// Stable machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            ContractError::AlreadyRegistered(_) => "already-registered",
            ContractError::IdentityForgery { .. } => "identity-forgery",
            ContractError::UnknownIdentity(_) => "unknown-identity",
            ContractError::Role(_) => "role",
            ContractError::Unauthorized(_) => "unauthorized",
            ContractError::NotFound(_) => "not-found",
            ContractError::Integrity => "integrity",
            ContractError::KeyCoverage(_) => "key-coverage",
            ContractError::AlreadyPublic => "already-public",
            ContractError::Duplicate(_) => "duplicate-record",
            ContractError::MetaTooLong => "meta-too-long",
            ContractError::OutOfOrder { .. } => "out-of-order",
            ContractError::InvalidSignature => "bad-signature",
            ContractError::StaleNonce { .. } => "stale-nonce",
            ContractError::Encoding(_) => "encoding",
        }
    }
}

/// Block-level facts an operation may depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecContext {
    pub height: u64,
    pub block_time: u64,
}

impl ExecContext {
    pub fn is_genesis(&self) -> bool {
        self.height == 0
    }
}

/// What a successful transaction produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxEffect {
    Registered { contract_address: Option<ContractAddress> },
    Granted,
    Revoked { was_granted: bool },
    Appointed { report_id: ReportId },
    DataIndexed,
    ReportUpdated { record_id: RecordId },
    ManagerAssigned,
    Shared { token_balance: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resource {
    Data { owner: Address, storage_key: StorageKey },
    Report { report_id: ReportId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenyReason {
    UnknownIdentity,
    NotFound,
    NotPermitted,
}

impl DenyReason {
    pub fn code(&self) -> &'static str {
        match self {
            DenyReason::UnknownIdentity => "unknown-identity",
            DenyReason::NotFound => "not-found",
            DenyReason::NotPermitted => "not-permitted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

/// `report_id = first 16 bytes of hash_canonical({nonce, owner, provider, slot})`.
pub fn derive_report_id(owner: &Address, provider: &Address, slot: u64, nonce: u64) -> ReportId {
    #[derive(Serialize)]
    struct Preimage<'a> {
        owner: &'a Address,
        provider: &'a Address,
        slot: u64,
        nonce: u64,
    }
    let d = hash_canonical(&Preimage { owner, provider, slot, nonce }).expect("encodable");
    ReportId(truncate16(d))
}

fn derive_appointment_id(owner: &Address, provider: &Address, slot: u64, nonce: u64) -> AppointmentId {
    #[derive(Serialize)]
    struct Preimage<'a> {
        kind: &'static str,
        owner: &'a Address,
        provider: &'a Address,
        slot: u64,
        nonce: u64,
    }
    let d = hash_canonical(&Preimage { kind: "appointment", owner, provider, slot, nonce }).expect("encodable");
    AppointmentId(truncate16(d))
}

/// `record_id = first 16 bytes of hash_canonical({author, content_hash, report_id, updated_at})`.
pub fn derive_record_id(report_id: &ReportId, author: &Address, content_hash: &Digest, updated_at: u64) -> RecordId {
    #[derive(Serialize)]
    struct Preimage<'a> {
        report_id: &'a ReportId,
        author: &'a Address,
        content_hash: &'a Digest,
        updated_at: u64,
    }
    let d = hash_canonical(&Preimage { report_id, author, content_hash, updated_at }).expect("encodable");
    RecordId(truncate16(d))
}

impl WorldState {
    pub fn new(chain_id: impl Into<String>, sequencer: Address) -> WorldState {
        WorldState { chain_id: chain_id.into(), sequencer, ..Default::default() }
    }

    pub fn state_root(&self) -> Result<Digest, CanonicalError> {
        hash_canonical(self)
    }

    pub fn identity(&self, address: &Address) -> Option<&IdentityRecord> {
        self.identities.get(address)
    }

    fn role_of(&self, address: &Address) -> Result<Role, ContractError> {
        self.identities.get(address).map(|r| r.role).ok_or(ContractError::UnknownIdentity(*address))
    }

    fn require_worker(&self, address: &Address) -> Result<ContractAddress, ContractError> {
        let rec = self.identities.get(address).ok_or(ContractError::UnknownIdentity(*address))?;
        match (rec.role, rec.contract_address) {
            (Role::Worker, Some(c)) => Ok(c),
            (role, _) => Err(ContractError::Role(format!("{address} is {role:?}, not Worker"))),
        }
    }

    /// The access contract owned by `owner`, if `owner` is a registered worker.
    pub fn contract_of(&self, owner: &Address) -> Option<&AccessContractState> {
        let c = self.identities.get(owner)?.contract_address?;
        self.contracts.get(&c)
    }

    /// The contract under which `report_id` was created.
    pub fn report_owner(&self, report_id: &ReportId) -> Option<&AccessContractState> {
        self.contracts.values().find(|c| c.reports.contains_key(report_id))
    }

    pub fn apply_register(
        &mut self,
        sender: Address,
        role: Role,
        public_key: PublicKey,
        exchange_public: PublicKey,
        profile_hash: Digest,
    ) -> Result<Option<ContractAddress>, ContractError> {
        let derived = Address::from_public_key(&public_key);
        if derived != sender {
            return Err(ContractError::IdentityForgery { sender, derived });
        }
        if self.identities.contains_key(&sender) {
            return Err(ContractError::AlreadyRegistered(sender));
        }
        let contract_address = (role == Role::Worker).then(|| ContractAddress::for_owner(&sender));
        if let Some(c) = contract_address {
            if self.contracts.contains_key(&c) {
                return Err(ContractError::Duplicate(format!("contract {c}")));
            }
            self.contracts.insert(c, AccessContractState::new(sender));
        }
        self.identities.insert(
            sender,
            IdentityRecord {
                address: sender,
                role,
                public_key,
                exchange_public,
                profile_hash,
                contract_address,
                last_nonce: 0,
            },
        );
        Ok(contract_address)
    }

    fn require_provider(&self, grantee: &Address) -> Result<(), ContractError> {
        match self.role_of(grantee)? {
            Role::BciProvider => Ok(()),
            role => Err(ContractError::Role(format!("{grantee} is {role:?}; only BciProviders can hold data grants"))),
        }
    }

    pub fn apply_grant(&mut self, owner: Address, grantee: Address, at: u64) -> Result<(), ContractError> {
        let c = self.require_worker(&owner)?;
        self.require_provider(&grantee)?;
        let contract = self.contracts.get_mut(&c).expect("worker contract exists");
        contract.grantees.entry(grantee).or_insert(at);
        Ok(())
    }

    /// Returns whether `grantee` held a grant. Revoking a non-grantee is a successful no-op.
    pub fn apply_revoke(&mut self, owner: Address, grantee: Address) -> Result<bool, ContractError> {
        let c = self.require_worker(&owner)?;
        self.role_of(&grantee)?;
        let contract = self.contracts.get_mut(&c).expect("worker contract exists");
        Ok(contract.grantees.remove(&grantee).is_some())
    }

    pub fn apply_appointment(
        &mut self,
        owner: Address,
        provider: Address,
        slot: u64,
        nonce: u64,
    ) -> Result<ReportId, ContractError> {
        let c = self.require_worker(&owner)?;
        let contract = self.contracts.get(&c).expect("worker contract exists");
        if !contract.grantees.contains_key(&provider) {
            return Err(ContractError::Unauthorized(format!("{provider} holds no grant from {owner}")));
        }
        let report_id = derive_report_id(&owner, &provider, slot, nonce);
        let id = derive_appointment_id(&owner, &provider, slot, nonce);
        if self.report_owner(&report_id).is_some() {
            return Err(ContractError::Duplicate(format!("report {report_id}")));
        }
        if contract.appointments.contains_key(&id) {
            return Err(ContractError::Duplicate(format!("appointment {id}")));
        }
        let contract = self.contracts.get_mut(&c).expect("worker contract exists");
        contract.appointments.insert(id, Appointment { id, provider, slot, report_id });
        contract.reports.insert(report_id, Vec::new());
        Ok(report_id)
    }

    pub fn apply_upload_data_index(
        &mut self,
        owner: Address,
        storage_key: StorageKey,
        content_hash: Digest,
        meta: String,
        at: u64,
    ) -> Result<(), ContractError> {
        let c = self.require_worker(&owner)?;
        if storage_key.digest() != content_hash {
            return Err(ContractError::Integrity);
        }
        if meta.chars().count() > MAX_META_CHARS {
            return Err(ContractError::MetaTooLong);
        }
        let contract = self.contracts.get_mut(&c).expect("worker contract exists");
        contract.data_index.push(DataIndexEntry { storage_key, content_hash, uploaded_at: at, meta });
        Ok(())
    }

    pub fn apply_update_report(
        &mut self,
        author: Address,
        report_id: ReportId,
        content_hash: Digest,
        storage_key: StorageKey,
        wrapped_keys: BTreeMap<Address, WrappedKey>,
        updated_at: u64,
    ) -> Result<RecordId, ContractError> {
        self.role_of(&author)?;
        let contract =
            self.report_owner(&report_id).ok_or_else(|| ContractError::NotFound(format!("report {report_id}")))?;
        let owner = contract.owner;
        if !contract.grantees.contains_key(&author) {
            return Err(ContractError::Unauthorized(format!("{author} holds no grant from {owner}")));
        }
        if storage_key.digest() != content_hash {
            return Err(ContractError::Integrity);
        }
        let manager = self.manager_of.get(&owner).copied();
        if !wrapped_keys.contains_key(&owner) {
            return Err(ContractError::KeyCoverage(format!("missing key for owner {owner}")));
        }
        if let Some(m) = manager {
            if !wrapped_keys.contains_key(&m) {
                return Err(ContractError::KeyCoverage(format!("missing key for manager {m}")));
            }
        }
        for (addr, wk) in &wrapped_keys {
            if wk.recipient != *addr {
                return Err(ContractError::KeyCoverage(format!("key filed under {addr} names {}", wk.recipient)));
            }
            if *addr != owner && Some(*addr) != manager && *addr != author {
                return Err(ContractError::KeyCoverage(format!("{addr} may not receive this report")));
            }
        }
        let history = &contract.reports[&report_id];
        if let Some(last) = history.last() {
            if updated_at < last.updated_at {
                return Err(ContractError::OutOfOrder { latest: last.updated_at, got: updated_at });
            }
        }
        let record_id = derive_record_id(&report_id, &author, &content_hash, updated_at);
        if history.iter().any(|r| r.record_id == record_id) {
            return Err(ContractError::Duplicate(format!("record {record_id}")));
        }
        let c = self.identities[&owner].contract_address.expect("owner is a worker");
        let contract = self.contracts.get_mut(&c).expect("worker contract exists");
        contract.reports.get_mut(&report_id).expect("checked above").push(ReportRecord {
            record_id,
            report_id,
            author,
            content_hash,
            storage_key,
            wrapped_keys,
            updated_at,
        });
        Ok(record_id)
    }

    pub fn apply_assign_manager(&mut self, worker: Address, manager: Address) -> Result<(), ContractError> {
        self.require_worker(&worker)?;
        match self.role_of(&manager)? {
            Role::ProjectManager => {
                self.manager_of.insert(worker, manager);
                Ok(())
            }
            role => Err(ContractError::Role(format!("{manager} is {role:?}, not ProjectManager"))),
        }
    }

    pub fn apply_share_anonymous(&mut self, owner: Address, storage_key: StorageKey) -> Result<u64, ContractError> {
        self.role_of(&owner)?;
        let own = self.contract_of(&owner).filter(|c| c.indexes(&storage_key)).is_some();
        if !own {
            return if self.contracts.values().any(|c| c.indexes(&storage_key)) {
                Err(ContractError::Unauthorized(format!("{owner} does not own {storage_key}")))
            } else {
                Err(ContractError::NotFound(format!("storage key {storage_key}")))
            };
        }
        if self.public_data.contains(&storage_key) {
            return Err(ContractError::AlreadyPublic);
        }
        let c = self.identities[&owner].contract_address.expect("owner is a worker");
        self.public_data.insert(storage_key);
        let contract = self.contracts.get_mut(&c).expect("worker contract exists");
        contract.token_balance += SHARE_REWARD;
        Ok(contract.token_balance)
    }

    /// Access decision for `requester` on `resource`. Pure read.
    ///
    /// Data: owner, current grantees, or anyone once publicly shared.
    /// Report: owner, any author of a record under it, or the owner's assigned manager.
    pub fn check_permission(&self, requester: &Address, resource: &Resource) -> Decision {
        if !self.identities.contains_key(requester) {
            return Decision::Deny(DenyReason::UnknownIdentity);
        }
        match resource {
            Resource::Data { owner, storage_key } => {
                let Some(contract) = self.contract_of(owner).filter(|c| c.indexes(storage_key)) else {
                    return Decision::Deny(DenyReason::NotFound);
                };
                if requester == owner
                    || contract.grantees.contains_key(requester)
                    || self.public_data.contains(storage_key)
                {
                    Decision::Allow
                } else {
                    Decision::Deny(DenyReason::NotPermitted)
                }
            }
            Resource::Report { report_id } => {
                let Some(contract) = self.report_owner(report_id) else {
                    return Decision::Deny(DenyReason::NotFound);
                };
                let is_author = contract.reports[report_id].iter().any(|r| r.author == *requester);
                let is_manager = self.manager_of.get(&contract.owner) == Some(requester);
                if *requester == contract.owner || is_author || is_manager {
                    Decision::Allow
                } else {
                    Decision::Deny(DenyReason::NotPermitted)
                }
            }
        }
    }

    /// Every on-chain resource whose content lives under `storage_key`.
    pub fn resources_for_blob(&self, storage_key: &StorageKey) -> Vec<Resource> {
        let mut out = Vec::new();
        for contract in self.contracts.values() {
            if contract.indexes(storage_key) {
                out.push(Resource::Data { owner: contract.owner, storage_key: *storage_key });
            }
            for (report_id, records) in &contract.reports {
                if records.iter().any(|r| r.storage_key == *storage_key) {
                    out.push(Resource::Report { report_id: *report_id });
                }
            }
        }
        out
    }

    /// Blob reads are allowed if any resource backed by the blob is readable.
    pub fn check_blob_access(&self, requester: &Address, storage_key: &StorageKey) -> Decision {
        if !self.identities.contains_key(requester) {
            return Decision::Deny(DenyReason::UnknownIdentity);
        }
        let resources = self.resources_for_blob(storage_key);
        if resources.is_empty() {
            return Decision::Deny(DenyReason::NotFound);
        }
        if resources.iter().any(|r| self.check_permission(requester, r).is_allow()) {
            Decision::Allow
        } else {
            Decision::Deny(DenyReason::NotPermitted)
        }
    }

    /// Authenticates and applies one signed transaction in place.
    ///
    /// On error the state is unchanged. Genesis transactions are attested by
    /// the block proposer and carry no sender signature.
    pub fn execute(&mut self, tx: &SignedTransaction, ctx: ExecContext) -> Result<TxEffect, ContractError> {
        let sender = tx.sender;
        match &tx.body {
            TxBody::Register { public_key, role, .. } => {
                let derived = Address::from_public_key(public_key);
                if derived != sender {
                    return Err(ContractError::IdentityForgery { sender, derived });
                }
                if self.identities.contains_key(&sender) {
                    return Err(ContractError::AlreadyRegistered(sender));
                }
                if *role == Role::Operator && !ctx.is_genesis() {
                    return Err(ContractError::Role("Operator identities exist only in genesis".into()));
                }
                if !ctx.is_genesis() && !tx.verify_signature(public_key) {
                    return Err(ContractError::InvalidSignature);
                }
            }
            _ => {
                let rec = self.identities.get(&sender).ok_or(ContractError::UnknownIdentity(sender))?;
                if !tx.verify_signature(&rec.public_key) {
                    return Err(ContractError::InvalidSignature);
                }
                if tx.nonce <= rec.last_nonce {
                    return Err(ContractError::StaleNonce { last: rec.last_nonce, got: tx.nonce });
                }
            }
        }

        let effect = match tx.body.clone() {
            TxBody::Register { role, public_key, exchange_public, profile_hash } => {
                let contract_address = self.apply_register(sender, role, public_key, exchange_public, profile_hash)?;
                TxEffect::Registered { contract_address }
            }
            TxBody::GrantAccess { grantee } => {
                self.apply_grant(sender, grantee, ctx.block_time)?;
                TxEffect::Granted
            }
            TxBody::RevokeAccess { grantee } => TxEffect::Revoked { was_granted: self.apply_revoke(sender, grantee)? },
            TxBody::CreateAppointment { provider, slot } => {
                TxEffect::Appointed { report_id: self.apply_appointment(sender, provider, slot, tx.nonce)? }
            }
            TxBody::UploadDataIndex { storage_key, content_hash, meta } => {
                self.apply_upload_data_index(sender, storage_key, content_hash, meta, ctx.block_time)?;
                TxEffect::DataIndexed
            }
            TxBody::UpdateReport { report_id, content_hash, storage_key, wrapped_keys, updated_at } => {
                let record_id =
                    self.apply_update_report(sender, report_id, content_hash, storage_key, wrapped_keys, updated_at)?;
                TxEffect::ReportUpdated { record_id }
            }
            TxBody::AssignManager { manager } => {
                self.apply_assign_manager(sender, manager)?;
                TxEffect::ManagerAssigned
            }
            TxBody::ShareAnonymous { storage_key } => {
                TxEffect::Shared { token_balance: self.apply_share_anonymous(sender, storage_key)? }
            }
        };
        self.identities.get_mut(&sender).expect("sender registered").last_nonce = tx.nonce;
        Ok(effect)
    }
}

/// Pure form of [`WorldState::execute`].
pub fn apply_transaction(
    state: &WorldState,
    tx: &SignedTransaction,
    ctx: ExecContext,
) -> Result<(WorldState, TxEffect), ContractError> {
    let mut next = state.clone();
    let effect = next.execute(tx, ctx)?;
    Ok((next, effect))
}
