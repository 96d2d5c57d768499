//! Signed read requests for permissioned endpoints.
//!
//! The header value is the canonical encoding of
//! `{issued_at, path, requester, signature}`, where the signature covers
//! `hash_canonical({issued_at, path, requester})`.

use neuroledger_core::canonical::{from_canonical_slice, to_canonical_string, CanonicalError};
use neuroledger_core::crypto::{hash_canonical, verify, Address, Digest, KeyPair, PublicKey, Signature};
use serde::{Deserialize, Serialize};

pub const READ_HEADER: &str = "x-neuroledger-read";
pub const FRESHNESS_MS: u64 = 120_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedReadRequest {
    pub requester: Address,
    pub path: String,
    pub issued_at: u64,
    pub signature: Signature,
}

#[derive(Serialize)]
struct Unsigned<'a> {
    requester: &'a Address,
    path: &'a str,
    issued_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("missing or malformed read request header")]
    Malformed,
    #[error("request was issued for a different path")]
    WrongPath,
    #[error("request timestamp is outside the freshness window")]
    Stale,
    #[error("requester is not a registered identity")]
    UnknownRequester,
    #[error("signature does not verify")]
    BadSignature,
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::Malformed => "malformed-auth",
            AuthError::WrongPath => "wrong-path",
            AuthError::Stale => "stale",
            AuthError::UnknownRequester => "unknown-identity",
            AuthError::BadSignature => "bad-signature",
        }
    }
}

impl SignedReadRequest {
    pub fn signing_digest(requester: &Address, path: &str, issued_at: u64) -> Result<Digest, CanonicalError> {
        hash_canonical(&Unsigned { requester, path, issued_at })
    }

    pub fn sign(keys: &KeyPair, path: &str, issued_at: u64) -> SignedReadRequest {
        let requester = keys.address();
        let digest = Self::signing_digest(&requester, path, issued_at).expect("strings always encode");
        SignedReadRequest { requester, path: path.to_string(), issued_at, signature: keys.sign(&digest) }
    }

    pub fn to_header(&self) -> String {
        to_canonical_string(self).expect("request always encodes")
    }

    pub fn from_header(value: &str) -> Result<SignedReadRequest, AuthError> {
        from_canonical_slice(value.as_bytes()).map_err(|_| AuthError::Malformed)
    }

    /// Checks path binding, freshness against `now_ms`, then the signature.
    /// `key_of` resolves the requester's registered public key.
    pub fn authenticate(
        &self,
        path: &str,
        now_ms: u64,
        key_of: impl FnOnce(&Address) -> Option<PublicKey>,
    ) -> Result<Address, AuthError> {
        if self.path != path {
            return Err(AuthError::WrongPath);
        }
        if self.issued_at.abs_diff(now_ms) > FRESHNESS_MS {
            return Err(AuthError::Stale);
        }
        let key = key_of(&self.requester).ok_or(AuthError::UnknownRequester)?;
        let digest =
            Self::signing_digest(&self.requester, &self.path, self.issued_at).map_err(|_| AuthError::Malformed)?;
        if !verify(&key, &digest, &self.signature) {
            return Err(AuthError::BadSignature);
        }
        Ok(self.requester)
    }
}
