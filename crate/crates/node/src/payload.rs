//! Blob formats written by the CLI.
//!
//! Raw data uploads are a canonical [`DataEnvelope`]: the payload encrypted
//! under a fresh content key, plus that key wrapped for each reader. Report
//! blobs are bare `nonce || ciphertext || tag`; their wrapped keys live on-chain.

use std::collections::BTreeMap;

use neuroledger_core::canonical::{from_canonical_slice, to_canonical_bytes};
use neuroledger_core::crypto::{
    decrypt_payload, encrypt_payload, unwrap_key, wrap_key, Address, CryptoError, HexBytes, KeyPair, PublicKey,
    SymmetricKey, WrappedKey,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataEnvelope {
    pub keys: BTreeMap<Address, WrappedKey>,
    pub ciphertext: HexBytes,
}

impl DataEnvelope {
    pub fn seal(plaintext: &[u8], readers: &[(Address, PublicKey)]) -> Result<DataEnvelope, CryptoError> {
        let key = SymmetricKey::random();
        let mut keys = BTreeMap::new();
        for (addr, exchange) in readers {
            keys.insert(*addr, wrap_key(&key, *addr, exchange)?);
        }
        Ok(DataEnvelope { keys, ciphertext: HexBytes(encrypt_payload(&key, plaintext)) })
    }

    pub fn open(&self, reader: &KeyPair) -> Result<Vec<u8>, CryptoError> {
        let wrapped = self.keys.get(&reader.address()).ok_or(CryptoError::Authentication)?;
        decrypt_payload(&unwrap_key(reader, wrapped)?, &self.ciphertext.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(self).expect("envelope always encodes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DataEnvelope, CryptoError> {
        from_canonical_slice(bytes).map_err(CryptoError::Encoding)
    }
}
