//! Identity keys, digests, signatures and hybrid encryption.
//!
//! Algorithms are fixed for interop with other clients:
//! SHA-256, Ed25519, X25519, HKDF-SHA256 and XChaCha20-Poly1305.
//!
//! The key-agreement secret is the clamped Ed25519 scalar of the signing
//! seed (the same conversion libsodium uses), so one 32-byte seed yields
//! both the signing and the exchange key.
//!
//! Sealed envelope layout (bytes form):
//!
//! ```text
//! +----------------+-----------+--------------------------+
//! | ephemeral (32) | nonce(24) | ciphertext || tag (16)   |
//! +----------------+-----------+--------------------------+
//! ```
//!
//! The envelope key is `HKDF-SHA256(ikm = X25519(eph, recipient),
//! info = "neuroledger/seal/v1" || eph_pub || recipient_pub)` and the
//! ephemeral public key is bound as associated data.

use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::canonical::{to_canonical_bytes, CanonicalError};

pub const SEED_LEN: usize = 32;
pub const NONCE_LEN: usize = 24;
pub const TAG_LEN: usize = 16;
const SEAL_INFO: &[u8] = b"neuroledger/seal/v1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be exactly {SEED_LEN} bytes, got {0}")]
    InvalidSeed(usize),
    #[error("invalid public key")]
    InvalidKey,
    #[error("authentication failed")]
    Authentication,
    #[error("malformed ciphertext: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Encoding(#[from] CanonicalError),
}

pub(crate) fn decode_lower_hex(s: &str, expected_len: Option<usize>) -> Result<Vec<u8>, String> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err("hex must be lowercase".into());
    }
    let bytes = hex::decode(s).map_err(|e| e.to_string())?;
    if let Some(n) = expected_len {
        if bytes.len() != n {
            return Err(format!("expected {n} bytes, got {}", bytes.len()));
        }
    }
    Ok(bytes)
}

macro_rules! fixed_hex {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                ::hex::encode(self.0)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl ::std::fmt::Debug for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                let bytes = $crate::crypto::decode_lower_hex(s, Some($len))?;
                Ok(Self(bytes.try_into().expect("length checked")))
            }
        }

        impl ::serde::Serialize for $name {
            fn serialize<S: ::serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $name {
            fn deserialize<D: ::serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <String as ::serde::Deserialize>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

pub(crate) use fixed_hex;

fixed_hex!(
    /// SHA-256 output.
    Digest,
    32
);
fixed_hex!(
    /// Ed25519 verification key or X25519 exchange key.
    PublicKey,
    32
);
fixed_hex!(
    /// Ed25519 signature.
    Signature,
    64
);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);
}

impl Signature {
    pub const ZERO: Signature = Signature([0u8; 64]);
}

/// 20-byte account identifier, rendered `0x` + 40 lowercase hex chars.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub fn from_public_key(public_key: &PublicKey) -> Address {
        let d = hash_bytes(&public_key.0);
        let mut out = [0u8; 20];
        out.copy_from_slice(&d.0[..20]);
        Address(out)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({self})")
    }
}

impl FromStr for Address {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let body = s.strip_prefix("0x").ok_or("address must start with 0x")?;
        let bytes = decode_lower_hex(body, Some(20))?;
        Ok(Address(bytes.try_into().expect("length checked")))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Variable-length bytes carried as a lowercase hex string.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct HexBytes(pub Vec<u8>);

impl fmt::Debug for HexBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HexBytes({} bytes)", self.0.len())
    }
}

impl Serialize for HexBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for HexBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        decode_lower_hex(&s, None).map(HexBytes).map_err(serde::de::Error::custom)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// SHA-256 over the canonical encoding of `value`.
pub fn hash_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Digest, CanonicalError> {
    Ok(hash_bytes(&to_canonical_bytes(value)?))
}

/// Signing seed plus the public halves derived from it.
#[derive(Clone, ZeroizeOnDrop)]
pub struct KeyPair {
    seed: [u8; SEED_LEN],
    #[zeroize(skip)]
    pub public_key: PublicKey,
    #[zeroize(skip)]
    pub exchange_public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address())
            .field("public_key", &self.public_key)
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
    }
}

impl Eq for KeyPair {}

pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; SEED_LEN] = seed.try_into().map_err(|_| CryptoError::InvalidSeed(seed.len()))?;
    let signing = SigningKey::from_bytes(&seed);
    let exchange = exchange_secret(&signing);
    Ok(KeyPair {
        seed,
        public_key: PublicKey(signing.verifying_key().to_bytes()),
        exchange_public: PublicKey(x25519_dalek::PublicKey::from(&exchange).to_bytes()),
    })
}

fn exchange_secret(signing: &SigningKey) -> x25519_dalek::StaticSecret {
    let mut scalar = signing.to_scalar_bytes();
    let secret = x25519_dalek::StaticSecret::from(scalar);
    scalar.zeroize();
    secret
}

impl KeyPair {
    /// Fresh identity from the OS random source.
    pub fn random() -> KeyPair {
        let mut seed = [0u8; SEED_LEN];
        OsRng.fill_bytes(&mut seed);
        let kp = generate_keypair(&seed).expect("32-byte seed");
        seed.zeroize();
        kp
    }

    pub fn seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }

    pub fn address(&self) -> Address {
        Address::from_public_key(&self.public_key)
    }

    pub fn sign(&self, digest: &Digest) -> Signature {
        sign(&self.seed, digest)
    }

    pub fn open(&self, envelope: &SealedEnvelope) -> Result<Vec<u8>, CryptoError> {
        open(&self.seed, envelope)
    }
}

pub fn sign(seed: &[u8; SEED_LEN], digest: &Digest) -> Signature {
    Signature(SigningKey::from_bytes(seed).sign(&digest.0).to_bytes())
}

/// Strict Ed25519 verification. Never panics; bad keys or signatures yield `false`.
pub fn verify(public_key: &PublicKey, digest: &Digest, signature: &Signature) -> bool {
    verify_message(public_key, &digest.0, &signature.0)
}

/// Verification over arbitrary message bytes with untyped signature bytes.
pub fn verify_message(public_key: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    vk.verify_strict(message, &sig).is_ok()
}

/// Hybrid-encrypted payload addressed to one exchange key.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SealedEnvelope {
    pub ephemeral_public: PublicKey,
    pub nonce: HexBytes,
    pub ciphertext: HexBytes,
}

impl SealedEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + NONCE_LEN + self.ciphertext.0.len());
        out.extend_from_slice(&self.ephemeral_public.0);
        out.extend_from_slice(&self.nonce.0);
        out.extend_from_slice(&self.ciphertext.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SealedEnvelope, CryptoError> {
        if bytes.len() < 32 + NONCE_LEN + TAG_LEN {
            return Err(CryptoError::Malformed("envelope too short"));
        }
        Ok(SealedEnvelope {
            ephemeral_public: PublicKey::from_slice(&bytes[..32]).expect("32 bytes"),
            nonce: HexBytes(bytes[32..32 + NONCE_LEN].to_vec()),
            ciphertext: HexBytes(bytes[32 + NONCE_LEN..].to_vec()),
        })
    }
}

fn envelope_cipher(shared: &[u8; 32], eph: &PublicKey, recipient: &PublicKey) -> XChaCha20Poly1305 {
    let hk = Hkdf::<Sha256>::new(None, shared);
    let mut info = Vec::with_capacity(SEAL_INFO.len() + 64);
    info.extend_from_slice(SEAL_INFO);
    info.extend_from_slice(&eph.0);
    info.extend_from_slice(&recipient.0);
    let mut key = [0u8; 32];
    hk.expand(&info, &mut key).expect("32 bytes is a valid HKDF length");
    let cipher = XChaCha20Poly1305::new(&key.into());
    key.zeroize();
    cipher
}

/// Encrypts `plaintext` to `recipient_exchange` with a fresh ephemeral key and nonce.
pub fn seal(recipient_exchange: &PublicKey, plaintext: &[u8]) -> Result<SealedEnvelope, CryptoError> {
    let eph_secret = x25519_dalek::EphemeralSecret::random_from_rng(OsRng);
    let eph_public = PublicKey(x25519_dalek::PublicKey::from(&eph_secret).to_bytes());
    let shared = eph_secret.diffie_hellman(&x25519_dalek::PublicKey::from(recipient_exchange.0));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidKey);
    }
    let cipher = envelope_cipher(shared.as_bytes(), &eph_public, recipient_exchange);
    let mut nonce = [0u8; NONCE_LEN];
    OsRng.fill_bytes(&mut nonce);
    let ciphertext = cipher
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: plaintext, aad: &eph_public.0 })
        .map_err(|_| CryptoError::Malformed("encryption failed"))?;
    Ok(SealedEnvelope {
        ephemeral_public: eph_public,
        nonce: HexBytes(nonce.to_vec()),
        ciphertext: HexBytes(ciphertext),
    })
}

pub fn open(recipient_seed: &[u8; SEED_LEN], envelope: &SealedEnvelope) -> Result<Vec<u8>, CryptoError> {
    if envelope.nonce.0.len() != NONCE_LEN {
        return Err(CryptoError::Malformed("nonce must be 24 bytes"));
    }
    if envelope.ciphertext.0.len() < TAG_LEN {
        return Err(CryptoError::Malformed("ciphertext shorter than tag"));
    }
    let secret = exchange_secret(&SigningKey::from_bytes(recipient_seed));
    let recipient_public = PublicKey(x25519_dalek::PublicKey::from(&secret).to_bytes());
    let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(envelope.ephemeral_public.0));
    if !shared.was_contributory() {
        return Err(CryptoError::Authentication);
    }
    let cipher = envelope_cipher(shared.as_bytes(), &envelope.ephemeral_public, &recipient_public);
    cipher
        .decrypt(
            XNonce::from_slice(&envelope.nonce.0),
            Payload { msg: &envelope.ciphertext.0, aad: &envelope.ephemeral_public.0 },
        )
        .map_err(|_| CryptoError::Authentication)
}

/// Content key for one encrypted payload.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct SymmetricKey(pub [u8; 32]);

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

impl SymmetricKey {
    pub fn random() -> SymmetricKey {
        let mut k = [0u8; 32];
        OsRng.fill_bytes(&mut k);
        SymmetricKey(k)
    }
}

/// `nonce(24) || ciphertext || tag(16)`.
pub fn encrypt_payload(key: &SymmetricKey, plaintext: &[u8]) -> Vec<u8> {
    let cipher = XChaCha20Poly1305::new(&key.0.into());
    let mut nonce = [0u8; NONCE_LEN];
    OsRng.fill_bytes(&mut nonce);
    let ct = cipher.encrypt(XNonce::from_slice(&nonce), plaintext).expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn decrypt_payload(key: &SymmetricKey, bytes: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if bytes.len() < NONCE_LEN + TAG_LEN {
        return Err(CryptoError::Malformed("payload too short"));
    }
    let cipher = XChaCha20Poly1305::new(&key.0.into());
    cipher
        .decrypt(XNonce::from_slice(&bytes[..NONCE_LEN]), &bytes[NONCE_LEN..])
        .map_err(|_| CryptoError::Authentication)
}

/// A content key sealed to one recipient.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct WrappedKey {
    pub recipient: Address,
    pub envelope: SealedEnvelope,
}

pub fn wrap_key(
    key: &SymmetricKey,
    recipient: Address,
    recipient_exchange: &PublicKey,
) -> Result<WrappedKey, CryptoError> {
    Ok(WrappedKey { recipient, envelope: seal(recipient_exchange, &key.0)? })
}

pub fn unwrap_key(recipient: &KeyPair, wrapped: &WrappedKey) -> Result<SymmetricKey, CryptoError> {
    let mut bytes = recipient.open(&wrapped.envelope)?;
    let key = <[u8; 32]>::try_from(bytes.as_slice()).map_err(|_| CryptoError::Malformed("wrapped key is not 32 bytes"));
    bytes.zeroize();
    key.map(SymmetricKey)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypair_is_deterministic() {
        let a = generate_keypair(&[0u8; 32]).unwrap();
        let b = generate_keypair(&[0u8; 32]).unwrap();
        assert_eq!(a.public_key, b.public_key);
        assert_eq!(a.exchange_public, b.exchange_public);
        assert_eq!(a.address(), b.address());
    }

    #[test]
    fn one_bit_seed_change_changes_everything() {
        let mut s = [0u8; 32];
        let a = generate_keypair(&s).unwrap();
        s[31] ^= 1;
        let b = generate_keypair(&s).unwrap();
        assert_ne!(a.public_key, b.public_key);
        assert_ne!(a.address(), b.address());
    }

    #[test]
    fn wrong_seed_length_is_rejected() {
        assert_eq!(generate_keypair(&[1u8; 31]), Err(CryptoError::InvalidSeed(31)));
        assert_eq!(generate_keypair(&[1u8; 33]), Err(CryptoError::InvalidSeed(33)));
    }

    #[test]
    fn exchange_key_is_birational_image_of_signing_key() {
        let kp = generate_keypair(&[7u8; 32]).unwrap();
        let vk = VerifyingKey::from_bytes(&kp.public_key.0).unwrap();
        assert_eq!(vk.to_montgomery().to_bytes(), kp.exchange_public.0);
    }

    #[test]
    fn address_renders_42_chars() {
        let kp = generate_keypair(&[3u8; 32]).unwrap();
        let s = kp.address().to_string();
        assert_eq!(s.len(), 42);
        assert!(s.starts_with("0x"));
        assert_eq!(s.parse::<Address>().unwrap(), kp.address());
        assert!(s.to_uppercase().replace("0X", "0x").parse::<Address>().is_err());
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = generate_keypair(&[9u8; 32]).unwrap();
        let d = hash_bytes(b"grant");
        let sig = kp.sign(&d);
        assert!(verify(&kp.public_key, &d, &sig));
        let mut flipped = d;
        flipped.0[0] ^= 1;
        assert!(!verify(&kp.public_key, &flipped, &sig));
    }

    #[test]
    fn malformed_signature_bytes_do_not_panic() {
        let kp = generate_keypair(&[9u8; 32]).unwrap();
        assert!(!verify_message(&kp.public_key, b"x", &[0u8; 10]));
        assert!(!verify_message(&kp.public_key, b"x", &[0xffu8; 64]));
        assert!(!verify_message(&PublicKey([0xff; 32]), b"x", &[0u8; 64]));
    }

    #[test]
    fn seal_open_and_failures() {
        let alice = generate_keypair(&[1u8; 32]).unwrap();
        let bob = generate_keypair(&[2u8; 32]).unwrap();
        let env = seal(&alice.exchange_public, b"eeg").unwrap();
        assert_eq!(alice.open(&env).unwrap(), b"eeg");
        assert_eq!(bob.open(&env), Err(CryptoError::Authentication));
        let mut bad = env.clone();
        bad.ciphertext.0[0] ^= 0x40;
        assert_eq!(alice.open(&bad), Err(CryptoError::Authentication));
        let env2 = seal(&alice.exchange_public, b"eeg").unwrap();
        assert_ne!(env.to_bytes(), env2.to_bytes());
    }

    #[test]
    fn malformed_envelope_is_not_an_auth_failure() {
        let alice = generate_keypair(&[1u8; 32]).unwrap();
        assert_eq!(SealedEnvelope::from_bytes(&[0u8; 50]), Err(CryptoError::Malformed("envelope too short")));
        let mut env = seal(&alice.exchange_public, b"x").unwrap();
        env.nonce.0.pop();
        assert!(matches!(alice.open(&env), Err(CryptoError::Malformed(_))));
    }

    #[test]
    fn low_order_recipient_is_refused() {
        assert_eq!(seal(&PublicKey([0u8; 32]), b"x"), Err(CryptoError::InvalidKey));
    }

    #[test]
    fn wrap_for_two_recipients() {
        let owner = generate_keypair(&[4u8; 32]).unwrap();
        let manager = generate_keypair(&[5u8; 32]).unwrap();
        let other = generate_keypair(&[6u8; 32]).unwrap();
        let k = SymmetricKey::random();
        let w1 = wrap_key(&k, owner.address(), &owner.exchange_public).unwrap();
        let w2 = wrap_key(&k, manager.address(), &manager.exchange_public).unwrap();
        assert_eq!(unwrap_key(&owner, &w1).unwrap(), k);
        assert_eq!(unwrap_key(&manager, &w2).unwrap(), k);
        assert_eq!(unwrap_key(&other, &w1), Err(CryptoError::Authentication));
    }

    #[test]
    fn payload_cipher_round_trip_and_wrong_key() {
        let k = SymmetricKey::random();
        let blob: Vec<u8> = (0..(1 << 20)).map(|i| (i * 31 % 251) as u8).collect();
        let ct = encrypt_payload(&k, &blob);
        assert_eq!(decrypt_payload(&k, &ct).unwrap(), blob);
        assert_eq!(decrypt_payload(&SymmetricKey::random(), &ct), Err(CryptoError::Authentication));
        assert!(matches!(decrypt_payload(&k, &ct[..20]), Err(CryptoError::Malformed(_))));
    }

    #[test]
    fn hex_types_are_strict() {
        assert!("AB".repeat(32).parse::<Digest>().is_err());
        assert!("ab".repeat(31).parse::<Digest>().is_err());
        assert!("ab".repeat(32).parse::<Digest>().is_ok());
    }
}
