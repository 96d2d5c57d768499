//! Content-addressed blob store on the local filesystem.
//!
//! Objects live at `objects/<first two hex chars>/<full hex digest>`. Writes
//! go to a temp file in the target directory and are renamed into place, so
//! concurrent puts of identical content are harmless. Every read re-hashes.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{hash_bytes, Digest};

pub const DEFAULT_MAX_BLOB_BYTES: usize = 64 * 1024 * 1024;

/// Lowercase hex SHA-256 of the stored ciphertext.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StorageKey(Digest);

impl StorageKey {
    pub fn for_content(bytes: &[u8]) -> StorageKey {
        StorageKey(hash_bytes(bytes))
    }

    pub fn from_digest(digest: Digest) -> StorageKey {
        StorageKey(digest)
    }

    /// The digest this key encodes.
    pub fn digest(&self) -> Digest {
        self.0
    }

    fn shard(&self) -> String {
        self.0.to_hex()[..2].to_string()
    }
}

impl fmt::Display for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

impl fmt::Debug for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StorageKey({})", self.0.to_hex())
    }
}

impl FromStr for StorageKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Digest::from_str(s).map(StorageKey)
    }
}

impl Serialize for StorageKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StorageKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Digest::deserialize(d).map(StorageKey)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob of {size} bytes exceeds the {max}-byte limit")]
    Oversize { size: usize, max: usize },
    #[error("no object stored under {0}")]
    NotFound(StorageKey),
    #[error("stored object {0} does not match its key")]
    Integrity(StorageKey),
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectStatus {
    Ok,
    Corrupt,
}

#[derive(Debug, Clone)]
pub struct ObjectStore {
    root: PathBuf,
    max_blob_bytes: usize,
}

impl ObjectStore {
    /// Opens (creating if needed) a store rooted at `dir`; objects go under `dir/objects`.
    pub fn open(dir: impl AsRef<Path>) -> Result<ObjectStore, StoreError> {
        Self::with_limit(dir, DEFAULT_MAX_BLOB_BYTES)
    }

    pub fn with_limit(dir: impl AsRef<Path>, max_blob_bytes: usize) -> Result<ObjectStore, StoreError> {
        let root = dir.as_ref().join("objects");
        fs::create_dir_all(&root)?;
        Ok(ObjectStore { root, max_blob_bytes })
    }

    pub fn max_blob_bytes(&self) -> usize {
        self.max_blob_bytes
    }

    pub fn path_for(&self, key: &StorageKey) -> PathBuf {
        self.root.join(key.shard()).join(key.to_string())
    }

    pub fn put(&self, blob: &[u8]) -> Result<StorageKey, StoreError> {
        if blob.len() > self.max_blob_bytes {
            return Err(StoreError::Oversize { size: blob.len(), max: self.max_blob_bytes });
        }
        let key = StorageKey::for_content(blob);
        let path = self.path_for(&key);
        if let Ok(existing) = fs::read(&path) {
            if hash_bytes(&existing) == key.digest() {
                return Ok(key);
            }
            log::warn!("replacing corrupt object {key}");
        }
        let dir = path.parent().expect("object path has a shard directory");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::Builder::new().prefix(".tmp").tempfile_in(dir)?;
        tmp.write_all(blob)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(key)
    }

    pub fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StoreError> {
        let bytes = match fs::read(self.path_for(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(*key)),
            Err(e) => return Err(e.into()),
        };
        if hash_bytes(&bytes) != key.digest() {
            return Err(StoreError::Integrity(*key));
        }
        Ok(bytes)
    }

    pub fn contains(&self, key: &StorageKey) -> bool {
        self.path_for(key).is_file()
    }

    /// All stored keys in ascending order. Stray files are ignored.
    pub fn keys(&self) -> Result<Vec<StorageKey>, StoreError> {
        let mut keys = Vec::new();
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let entry = entry?;
                if let Some(key) = entry.file_name().to_str().and_then(|n| n.parse::<StorageKey>().ok()) {
                    keys.push(key);
                }
            }
        }
        keys.sort();
        Ok(keys)
    }

    pub fn object_count(&self) -> Result<usize, StoreError> {
        Ok(self.keys()?.len())
    }

    /// Re-hashes every object and compares it with its key.
    pub fn verify_all(&self) -> Result<Vec<(StorageKey, ObjectStatus)>, StoreError> {
        let mut out = Vec::new();
        for key in self.keys()? {
            let status = match fs::read(self.path_for(&key)) {
                Ok(bytes) if hash_bytes(&bytes) == key.digest() => ObjectStatus::Ok,
                _ => ObjectStatus::Corrupt,
            };
            out.push((key, status));
        }
        Ok(out)
    }
}
