//! On-disk layout of a node's data directory.
//!
//! ```text
//! <data_dir>/chain.json                chain config + genesis hash (canonical)
//! <data_dir>/blocks/<height:012>.json  one canonical block per file
//! <data_dir>/objects/<xx>/<digest>     content-addressed blobs
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use neuroledger_core::canonical::{from_canonical_slice, to_canonical_bytes, CanonicalError};
use neuroledger_core::crypto::Digest;
use neuroledger_core::ledger::{Block, ChainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: CanonicalError },
    #[error("block file {path} holds height {found}")]
    Misplaced { path: PathBuf, found: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub config: ChainConfig,
    pub genesis_hash: Digest,
}

#[derive(Clone, Debug)]
pub struct BlockStore {
    root: PathBuf,
}

fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = tempfile::Builder::new().prefix(".tmp").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl BlockStore {
    pub fn open(data_dir: &Path) -> Result<BlockStore, PersistError> {
        let root = data_dir.to_path_buf();
        fs::create_dir_all(root.join("blocks"))?;
        Ok(BlockStore { root })
    }

    pub fn block_path(&self, height: u64) -> PathBuf {
        self.root.join("blocks").join(format!("{height:012}.json"))
    }

    fn chain_path(&self) -> PathBuf {
        self.root.join("chain.json")
    }

    pub fn read_chain_record(&self) -> Result<Option<ChainRecord>, PersistError> {
        let path = self.chain_path();
        match fs::read(&path) {
            Ok(bytes) => from_canonical_slice(&bytes).map(Some).map_err(|source| PersistError::Decode { path, source }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_chain_record(&self, record: &ChainRecord) -> Result<(), PersistError> {
        let bytes =
            to_canonical_bytes(record).map_err(|source| PersistError::Decode { path: self.chain_path(), source })?;
        write_atomic(&self.root, &self.chain_path(), &bytes)?;
        Ok(())
    }

    pub fn append(&self, block: &Block) -> Result<(), PersistError> {
        let path = self.block_path(block.height);
        let bytes = to_canonical_bytes(block).map_err(|source| PersistError::Decode { path: path.clone(), source })?;
        write_atomic(&self.root.join("blocks"), &path, &bytes)?;
        Ok(())
    }

    /// Raw bytes of every block file from height 0 up to the first gap.
    pub fn read_raw(&self) -> Result<Vec<Vec<u8>>, PersistError> {
        let mut out = Vec::new();
        loop {
            match fs::read(self.block_path(out.len() as u64)) {
                Ok(b) => out.push(b),
                Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn load_all(&self) -> Result<Vec<Block>, PersistError> {
        let mut blocks = Vec::new();
        for (h, bytes) in self.read_raw()?.into_iter().enumerate() {
            let path = self.block_path(h as u64);
            let block: Block =
                from_canonical_slice(&bytes).map_err(|source| PersistError::Decode { path: path.clone(), source })?;
            if block.height != h as u64 {
                return Err(PersistError::Misplaced { path, found: block.height });
            }
            blocks.push(block);
        }
        Ok(blocks)
    }
}
