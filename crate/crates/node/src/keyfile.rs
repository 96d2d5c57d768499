//! Key files: line 1 is the 32-byte seed in hex, line 2 the derived address.

use std::io::Write;
use std::path::Path;

use neuroledger_core::crypto::{generate_keypair, Address, KeyPair};
use zeroize::Zeroize;

#[derive(Debug, thiserror::Error)]
pub enum KeyFileError {
    #[error("cannot access key file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed key file: {0}")]
    Format(String),
}

pub fn parse_seed_hex(text: &str) -> Result<[u8; 32], KeyFileError> {
    let t = text.trim();
    if t.len() != 64 || t.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(KeyFileError::Format("seed must be 64 lowercase hex characters".into()));
    }
    let mut seed = [0u8; 32];
    hex::decode_to_slice(t, &mut seed).map_err(|e| KeyFileError::Format(e.to_string()))?;
    Ok(seed)
}

pub fn render(keys: &KeyPair) -> String {
    format!("{}\n{}\n", hex::encode(keys.seed()), keys.address())
}

pub fn parse(text: &str) -> Result<KeyPair, KeyFileError> {
    let mut lines = text.lines();
    let mut seed = parse_seed_hex(lines.next().unwrap_or(""))?;
    let keys = generate_keypair(&seed).map_err(|e| KeyFileError::Format(e.to_string()));
    seed.zeroize();
    let keys = keys?;
    if let Some(line) = lines.next().map(str::trim).filter(|l| !l.is_empty()) {
        let stated: Address = line.parse().map_err(KeyFileError::Format)?;
        if stated != keys.address() {
            return Err(KeyFileError::Format(format!("address line {stated} does not match the seed")));
        }
    }
    Ok(keys)
}

pub fn load(path: &Path) -> Result<KeyPair, KeyFileError> {
    let mut text = std::fs::read_to_string(path)?;
    let keys = parse(&text);
    text.zeroize();
    keys
}

/// Writes the key file readable by the owner only. Refuses to overwrite.
pub fn write_new(path: &Path, keys: &KeyPair) -> Result<(), KeyFileError> {
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    let mut text = render(keys);
    let res = f.write_all(text.as_bytes());
    text.zeroize();
    res?;
    Ok(())
}
