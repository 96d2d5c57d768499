//! Node configuration: flat `key = value` text, overridable by flags and
//! `NEUROLEDGER_DATA_DIR`.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use neuroledger_core::crypto::{Address, Digest};

pub const DATA_DIR_ENV: &str = "NEUROLEDGER_DATA_DIR";
pub const DEFAULT_INTERVAL_MS: u64 = 1000;
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7700";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sequencer,
    Follower,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "sequencer" => Ok(Mode::Sequencer),
            "follower" => Ok(Mode::Follower),
            other => Err(format!("unknown mode `{other}` (expected sequencer or follower)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequencer => "sequencer",
            Mode::Follower => "follower",
        })
    }
}

/// Raw settings as read from a config file, before validation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

const KNOWN_KEYS: [&str; 9] = [
    "chain_id",
    "mode",
    "listen",
    "block_interval_ms",
    "data_dir",
    "key_file",
    "sequencer_url",
    "sequencer_address",
    "trusted_genesis",
];

impl Settings {
    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, msg: "expected key = value".into() });
            };
            let key = k.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("unknown key `{key}`") });
            }
            if map.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("`{key}` set twice") });
            }
        }
        Ok(Settings(map))
    }

    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Settings::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Later values win.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), msg: e.to_string() }))
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeConfig {
    pub chain_id: String,
    pub mode: Mode,
    pub listen: SocketAddr,
    pub block_interval_ms: u64,
    pub data_dir: PathBuf,
    /// Sequencer signing key (sequencer mode).
    pub key_file: Option<PathBuf>,
    /// Base URL of the sequencer (follower mode).
    pub sequencer_url: Option<String>,
    /// Expected sequencer address (required for followers).
    pub sequencer_address: Option<Address>,
    /// Expected genesis hash (required for followers).
    pub trusted_genesis: Option<Digest>,
}

impl NodeConfig {
    /// Validates settings; `data_dir_env` (normally `NEUROLEDGER_DATA_DIR`) overrides `data_dir`.
    pub fn from_settings(settings: &Settings, data_dir_env: Option<String>) -> Result<NodeConfig, ConfigError> {
        let mode = settings.parsed::<Mode>("mode")?.unwrap_or(Mode::Sequencer);
        let data_dir = data_dir_env
            .filter(|s| !s.is_empty())
            .or_else(|| settings.get("data_dir").map(str::to_string))
            .ok_or(ConfigError::Missing("data_dir"))?;
        let block_interval_ms = settings.parsed::<u64>("block_interval_ms")?.unwrap_or(DEFAULT_INTERVAL_MS);
        if block_interval_ms == 0 {
            return Err(ConfigError::Value { key: "block_interval_ms".into(), msg: "must be positive".into() });
        }
        let config = NodeConfig {
            chain_id: settings.get("chain_id").unwrap_or("neuroledger").to_string(),
            mode,
            listen: settings.parsed("listen")?.unwrap_or_else(|| DEFAULT_LISTEN.parse().expect("valid default")),
            block_interval_ms,
            data_dir: PathBuf::from(data_dir),
            key_file: settings.get("key_file").map(PathBuf::from),
            sequencer_url: settings.get("sequencer_url").map(|s| s.trim_end_matches('/').to_string()),
            sequencer_address: settings.parsed("sequencer_address")?,
            trusted_genesis: settings.parsed("trusted_genesis")?,
        };
        match config.mode {
            Mode::Sequencer if config.key_file.is_none() => Err(ConfigError::Missing("key_file")),
            Mode::Follower if config.sequencer_url.is_none() => Err(ConfigError::Missing("sequencer_url")),
            Mode::Follower if config.sequencer_address.is_none() => Err(ConfigError::Missing("sequencer_address")),
            Mode::Follower if config.trusted_genesis.is_none() => Err(ConfigError::Missing("trusted_genesis")),
            _ => Ok(config),
        }
    }
}
