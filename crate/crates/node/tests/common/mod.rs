#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use neuroledger_core::contract::Role;
use neuroledger_core::crypto::{hash_bytes, KeyPair};
use neuroledger_core::tx::{SignedTransaction, TxBody};
use neuroledger_node::client::Client;
use neuroledger_node::config::{Mode, NodeConfig};
use neuroledger_node::{keyfile, now_ms, spawn, NodeHandle};

pub const WAIT: Duration = Duration::from_secs(20);

/// Field order matters: the node stops before its directory is removed.
pub struct TestNode {
    pub handle: NodeHandle,
    pub sequencer: KeyPair,
    pub dir: tempfile::TempDir,
}

impl TestNode {
    pub fn client(&self) -> Client {
        self.handle.client()
    }

    pub fn url(&self) -> String {
        self.handle.url()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().to_path_buf()
    }
}

pub fn sequencer_config(dir: &std::path::Path, key_file: PathBuf, interval_ms: u64) -> NodeConfig {
    NodeConfig {
        chain_id: "neuroledger-test".into(),
        mode: Mode::Sequencer,
        listen: "127.0.0.1:0".parse().unwrap(),
        block_interval_ms: interval_ms,
        data_dir: dir.to_path_buf(),
        key_file: Some(key_file),
        sequencer_url: None,
        sequencer_address: None,
        trusted_genesis: None,
    }
}

pub fn start_sequencer(interval_ms: u64) -> TestNode {
    let dir = tempfile::tempdir().unwrap();
    let sequencer = KeyPair::random();
    let key_file = dir.path().join("sequencer.key");
    keyfile::write_new(&key_file, &sequencer).unwrap();
    let handle = spawn(sequencer_config(dir.path(), key_file, interval_ms)).unwrap();
    TestNode { handle, sequencer, dir }
}

pub fn start_follower(of: &TestNode, interval_ms: u64) -> (NodeHandle, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let config = NodeConfig {
        chain_id: "neuroledger-test".into(),
        mode: Mode::Follower,
        listen: "127.0.0.1:0".parse().unwrap(),
        block_interval_ms: interval_ms,
        data_dir: dir.path().to_path_buf(),
        key_file: None,
        sequencer_url: Some(of.url()),
        sequencer_address: Some(of.sequencer.address()),
        trusted_genesis: Some(of.handle.node.genesis_hash()),
    };
    (spawn(config).unwrap(), dir)
}

pub fn register_body(role: Role, keys: &KeyPair) -> TxBody {
    TxBody::Register {
        role,
        public_key: keys.public_key,
        exchange_public: keys.exchange_public,
        profile_hash: hash_bytes(keys.address().to_string().as_bytes()),
    }
}

pub fn signed(client: &Client, keys: &KeyPair, body: TxBody) -> SignedTransaction {
    let nonce = client.next_nonce(&keys.address()).unwrap();
    SignedTransaction::sign(keys, nonce, body)
}

/// Submits and waits for inclusion; returns the block height.
pub fn send(client: &Client, keys: &KeyPair, body: TxBody) -> u64 {
    let tx = signed(client, keys, body);
    client.submit_and_wait(&tx, WAIT).unwrap()
}

/// Registers each identity, all in one block.
pub fn register_all(client: &Client, ids: &[(Role, &KeyPair)]) -> u64 {
    let mut digests = Vec::new();
    for (role, keys) in ids {
        let tx = SignedTransaction::sign(keys, now_ms(), register_body(*role, keys));
        let resp = client.submit(&tx).unwrap();
        assert!(resp.accepted, "{resp:?}");
        digests.push(resp.tx_digest.unwrap());
    }
    digests.iter().map(|d| client.wait_for(d, WAIT).unwrap()).max().unwrap_or(0)
}

pub fn http() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().redirect(reqwest::redirect::Policy::none()).build().unwrap()
}

/// Raw GET returning status and body bytes.
pub fn get_raw(base: &str, path: &str, header: Option<String>) -> (u16, Vec<u8>) {
    let mut req = http().get(format!("{base}{path}"));
    if let Some(h) = header {
        req = req.header(neuroledger_node::auth::READ_HEADER, h);
    }
    let resp = req.send().unwrap();
    let status = resp.status().as_u16();
    (status, resp.bytes().unwrap().to_vec())
}
