mod common;

use std::time::{Duration, Instant};

use common::*;
use neuroledger_core::contract::Role;
use neuroledger_core::crypto::KeyPair;
use neuroledger_node::client::Client;
use neuroledger_node::config::{Mode, NodeConfig};
use neuroledger_node::service::NodeError;
use neuroledger_node::spawn;

fn wait_for_height(client: &Client, height: u64) {
    let start = Instant::now();
    while client.status().unwrap().height < height {
        assert!(start.elapsed() < WAIT, "follower stuck below {height}");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn follower_mirrors_sequencer_and_redirects_writes() {
    let seq = start_sequencer(100);
    let (follower, fdir) = start_follower(&seq, 100);
    let fc = follower.client();
    let sc = seq.client();

    let (w, p) = (KeyPair::random(), KeyPair::random());
    register_all(&sc, &[(Role::Worker, &w), (Role::BciProvider, &p)]);

    // writes sent to the follower are redirected to the sequencer
    let tx = signed(&sc, &w, neuroledger_core::tx::TxBody::GrantAccess { grantee: p.address() });
    let resp = http().post(format!("{}/tx", follower.url())).body(b"{}".to_vec()).send().unwrap();
    assert_eq!(resp.status().as_u16(), 307);
    assert_eq!(resp.headers()["location"].to_str().unwrap(), format!("{}/tx", seq.url()));
    let resp = fc.submit(&tx).unwrap();
    assert!(resp.accepted, "{resp:?}");
    let h = sc.wait_for(&resp.tx_digest.unwrap(), WAIT).unwrap();
    wait_for_height(&fc, h);

    let (s, f) = (sc.status().unwrap(), fc.status().unwrap());
    assert_eq!((f.height, f.head_hash, f.state_root), (s.height, s.head_hash, s.state_root));
    assert_eq!(f.mode, "follower");
    assert!(!f.halted && f.alarms.is_empty());
    assert!(fc.contract(&w.address()).unwrap().state.grantees.contains_key(&p.address()));
    assert!(fc.verify().unwrap().ok);

    // a restart resumes from the persisted blocks
    let height = f.height;
    let url = seq.url();
    let config = NodeConfig {
        chain_id: "neuroledger-test".into(),
        mode: Mode::Follower,
        listen: "127.0.0.1:0".parse().unwrap(),
        block_interval_ms: 100,
        data_dir: fdir.path().to_path_buf(),
        key_file: None,
        sequencer_url: Some(url),
        sequencer_address: Some(seq.sequencer.address()),
        trusted_genesis: Some(seq.handle.node.genesis_hash()),
    };
    follower.shutdown();
    let again = spawn(config.clone()).unwrap();
    assert!(again.node.height() >= height);
    again.shutdown();

    // a different trusted genesis is refused outright
    let wrong = NodeConfig { trusted_genesis: Some(neuroledger_core::crypto::Digest([9; 32])), ..config };
    assert!(matches!(spawn(wrong), Err(NodeError::Config(_))));
}
