use neuroledger_core::canonical::{from_canonical_slice, to_canonical_bytes};
use neuroledger_core::contract::Role;
use neuroledger_core::crypto::{generate_keypair, hash_bytes, Digest, KeyPair};
use neuroledger_core::ledger::{
    create_genesis, replay, replay_roots, seal_block, verify_chain, Block, BootstrapIdentity, Chain, ChainConfig,
    LedgerError,
};
use neuroledger_core::replication::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GENESIS: &str = "62803a212aa6191801c51455994365126a1bcc69ced532393be08b2745325b9d";

fn golden_genesis() -> (ChainConfig, KeyPair, Block) {
    let seq = generate_keypair(&[0x11; 32]).unwrap();
    let worker = generate_keypair(&[0x22; 32]).unwrap();
    let config =
        ChainConfig { chain_id: "neuroledger-golden".into(), sequencer: seq.address(), block_interval_ms: 1000 };
    let boot = [
        BootstrapIdentity::new(Role::Operator, &seq, hash_bytes(b"operator")),
        BootstrapIdentity::new(Role::Worker, &worker, hash_bytes(b"worker")),
    ];
    let (genesis, _) = create_genesis(&config, &boot, &seq, 1_700_000_000_000).unwrap();
    (config, seq, genesis)
}

/// Hash of a block computed without the crate's encoder or hasher.
fn oracle_block_hash(block: &Block) -> String {
    let mut v = serde_json::to_value(block).unwrap();
    v.as_object_mut().unwrap().remove("block_hash");
    let text = serde_json::to_string(&v).unwrap();
    hex::encode(ring::digest::digest(&ring::digest::SHA256, text.as_bytes()))
}

#[test]
fn genesis_hash_is_frozen() {
    let (_, _, genesis) = golden_genesis();
    assert_eq!(genesis.block_hash.to_hex(), oracle_block_hash(&genesis));
    assert_eq!(genesis.block_hash.to_hex(), GOLDEN_GENESIS);
}

#[test]
fn every_block_hash_matches_the_oracle() {
    let sc = Scenario::generate(6, 1000, 21).unwrap();
    for b in &sc.blocks {
        assert_eq!(b.block_hash.to_hex(), oracle_block_hash(b));
    }
}

fn ten_block_chain() -> Chain {
    let sc = Scenario::generate(10, 1000, 77).unwrap();
    Chain { config: sc.config.clone(), blocks: sc.blocks }
}

#[test]
fn linkage_at_height_four() {
    let chain = ten_block_chain();
    assert_eq!(chain.blocks[4].prev_hash, chain.blocks[3].block_hash);
    assert_eq!(chain.blocks[4].height, 4);
}

#[test]
fn clean_chain_verifies() {
    let chain = ten_block_chain();
    let report = verify_chain(&chain, &chain.genesis_hash());
    assert!(report.ok, "{report:?}");
    assert_eq!(report.blocks.len(), 11);
}

#[test]
fn mutation_in_block_five_breaks_hash_and_every_later_link() {
    let mut chain = ten_block_chain();
    let genesis = chain.genesis_hash();
    chain.blocks[5].timestamp += 1;
    let report = verify_chain(&chain, &genesis);
    assert!(!report.ok);
    assert_eq!(report.first_failure, Some(5));
    assert!(!report.blocks[5].hash_ok);
    for check in &report.blocks[6..] {
        assert!(!check.link_ok, "height {}", check.height);
    }
    for check in &report.blocks[..5] {
        assert!(check.passed());
    }
}

#[test]
fn forged_proposer_signature_fails_authority() {
    let mut chain = ten_block_chain();
    let genesis = chain.genesis_hash();
    let impostor = generate_keypair(&[0x99; 32]).unwrap();
    let b = &mut chain.blocks[7];
    b.proposer_sig = impostor.sign(&b.proposal_digest().unwrap());
    b.block_hash = b.compute_hash().unwrap();
    // re-link descendants so only the signature is wrong at 7
    for h in 8..chain.blocks.len() {
        let prev = chain.blocks[h - 1].block_hash;
        chain.blocks[h].prev_hash = prev;
        chain.blocks[h].block_hash = chain.blocks[h].compute_hash().unwrap();
    }
    let report = verify_chain(&chain, &genesis);
    assert_eq!(report.first_failure, Some(7));
    assert!(!report.blocks[7].authority_ok);
    assert!(report.blocks[7].hash_ok);
}

#[test]
fn altered_state_root_diverges_on_replay() {
    let mut chain = ten_block_chain();
    chain.blocks[2].state_root = hash_bytes(b"elsewhere");
    match replay(&chain) {
        Err(LedgerError::ReplayDivergence { height, .. }) => assert_eq!(height, 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn replay_reproduces_every_root() {
    let chain = ten_block_chain();
    let (_, roots) = replay_roots(&chain).unwrap();
    let embedded: Vec<Digest> = chain.blocks.iter().map(|b| b.state_root).collect();
    assert_eq!(roots, embedded);
}

#[test]
fn mutated_genesis_fails_with_its_descendants() {
    let (config, seq, genesis) = golden_genesis();
    let state = replay(&Chain::new(config.clone(), genesis.clone())).unwrap();
    let p = generate_keypair(&[0x33; 32]).unwrap();
    let tx = neuroledger_core::tx::SignedTransaction::sign(
        &p,
        1,
        neuroledger_core::tx::TxBody::Register {
            role: Role::BciProvider,
            public_key: p.public_key,
            exchange_public: p.exchange_public,
            profile_hash: Digest::ZERO,
        },
    );
    let out = seal_block(&genesis, &state, vec![tx], &seq, genesis.timestamp + 1000).unwrap();
    let mut chain = Chain::new(config, genesis);
    chain.append(out.block).unwrap();
    assert!(verify_chain(&chain, &chain.genesis_hash()).ok);
    chain.blocks[0].txs[1].nonce = 9;
    let report = verify_chain(&chain, &hash_bytes(b"x"));
    assert_eq!(report.failed_heights(), vec![0, 1]);
}

/// Random single-byte mutations of serialized blocks never go unnoticed.
#[test]
fn single_byte_mutations_of_block_files_are_detected() {
    let chain = ten_block_chain();
    let genesis = chain.genesis_hash();
    let files: Vec<Vec<u8>> = chain.blocks.iter().map(|b| to_canonical_bytes(b).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let h = rng.gen_range(0..files.len());
        let mut bytes = files[h].clone();
        let i = rng.gen_range(0..bytes.len());
        let mut new = rng.gen::<u8>();
        while new == bytes[i] {
            new = rng.gen();
        }
        bytes[i] = new;
        let decoded: Result<Block, _> = from_canonical_slice(&bytes);
        let Ok(block) = decoded else { continue };
        let mut tampered = chain.clone();
        tampered.blocks[h] = block;
        let report = verify_chain(&tampered, &genesis);
        assert!(!report.ok, "trial {trial}: mutation at byte {i} of block {h} escaped");
    }
}

#[test]
fn encoded_chain_with_an_unreadable_file() {
    let chain = ten_block_chain();
    let mut files: Vec<Vec<u8>> = chain.blocks.iter().map(|b| to_canonical_bytes(b).unwrap()).collect();
    let clean = neuroledger_core::ledger::verify_encoded_chain(&chain.config, &chain.genesis_hash(), &files);
    assert!(clean.ok);
    files[4].truncate(10);
    let report = neuroledger_core::ledger::verify_encoded_chain(&chain.config, &chain.genesis_hash(), &files);
    assert_eq!(report.first_failure, Some(4));
    assert_eq!(report.failed_heights(), (4..=10).collect::<Vec<_>>());
}
