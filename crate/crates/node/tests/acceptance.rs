//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line even when output is captured.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use neuroledger_core::canonical::{from_canonical_slice, to_canonical_bytes};
use neuroledger_core::contract::{
    derive_report_id, ContractError, Decision, DenyReason, ExecContext, ReportId, Resource, Role, WorldState,
};
use neuroledger_core::crypto::{
    decrypt_payload, encrypt_payload, generate_keypair, unwrap_key, wrap_key, Address, CryptoError, Digest, HexBytes,
    KeyPair, PublicKey, SealedEnvelope, SymmetricKey, WrappedKey,
};
use neuroledger_core::ledger::{replay_roots, Block, Chain};
use neuroledger_core::replication::{run_simulation, FaultProfile, Scenario, SimulationConfig};
use neuroledger_core::store::{ObjectStore, StorageKey};
use neuroledger_core::tx::{SignedTransaction, TxBody, TxType};
use neuroledger_node::audit::audit_data_dir;
use neuroledger_node::demo::{self, DemoReport};
use neuroledger_node::persist::BlockStore;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- tamper evidence

struct DemoChain {
    _dir: tempfile::TempDir,
    data_dir: PathBuf,
    report: DemoReport,
}

fn run_demo() -> Result<DemoChain, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data_dir = dir.path().join("node");
    let report = demo::run_in_process(&data_dir, 100).map_err(|e| e.to_string())?;
    Ok(DemoChain { _dir: dir, data_dir, report })
}

fn mutation_targets(data_dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(data_dir.join("blocks"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    let objects = ObjectStore::open(data_dir).unwrap();
    files.extend(objects.keys().unwrap().iter().map(|k| objects.path_for(k)));
    files.sort();
    files
}

fn tamper_evidence(demo: &DemoChain) -> Outcome {
    let start = Instant::now();
    let r = &demo.report;
    ensure!(r.passed(), "demo failed:\n{r}");
    ensure!(r.head_height >= 8, "demo produced only {} blocks after genesis", r.head_height);
    ensure!(r.tx_types.len() == TxType::ALL.len(), "demo covered only {:?}", r.tx_types);
    let clean = audit_data_dir(&demo.data_dir, None).map_err(|e| e.to_string())?;
    ensure!(clean.ok, "clean chain fails its audit: {clean:?}");
    let trusted = clean.genesis_hash;

    let targets = mutation_targets(&demo.data_dir);
    let objects = ObjectStore::open(&demo.data_dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3b);
    let (mut blocks_hit, mut blobs_hit) = (0, 0);
    for i in 0..100 {
        let path = targets.choose(&mut rng).unwrap();
        let original = std::fs::read(path).unwrap();
        let mut bytes = original.clone();
        let at = rng.gen_range(0..bytes.len());
        bytes[at] ^= rng.gen_range(1..=255u8);
        std::fs::write(path, &bytes).unwrap();

        let audit = audit_data_dir(&demo.data_dir, Some(trusted)).map_err(|e| e.to_string());
        let is_block = path.extension().is_some_and(|x| x == "json");
        let read_fails = if is_block {
            blocks_hit += 1;
            true
        } else {
            blobs_hit += 1;
            let key: StorageKey = path.file_name().unwrap().to_str().unwrap().parse().unwrap();
            objects.get(&key).is_err()
        };
        std::fs::write(path, &original).unwrap();
        let detected = matches!(&audit, Ok(a) if !a.ok) || audit.is_err();
        ensure!(detected && read_fails, "mutation {i} of {} at byte {at} escaped detection", path.display());
    }
    let after = audit_data_dir(&demo.data_dir, Some(trusted)).map_err(|e| e.to_string())?;
    ensure!(after.ok, "restored chain no longer audits clean");
    let elapsed = start.elapsed();
    ensure!(elapsed.as_secs() < 60, "took {elapsed:?}");
    Ok(format!(
        "{} blocks, {} tx types; 100/100 mutations detected ({blocks_hit} in blocks, {blobs_hit} in blobs) in {:.1}s",
        r.head_height + 1,
        r.tx_types.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- access-control oracle

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Kind {
    Worker,
    Provider,
    Manager,
    Operator,
    Unregistered,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Grant(usize, usize),
    Revoke(usize, usize),
    Assign(usize, usize),
    Index(usize, usize),
    Appoint(usize, usize, u64),
    Update(usize, usize),
    Share(usize, usize),
}

/// Rules written from the written access policy, evaluated by scanning the
/// whole event log on every question rather than keeping derived tables.
struct Oracle {
    kinds: Vec<Kind>,
    log: Vec<Op>,
    reports: Vec<(ReportId, usize)>,
}

impl Oracle {
    fn registered(&self, i: usize) -> bool {
        self.kinds[i] != Kind::Unregistered
    }

    fn granted(&self, owner: usize, grantee: usize) -> bool {
        for op in self.log.iter().rev() {
            match *op {
                Op::Grant(o, g) if o == owner && g == grantee => return true,
                Op::Revoke(o, g) if o == owner && g == grantee => return false,
                _ => {}
            }
        }
        false
    }

    fn manager(&self, worker: usize) -> Option<usize> {
        self.log.iter().rev().find_map(|op| match *op {
            Op::Assign(w, m) if w == worker => Some(m),
            _ => None,
        })
    }

    fn indexed(&self, owner: usize, key: usize) -> bool {
        self.log.iter().any(|op| matches!(*op, Op::Index(o, k) if o == owner && k == key))
    }

    fn public(&self, key: usize) -> bool {
        self.log.iter().any(|op| matches!(*op, Op::Share(_, k) if k == key))
    }

    fn authored(&self, author: usize, report: usize) -> bool {
        self.log.iter().any(|op| matches!(*op, Op::Update(a, r) if a == author && r == report))
    }

    fn succeeds(&self, op: Op) -> bool {
        use Kind::*;
        match op {
            Op::Grant(o, g) => self.kinds[o] == Worker && self.kinds[g] == Provider,
            Op::Revoke(o, g) => self.kinds[o] == Worker && self.registered(g),
            Op::Assign(w, m) => self.kinds[w] == Worker && self.kinds[m] == Manager,
            Op::Index(o, _) => self.kinds[o] == Worker,
            Op::Appoint(o, p, _) => self.kinds[o] == Worker && self.granted(o, p),
            Op::Update(a, r) => self.registered(a) && r < self.reports.len() && self.granted(self.reports[r].1, a),
            Op::Share(o, k) => self.kinds[o] == Worker && self.indexed(o, k) && !self.public(k),
        }
    }

    fn data(&self, req: usize, owner: usize, key: usize) -> Decision {
        if !self.registered(req) {
            Decision::Deny(DenyReason::UnknownIdentity)
        } else if !self.indexed(owner, key) {
            Decision::Deny(DenyReason::NotFound)
        } else if req == owner || self.granted(owner, req) || self.public(key) {
            Decision::Allow
        } else {
            Decision::Deny(DenyReason::NotPermitted)
        }
    }

    fn report(&self, req: usize, report: Option<usize>) -> Decision {
        if !self.registered(req) {
            return Decision::Deny(DenyReason::UnknownIdentity);
        }
        let Some(r) = report else { return Decision::Deny(DenyReason::NotFound) };
        let owner = self.reports[r].1;
        if req == owner || self.authored(req, r) || self.manager(owner) == Some(req) {
            Decision::Allow
        } else {
            Decision::Deny(DenyReason::NotPermitted)
        }
    }
}

fn dummy_key(recipient: Address) -> WrappedKey {
    WrappedKey {
        recipient,
        envelope: SealedEnvelope {
            ephemeral_public: PublicKey([0; 32]),
            nonce: HexBytes(vec![0; 24]),
            ciphertext: HexBytes(vec![0; 48]),
        },
    }
}

fn access_oracle() -> Outcome {
    const CASES: usize = 10_000;
    let pool: Vec<KeyPair> =
        (0..12u8).map(|i| generate_keypair(&[i.wrapping_mul(37).wrapping_add(1); 32]).unwrap()).collect();
    let keys: Vec<StorageKey> = (0..3).map(|i| StorageKey::for_content(format!("blob {i}").as_bytes())).collect();
    let kinds = [Kind::Worker, Kind::Provider, Kind::Manager, Kind::Operator, Kind::Unregistered];
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce55);
    let (mut queries, mut op_checks) = (0u64, 0u64);
    let mut outcomes: BTreeMap<String, u64> = BTreeMap::new();
    let mut seen_kinds = HashSet::new();

    for case in 0..CASES {
        let n = rng.gen_range(1..=6);
        let ids: Vec<&KeyPair> = pool.choose_multiple(&mut rng, n).collect();
        let addr: Vec<Address> = ids.iter().map(|k| k.address()).collect();
        let case_kinds: Vec<Kind> = (0..n).map(|_| *kinds.choose(&mut rng).unwrap()).collect();
        let mut combo: Vec<_> = case_kinds.iter().map(|k| *k as u8).collect();
        combo.sort();
        seen_kinds.insert(combo);

        let mut state = WorldState::new("oracle", Address([0xee; 20]));
        for (i, k) in case_kinds.iter().enumerate() {
            let role = match k {
                Kind::Worker => Role::Worker,
                Kind::Provider => Role::BciProvider,
                Kind::Manager => Role::ProjectManager,
                Kind::Operator => Role::Operator,
                Kind::Unregistered => continue,
            };
            state.apply_register(addr[i], role, ids[i].public_key, ids[i].exchange_public, Digest::ZERO).unwrap();
        }
        let mut oracle = Oracle { kinds: case_kinds, log: Vec::new(), reports: Vec::new() };

        let len = rng.gen_range(0..=20);
        for step in 0..len {
            // mostly pick identities whose role fits the operation, so states get interesting
            let pick = |want: Kind, rng: &mut ChaCha8Rng| -> usize {
                let fit: Vec<usize> = (0..n).filter(|&i| oracle.kinds[i] == want).collect();
                if !fit.is_empty() && rng.gen_bool(0.8) {
                    *fit.choose(rng).unwrap()
                } else {
                    rng.gen_range(0..n)
                }
            };
            let k = rng.gen_range(0..keys.len());
            let op = match rng.gen_range(0..7) {
                0 => Op::Grant(pick(Kind::Worker, &mut rng), pick(Kind::Provider, &mut rng)),
                1 => Op::Revoke(pick(Kind::Worker, &mut rng), pick(Kind::Provider, &mut rng)),
                2 => Op::Assign(pick(Kind::Worker, &mut rng), pick(Kind::Manager, &mut rng)),
                3 => Op::Index(pick(Kind::Worker, &mut rng), k),
                4 => Op::Appoint(pick(Kind::Worker, &mut rng), pick(Kind::Provider, &mut rng), step as u64),
                5 => Op::Update(pick(Kind::Provider, &mut rng), rng.gen_range(0..=oracle.reports.len())),
                _ => Op::Share(pick(Kind::Worker, &mut rng), k),
            };
            let expected = oracle.succeeds(op);
            let actual = match op {
                Op::Grant(o, g) => state.apply_grant(addr[o], addr[g], step as u64).map(drop),
                Op::Revoke(o, g) => state.apply_revoke(addr[o], addr[g]).map(drop),
                Op::Assign(w, m) => state.apply_assign_manager(addr[w], addr[m]),
                Op::Index(o, k) => {
                    state.apply_upload_data_index(addr[o], keys[k], keys[k].digest(), String::new(), step as u64)
                }
                Op::Appoint(o, p, slot) => state.apply_appointment(addr[o], addr[p], slot, case as u64).map(|id| {
                    oracle.reports.push((id, o));
                }),
                Op::Update(author, r) => {
                    let id = oracle.reports.get(r).map(|x| x.0).unwrap_or(ReportId([0xab; 16]));
                    let owner = oracle.reports.get(r).map(|x| x.1);
                    let mut wrapped = BTreeMap::new();
                    for who in owner.into_iter().chain(owner.and_then(|o| oracle.manager(o))) {
                        wrapped.insert(addr[who], dummy_key(addr[who]));
                    }
                    state
                        .apply_update_report(addr[author], id, keys[0].digest(), keys[0], wrapped, step as u64)
                        .map(drop)
                }
                Op::Share(o, k) => state.apply_share_anonymous(addr[o], keys[k]).map(drop),
            };
            op_checks += 1;
            ensure!(
                actual.is_ok() == expected,
                "case {case} step {step}: {op:?} contract={actual:?} oracle={expected}"
            );
            if expected {
                oracle.log.push(op);
            }
        }

        for req in 0..n {
            for owner in 0..n {
                for k in 0..keys.len() {
                    let got = state
                        .check_permission(&addr[req], &Resource::Data { owner: addr[owner], storage_key: keys[k] });
                    let want = oracle.data(req, owner, k);
                    ensure!(got == want, "case {case}: data({req},{owner},{k}) contract={got:?} oracle={want:?}");
                    queries += 1;
                    *outcomes.entry(format!("{got:?}")).or_default() += 1;
                }
            }
            for r in (0..oracle.reports.len()).map(Some).chain([None]) {
                let id = r.map(|r| oracle.reports[r].0).unwrap_or(ReportId([0xab; 16]));
                let got = state.check_permission(&addr[req], &Resource::Report { report_id: id });
                let want = oracle.report(req, r);
                ensure!(got == want, "case {case}: report({req},{r:?}) contract={got:?} oracle={want:?}");
                queries += 1;
                *outcomes.entry(format!("{got:?}")).or_default() += 1;
            }
        }
    }
    Ok(format!(
        "{CASES}/{CASES} random states agree ({queries} permission queries {outcomes:?}; {op_checks} operation outcomes; {} role multisets)",
        seen_kinds.len()
    ))
}

// ---------------------------------------------------------------- report lifecycle

fn register_tx(kp: &KeyPair, role: Role) -> SignedTransaction {
    SignedTransaction::sign(
        kp,
        1,
        TxBody::Register {
            role,
            public_key: kp.public_key,
            exchange_public: kp.exchange_public,
            profile_hash: Digest::ZERO,
        },
    )
}

fn report_lifecycle() -> Outcome {
    // 10,000 appointments across 10 workers and 10 providers
    let workers: Vec<KeyPair> = (0..10u8).map(|i| generate_keypair(&[100 + i; 32]).unwrap()).collect();
    let providers: Vec<KeyPair> = (0..10u8).map(|i| generate_keypair(&[200 + i; 32]).unwrap()).collect();
    let mut state = WorldState::new("lifecycle", Address([0xee; 20]));
    for (kp, role) in workers.iter().map(|k| (k, Role::Worker)).chain(providers.iter().map(|k| (k, Role::BciProvider)))
    {
        state.apply_register(kp.address(), role, kp.public_key, kp.exchange_public, Digest::ZERO).unwrap();
    }
    for w in &workers {
        for p in &providers {
            state.apply_grant(w.address(), p.address(), 0).unwrap();
        }
    }
    let mut ids = HashSet::new();
    for i in 0..10_000u64 {
        let w = workers[(i % 10) as usize].address();
        let p = providers[((i / 10) % 10) as usize].address();
        let id = state.apply_appointment(w, p, i / 100, 1_000 + i).map_err(|e| format!("appointment {i}: {e}"))?;
        ensure!(id == derive_report_id(&w, &p, i / 100, 1_000 + i), "report id derivation differs");
        ids.insert(id);
    }
    ensure!(ids.len() == 10_000, "{} collisions among report ids", 10_000 - ids.len());
    let again = state.apply_appointment(workers[0].address(), providers[0].address(), 0, 1_000);
    ensure!(matches!(again, Err(ContractError::Duplicate(_))), "repeated appointment accepted: {again:?}");

    // full signed flow: update, revoke, rejected update
    let w = generate_keypair(&[1; 32]).unwrap();
    let p = generate_keypair(&[2; 32]).unwrap();
    let m = generate_keypair(&[3; 32]).unwrap();
    let others =
        [generate_keypair(&[4; 32]).unwrap(), generate_keypair(&[5; 32]).unwrap(), generate_keypair(&[6; 32]).unwrap()];
    let mut s = WorldState::new("lifecycle", Address([0xee; 20]));
    let mut height = 1;
    let mut exec = |s: &mut WorldState, tx: SignedTransaction| {
        height += 1;
        s.execute(&tx, ExecContext { height, block_time: 1_000 * height })
    };
    exec(&mut s, register_tx(&w, Role::Worker)).unwrap();
    exec(&mut s, register_tx(&p, Role::BciProvider)).unwrap();
    exec(&mut s, register_tx(&m, Role::ProjectManager)).unwrap();
    exec(&mut s, register_tx(&others[0], Role::BciProvider)).unwrap();
    exec(&mut s, register_tx(&others[1], Role::ProjectManager)).unwrap();
    exec(&mut s, register_tx(&others[2], Role::Worker)).unwrap();
    exec(&mut s, SignedTransaction::sign(&w, 2, TxBody::GrantAccess { grantee: p.address() })).unwrap();
    exec(&mut s, SignedTransaction::sign(&w, 3, TxBody::AssignManager { manager: m.address() })).unwrap();
    exec(&mut s, SignedTransaction::sign(&w, 4, TxBody::CreateAppointment { provider: p.address(), slot: 1 })).unwrap();
    let report_id = derive_report_id(&w.address(), &p.address(), 1, 4);

    let plaintext = b"fatigue index 61; attention lapses 3".to_vec();
    let key = SymmetricKey::random();
    let blob = encrypt_payload(&key, &plaintext);
    let storage_key = StorageKey::for_content(&blob);
    let wrapped: BTreeMap<Address, WrappedKey> =
        [&w, &m].iter().map(|kp| (kp.address(), wrap_key(&key, kp.address(), &kp.exchange_public).unwrap())).collect();
    let update = |nonce, at| {
        let body = TxBody::UpdateReport {
            report_id,
            content_hash: storage_key.digest(),
            storage_key,
            wrapped_keys: wrapped.clone(),
            updated_at: at,
        };
        SignedTransaction::sign(&p, nonce, body)
    };
    exec(&mut s, update(2, 10)).map_err(|e| format!("granted provider update: {e}"))?;
    exec(&mut s, SignedTransaction::sign(&w, 5, TxBody::RevokeAccess { grantee: p.address() })).unwrap();
    let rejected = exec(&mut s, update(3, 20));
    ensure!(matches!(rejected, Err(ContractError::Unauthorized(_))), "revoked provider update: {rejected:?}");
    ensure!(s.contract_of(&w.address()).unwrap().reports[&report_id].len() == 1, "rejected update changed history");

    // owner and manager decrypt byte-identically; everyone else fails authentication
    let record = &s.contract_of(&w.address()).unwrap().reports[&report_id][0];
    for reader in [&w, &m] {
        let k = unwrap_key(reader, &record.wrapped_keys[&reader.address()]).map_err(|e| e.to_string())?;
        let out = decrypt_payload(&k, &blob).map_err(|e| e.to_string())?;
        ensure!(out == plaintext, "{} decrypted different bytes", reader.address());
    }
    let mut denied = 0;
    for outsider in others.iter().chain([&p]) {
        for wk in record.wrapped_keys.values() {
            let r = unwrap_key(outsider, wk);
            ensure!(matches!(r, Err(CryptoError::Authentication)), "{} unwrapped a key: {r:?}", outsider.address());
            denied += 1;
        }
    }
    let guess = decrypt_payload(&SymmetricKey::random(), &blob);
    ensure!(matches!(guess, Err(CryptoError::Authentication)), "random key decrypted the report");
    Ok(format!(
        "10000 appointments, 10000 distinct report ids; revoked update rejected; owner+manager decrypt identically; {denied}/{denied} outsider unwraps fail authentication"
    ))
}

// ---------------------------------------------------------------- replication

fn replication() -> Outcome {
    let faults =
        FaultProfile { drop: 0.10, delay_min_ms: 0, delay_max_ms: 200, duplicate: 0.05, reorder_window_ms: 200 };
    let mut worst_virtual = 0;
    let mut worst_wall = 0;
    let seeds = 24u64;
    for seed in 0..seeds {
        let sc = Scenario::generate(20, 1000, 5_000 + seed).map_err(|e| e.to_string())?;
        let report = run_simulation(&sc, &SimulationConfig::new(3, faults, 10_000, seed))?;
        ensure!(report.converged, "seed {seed} did not converge: {report:?}");
        ensure!(report.total_alarms() == 0, "seed {seed} raised alarms");
        for f in &report.followers {
            ensure!(f.head_hash == Some(report.sequencer_head), "seed {seed} follower {} head differs", f.index);
            ensure!(f.replay_ok, "seed {seed} follower {} replay mismatch", f.index);
        }
        let virt = report.max_convergence_ms.unwrap_or(u64::MAX);
        ensure!(virt <= 10_000, "seed {seed} converged {virt} ms after quiescence");
        ensure!(report.wall_clock_ms <= 10_000, "seed {seed} took {} ms of real time", report.wall_clock_ms);
        worst_virtual = worst_virtual.max(virt);
        worst_wall = worst_wall.max(report.wall_clock_ms);
    }
    let mut rejected = 0;
    for seed in 0..5u64 {
        let sc = Scenario::generate(20, 1000, 9_000 + seed).map_err(|e| e.to_string())?;
        let bad_height = 8 + seed * 2;
        let bad = sc.tampered_block(bad_height);
        let mut cfg = SimulationConfig::new(3, faults, 10_000, seed);
        cfg.inject_invalid_at = Some(bad_height);
        let report = run_simulation(&sc, &cfg)?;
        for f in &report.followers {
            ensure!(!f.alarms.is_empty(), "seed {seed} follower {} raised no alarm", f.index);
            ensure!(f.alarms.iter().all(|a| a.height == bad_height), "seed {seed} alarm at wrong height");
            ensure!(
                f.head_height.is_some_and(|h| h < bad_height),
                "seed {seed} follower {} appended past the invalid block",
                f.index
            );
            ensure!(f.head_hash != Some(bad.block_hash), "follower holds the invalid block");
            rejected += 1;
        }
    }
    Ok(format!(
        "{seeds} seeds converged (worst {worst_virtual} ms simulated after quiescence, worst run {worst_wall} ms real); invalid block alarmed and refused by {rejected}/{rejected} followers"
    ))
}

// ---------------------------------------------------------------- deterministic replay

fn load_chain(data_dir: &Path) -> Chain {
    let store = BlockStore::open(data_dir).unwrap();
    let record = store.read_chain_record().unwrap().unwrap();
    Chain { config: record.config, blocks: store.load_all().unwrap() }
}

/// Independent canonical writer over `serde_json::Value`.
fn harness_encode(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value::*;
    match v {
        Null => out.push_str("null"),
        Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Number(n) => {
            assert!(n.is_u64() || n.is_i64(), "float in record");
            out.push_str(&n.to_string());
        }
        String(s) => harness_string(s, out),
        Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                harness_encode(item, out);
            }
            out.push(']');
        }
        Object(map) => {
            let mut entries: Vec<(&std::string::String, &serde_json::Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (k, val)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                harness_string(k, out);
                out.push(':');
                harness_encode(val, out);
            }
            out.push('}');
        }
    }
}

fn harness_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const EXTRA: [char; 12] = ['"', '\\', '\n', '\t', '\u{0}', '\u{1f}', '\u{7f}', 'é', 'Ж', '\u{2028}', '😀', '/'];
    let len = rng.gen_range(0..40);
    (0..len).map(|_| if rng.gen_bool(0.3) { *EXTRA.choose(rng).unwrap() } else { rng.gen_range(' '..='~') }).collect()
}

fn random_body(rng: &mut ChaCha8Rng) -> TxBody {
    let mut bytes = |n: usize| -> Vec<u8> { (0..n).map(|_| rng.gen()).collect() };
    let addr = Address(bytes(20).try_into().unwrap());
    let digest = Digest(bytes(32).try_into().unwrap());
    let key = StorageKey::from_digest(digest);
    let pk = PublicKey(bytes(32).try_into().unwrap());
    let report_id = ReportId(bytes(16).try_into().unwrap());
    let wrapped: BTreeMap<Address, WrappedKey> = (0..(bytes(1)[0] % 3))
        .map(|i| {
            let a = Address([i; 20]);
            let env =
                SealedEnvelope { ephemeral_public: pk, nonce: HexBytes(bytes(24)), ciphertext: HexBytes(bytes(48)) };
            (a, WrappedKey { recipient: a, envelope: env })
        })
        .collect();
    match rng.gen_range(0..8) {
        0 => TxBody::Register {
            role: *[Role::Worker, Role::BciProvider, Role::ProjectManager, Role::Operator].choose(rng).unwrap(),
            public_key: pk,
            exchange_public: pk,
            profile_hash: digest,
        },
        1 => TxBody::GrantAccess { grantee: addr },
        2 => TxBody::RevokeAccess { grantee: addr },
        3 => TxBody::CreateAppointment { provider: addr, slot: rng.gen() },
        4 => TxBody::UploadDataIndex { storage_key: key, content_hash: digest, meta: random_text(rng) },
        5 => TxBody::UpdateReport {
            report_id,
            content_hash: digest,
            storage_key: key,
            wrapped_keys: wrapped,
            updated_at: rng.gen(),
        },
        6 => TxBody::AssignManager { manager: addr },
        _ => TxBody::ShareAnonymous { storage_key: key },
    }
}

fn encoders_agree<T: serde::Serialize>(record: &T) -> Result<(), String> {
    let node = to_canonical_bytes(record).map_err(|e| e.to_string())?;
    let mut harness = String::new();
    harness_encode(&serde_json::to_value(record).map_err(|e| e.to_string())?, &mut harness);
    ensure!(
        node == harness.as_bytes(),
        "encoders differ:\n node    {}\n harness {harness}",
        String::from_utf8_lossy(&node)
    );
    Ok(())
}

fn deterministic_replay(demo: &DemoChain) -> Outcome {
    let mut chains = vec![("demo", load_chain(&demo.data_dir))];
    for seed in 0..3 {
        let sc = Scenario::generate(20, 1000, 700 + seed).map_err(|e| e.to_string())?;
        chains.push(("generated", Chain { config: sc.config, blocks: sc.blocks }));
    }
    let mut heights = 0;
    for (name, chain) in &chains {
        let (_, roots) = replay_roots(chain).map_err(|e| format!("{name} chain: {e}"))?;
        ensure!(
            roots.len() == chain.blocks.len(),
            "{name} chain replayed {} of {} blocks",
            roots.len(),
            chain.blocks.len()
        );
        for (b, root) in chain.blocks.iter().zip(&roots) {
            ensure!(*root == b.state_root, "{name} chain diverges at height {}", b.height);
        }
        heights += roots.len();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
    let sample_blocks: Vec<&Block> = chains.iter().flat_map(|(_, c)| c.blocks.iter()).collect();
    for i in 0..1_000 {
        match i % 4 {
            0 | 1 => {
                let kp = generate_keypair(&rng.gen::<[u8; 32]>()).unwrap();
                let tx = SignedTransaction::sign(&kp, rng.gen(), random_body(&mut rng));
                encoders_agree(&tx)?;
                let back: SignedTransaction =
                    from_canonical_slice(&to_canonical_bytes(&tx).unwrap()).map_err(|e| e.to_string())?;
                ensure!(back == tx, "record {i} does not round-trip");
            }
            2 => encoders_agree(*sample_blocks.choose(&mut rng).unwrap())?,
            _ => {
                let kp = generate_keypair(&rng.gen::<[u8; 32]>()).unwrap();
                let header = neuroledger_node::auth::SignedReadRequest::sign(
                    &kp,
                    &format!("/report/{}", random_text(&mut rng)),
                    rng.gen(),
                );
                encoders_agree(&header)?;
            }
        }
    }
    Ok(format!(
        "{} chains, {heights} state roots reproduced; 1000/1000 random records encode identically",
        chains.len()
    ))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let demo = run_demo();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("tamper evidence", Box::new(|| demo.as_ref().map_err(Clone::clone).and_then(tamper_evidence))),
        ("access-control oracle equivalence", Box::new(access_oracle)),
        ("report lifecycle", Box::new(report_lifecycle)),
        ("replication convergence", Box::new(replication)),
        ("deterministic replay", Box::new(|| demo.as_ref().map_err(Clone::clone).and_then(deterministic_replay))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        match guarded(check) {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
