//! Scripted end-to-end scenario run against a live node.
//!
//! Five fresh identities walk through registration, data upload, grant,
//! manager assignment, appointment, report update, revocation and public
//! sharing. Every expectation (including the denials) is a recorded step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::Duration;

use neuroledger_core::contract::{derive_report_id, ReportId, Role};
use neuroledger_core::crypto::{
    decrypt_payload, encrypt_payload, hash_bytes, unwrap_key, wrap_key, Address, KeyPair, SymmetricKey,
};
use neuroledger_core::store::StorageKey;
use neuroledger_core::tx::{SignedTransaction, TxBody, TxType};
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::client::{Client, ClientError};
use crate::config::{Mode, NodeConfig};
use crate::payload::DataEnvelope;
use crate::service::NodeError;
use crate::{keyfile, now_ms};

const WAIT: Duration = Duration::from_secs(30);

/// Synthetic multichannel recording as CSV: `t_ms,ch0..ch7` at 250 Hz.
pub fn eeg_fixture(seed: u64, samples: usize) -> Vec<u8> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut out = String::from("t_ms,ch0,ch1,ch2,ch3,ch4,ch5,ch6,ch7\n");
    for i in 0..samples {
        out.push_str(&(i * 4).to_string());
        for _ in 0..8 {
            let uv: i32 = rng.gen_range(-120..=120);
            out.push(',');
            out.push_str(&uv.to_string());
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Plain-text assessment a provider attaches to a report.
pub fn report_fixture(worker: &Address, data: &StorageKey, fatigue: u32) -> Vec<u8> {
    format!("worker: {worker}\nsource: {data}\nfatigue_index: {fatigue}\nrecommendation: schedule rest break\n")
        .into_bytes()
}

#[derive(Clone, Debug, Serialize)]
pub struct DemoStep {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DemoReport {
    pub steps: Vec<DemoStep>,
    pub head_height: u64,
    pub tx_types: BTreeSet<TxType>,
    pub report_id: Option<ReportId>,
    pub data_key: Option<StorageKey>,
    pub report_key: Option<StorageKey>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.ok)
    }

    fn record(&mut self, name: &str, outcome: Result<String, String>) -> bool {
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.steps.push(DemoStep { name: name.to_string(), ok, detail });
        ok
    }
}

impl fmt::Display for DemoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "[{}] {}: {}", if s.ok { "ok" } else { "FAIL" }, s.name, s.detail)?;
        }
        let types: Vec<String> = self.tx_types.iter().map(|t| t.to_string()).collect();
        writeln!(f, "head height {}, transaction types: {}", self.head_height, types.join(", "))?;
        write!(f, "{}", if self.passed() { "demo passed" } else { "demo FAILED" })
    }
}

struct Cast {
    worker: KeyPair,
    provider: KeyPair,
    other_provider: KeyPair,
    manager: KeyPair,
    outsider: KeyPair,
}

fn err(e: ClientError) -> String {
    e.to_string()
}

fn send(client: &Client, keys: &KeyPair, body: TxBody) -> Result<(u64, SignedTransaction), String> {
    let nonce = client.next_nonce(&keys.address()).map_err(err)?;
    let tx = SignedTransaction::sign(keys, nonce, body);
    let h = client.submit_and_wait(&tx, WAIT).map_err(err)?;
    Ok((h, tx))
}

fn expect_rejected(client: &Client, keys: &KeyPair, body: TxBody, code: &str) -> Result<String, String> {
    let nonce = client.next_nonce(&keys.address()).map_err(err)?;
    let resp = client.submit(&SignedTransaction::sign(keys, nonce, body)).map_err(err)?;
    match (resp.accepted, resp.reason.as_deref()) {
        (false, Some(r)) if r == code => Ok(format!("rejected with {r}")),
        (accepted, reason) => Err(format!("expected rejection {code}, got accepted={accepted} reason={reason:?}")),
    }
}

fn expect_denied<T>(r: Result<T, ClientError>, status: u16) -> Result<String, String> {
    match r {
        Err(ClientError::Denied { status: s, reason }) if s == status => Ok(format!("{s} {reason}")),
        Err(e) => Err(format!("expected {status}, got {e}")),
        Ok(_) => Err(format!("expected {status}, read succeeded")),
    }
}

fn register(role: Role, keys: &KeyPair) -> TxBody {
    TxBody::Register {
        role,
        public_key: keys.public_key,
        exchange_public: keys.exchange_public,
        profile_hash: hash_bytes(format!("{role:?}:{}", keys.address()).as_bytes()),
    }
}

/// Reads the latest record of a report as `keys` and decrypts it.
fn read_latest(client: &Client, id: &ReportId, keys: &KeyPair) -> Result<Vec<u8>, String> {
    let view = client.get_report(id, keys).map_err(err)?;
    let rec = view.records.last().ok_or("report has no records")?;
    let wrapped = rec.wrapped_keys.get(&keys.address()).ok_or("no key for reader")?;
    let key = unwrap_key(keys, wrapped).map_err(|e| e.to_string())?;
    let blob = client.get_blob(&rec.storage_key, keys).map_err(err)?;
    decrypt_payload(&key, &blob).map_err(|e| e.to_string())
}

/// Runs the scenario against `client`. Stops at the first step that cannot proceed.
pub fn run(client: &Client) -> DemoReport {
    let mut report = DemoReport::default();
    let cast = Cast {
        worker: KeyPair::random(),
        provider: KeyPair::random(),
        other_provider: KeyPair::random(),
        manager: KeyPair::random(),
        outsider: KeyPair::random(),
    };
    let _ = script(client, &cast, &mut report);
    if let Ok(blocks) = client.blocks(0) {
        report.head_height = blocks.last().map(|b| b.height).unwrap_or(0);
        report.tx_types = blocks.iter().skip(1).flat_map(|b| b.txs.iter().map(|t| t.tx_type())).collect();
    }
    report
}

fn script(client: &Client, cast: &Cast, report: &mut DemoReport) -> Option<()> {
    let w = cast.worker.address();
    let p = cast.provider.address();
    let m = cast.manager.address();

    // all five registrations land in one block
    let mut pending = Vec::new();
    let regs = [
        (Role::Worker, &cast.worker),
        (Role::BciProvider, &cast.provider),
        (Role::BciProvider, &cast.other_provider),
        (Role::ProjectManager, &cast.manager),
        (Role::Worker, &cast.outsider),
    ];
    let submitted: Result<(), String> = regs.iter().try_for_each(|(role, keys)| {
        let tx = SignedTransaction::sign(keys, now_ms(), register(*role, keys));
        let resp = client.submit(&tx).map_err(err)?;
        match resp.tx_digest {
            Some(d) if resp.accepted => {
                pending.push(d);
                Ok(())
            }
            _ => Err(format!("registration rejected: {:?}", resp.reason)),
        }
    });
    let regs = submitted.and_then(|_| {
        let heights: Result<BTreeSet<u64>, String> =
            pending.iter().map(|d| client.wait_for(d, WAIT).map_err(err)).collect();
        heights.map(|h| format!("5 identities registered at heights {h:?}"))
    });
    report.record("register identities", regs).then_some(())?;

    let data = eeg_fixture(now_ms(), 500);
    let readers = [(w, cast.worker.exchange_public), (p, cast.provider.exchange_public)];
    let stored = DataEnvelope::seal(&data, &readers)
        .map_err(|e| e.to_string())
        .and_then(|env| client.put_blob(env.to_bytes()).map_err(err));
    let data_key = match stored {
        Ok(k) => k,
        Err(e) => {
            report.record("store encrypted recording", Err(e));
            return None;
        }
    };
    report.data_key = Some(data_key);
    let body = TxBody::UploadDataIndex {
        storage_key: data_key,
        content_hash: data_key.digest(),
        meta: "eeg 8ch 250Hz".into(),
    };
    let r = send(client, &cast.worker, body).map(|(h, _)| format!("{data_key} indexed at height {h}"));
    report.record("index recording", r).then_some(())?;

    let r = send(client, &cast.worker, TxBody::GrantAccess { grantee: p }).map(|(h, _)| format!("height {h}"));
    report.record("worker grants provider", r).then_some(())?;

    let r = send(client, &cast.worker, TxBody::AssignManager { manager: m }).map(|(h, _)| format!("height {h}"));
    report.record("worker assigns manager", r).then_some(())?;

    let slot = now_ms() / 1000;
    let appointed = send(client, &cast.worker, TxBody::CreateAppointment { provider: p, slot }).and_then(|(h, tx)| {
        let id = derive_report_id(&w, &p, slot, tx.nonce);
        client.report_meta(&id).map_err(err).map(|meta| (h, meta.report_id))
    });
    let report_id = match appointed {
        Ok((h, id)) => {
            report.record("appointment opens report", Ok(format!("report {id} at height {h}")));
            id
        }
        Err(e) => {
            report.record("appointment opens report", Err(e));
            return None;
        }
    };
    report.report_id = Some(report_id);

    let fetched = client
        .get_blob(&data_key, &cast.provider)
        .map_err(err)
        .and_then(|b| DataEnvelope::from_bytes(&b).map_err(|e| e.to_string()))
        .and_then(|env| env.open(&cast.provider).map_err(|e| e.to_string()))
        .and_then(|plain| {
            if plain == data {
                Ok(format!("{} bytes decrypted", plain.len()))
            } else {
                Err("plaintext differs".into())
            }
        });
    report.record("provider reads recording", fetched).then_some(())?;

    let content = report_fixture(&w, &data_key, rand::thread_rng().gen_range(10..90));
    let key = SymmetricKey::random();
    let mut wrapped = BTreeMap::new();
    let wrapping = [(w, cast.worker.exchange_public), (m, cast.manager.exchange_public)]
        .iter()
        .try_for_each(|(a, x)| wrap_key(&key, *a, x).map(|k| drop(wrapped.insert(*a, k))));
    let updated = wrapping.map_err(|e| e.to_string()).and_then(|_| {
        let key = client.put_blob(encrypt_payload(&key, &content)).map_err(err)?;
        report.report_key = Some(key);
        let body = TxBody::UpdateReport {
            report_id,
            content_hash: key.digest(),
            storage_key: key,
            wrapped_keys: wrapped.clone(),
            updated_at: now_ms(),
        };
        send(client, &cast.provider, body).map(|(h, _)| format!("record added at height {h}"))
    });
    report.record("provider updates report", updated).then_some(())?;

    for (name, keys) in [("manager decrypts report", &cast.manager), ("worker decrypts report", &cast.worker)] {
        let r = read_latest(client, &report_id, keys).and_then(|plain| {
            if plain == content {
                Ok("byte-identical".to_string())
            } else {
                Err("plaintext differs".into())
            }
        });
        report.record(name, r);
    }

    let r = expect_denied(client.get_report(&report_id, &cast.outsider), 403);
    report.record("unrelated worker denied report", r);
    let r = expect_denied(client.get_blob(&data_key, &cast.outsider), 403);
    report.record("unrelated worker denied recording", r);
    let body = TxBody::UpdateReport {
        report_id,
        content_hash: data_key.digest(),
        storage_key: data_key,
        wrapped_keys: BTreeMap::new(),
        updated_at: now_ms(),
    };
    let r = expect_rejected(client, &cast.other_provider, body, "unauthorized");
    report.record("provider without grant cannot update", r);

    let r = send(client, &cast.worker, TxBody::RevokeAccess { grantee: p }).map(|(h, _)| format!("height {h}"));
    report.record("worker revokes provider", r).then_some(())?;
    let body = TxBody::UpdateReport {
        report_id,
        content_hash: data_key.digest(),
        storage_key: data_key,
        wrapped_keys: wrapped,
        updated_at: now_ms(),
    };
    let r = expect_rejected(client, &cast.provider, body, "unauthorized");
    report.record("revoked provider cannot update", r);
    let r = expect_denied(client.get_blob(&data_key, &cast.provider), 403);
    report.record("revoked provider denied recording", r);

    let r = send(client, &cast.worker, TxBody::ShareAnonymous { storage_key: data_key })
        .map(|(h, _)| format!("height {h}"));
    report.record("worker shares recording publicly", r).then_some(())?;
    let r = client.get_blob(&data_key, &cast.outsider).map(|b| format!("{} bytes readable", b.len())).map_err(err);
    report.record("shared recording readable by any identity", r);

    let r = client.verify().map_err(err).and_then(|v| {
        if v.ok {
            Ok(format!("{} blocks verified", v.blocks.len()))
        } else {
            Err(format!("verification failed at {:?}", v.first_failure))
        }
    });
    report.record("chain verifies", r);
    Some(())
}

/// Starts a sequencer over `data_dir`, runs the scenario, then stops it.
pub fn run_in_process(data_dir: &Path, block_interval_ms: u64) -> Result<DemoReport, NodeError> {
    let key_file = data_dir.join("sequencer.key");
    if !key_file.exists() {
        std::fs::create_dir_all(data_dir).map_err(|e| NodeError::Config(e.to_string()))?;
        keyfile::write_new(&key_file, &KeyPair::random())?;
    }
    let config = NodeConfig {
        chain_id: "neuroledger-demo".into(),
        mode: Mode::Sequencer,
        listen: "127.0.0.1:0".parse().expect("loopback address"),
        block_interval_ms,
        data_dir: data_dir.to_path_buf(),
        key_file: Some(key_file),
        sequencer_url: None,
        sequencer_address: None,
        trusted_genesis: None,
    };
    let handle = crate::spawn(config)?;
    let report = run(&handle.client());
    handle.shutdown();
    Ok(report)
}
