use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neuroledger_core::canonical::to_canonical_bytes;
use neuroledger_core::contract::{ReportId, Role};
use neuroledger_core::crypto::{
    decrypt_payload, encrypt_payload, generate_keypair, hash_bytes, unwrap_key, wrap_key, Address, Digest, KeyPair,
    SymmetricKey,
};
use neuroledger_core::store::StorageKey;
use neuroledger_core::tx::{SignedTransaction, TxBody};
use serde::Serialize;

use neuroledger_node::client::{Client, ClientError};
use neuroledger_node::config::{ConfigError, NodeConfig, Settings, DATA_DIR_ENV};
use neuroledger_node::keyfile::{self, KeyFileError};
use neuroledger_node::payload::DataEnvelope;
use neuroledger_node::service::NodeError;
use neuroledger_node::{audit, demo, now_ms};

const EXIT_FAILED: u8 = 1;
const EXIT_DENIED: u8 = 2;
const EXIT_CONNECT: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "neuroledger", version, about = "Permissioned ledger node and operator tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Remote {
    /// Node base URL.
    #[arg(long, env = "NEUROLEDGER_NODE", default_value = "http://127.0.0.1:7700")]
    node: String,
}

#[derive(Args, Clone)]
struct Signer {
    #[command(flatten)]
    remote: Remote,
    /// Key file of the acting identity.
    #[arg(long)]
    key: PathBuf,
    /// Return once accepted instead of waiting for the block.
    #[arg(long)]
    no_wait: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Worker,
    BciProvider,
    ProjectManager,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Worker => Role::Worker,
            RoleArg::BciProvider => Role::BciProvider,
            RoleArg::ProjectManager => Role::ProjectManager,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create a key file and print its address.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// File holding a 64-hex-character seed; random when omitted.
        #[arg(long)]
        seed_file: Option<PathBuf>,
    },
    /// Run a node until interrupted.
    Run(RunArgs),
    /// Register the key's identity.
    Register {
        #[command(flatten)]
        signer: Signer,
        #[arg(long, value_enum)]
        role: RoleArg,
        /// Profile text; only its hash goes on chain.
        #[arg(long, default_value = "")]
        profile: String,
    },
    /// Grant a provider access to your data.
    Grant {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        grantee: Address,
    },
    /// Withdraw a provider's access
    Revoke {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        grantee: Address,
    },
    /// Book a provider; prints the new report id.
    Appoint {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        provider: Address,
        #[arg(long)]
        slot: u64,
    },
    /// Encrypt a file, store it and index it in your contract.
    UploadData {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        file: PathBuf,
        /// Extra readers who get a wrapped copy of the key.
        #[arg(long)]
        share_with: Vec<Address>,
        #[arg(long, default_value = "")]
        meta: String,
    },
    /// Encrypt a report for the owner and manager and append it.
    UpdateReport {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        report_id: ReportId,
        #[arg(long)]
        file: PathBuf,
    },
    /// Decrypt the latest record of a report.
    ViewReport {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        report_id: ReportId,
        /// Write plaintext here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Download a data blob and decrypt it if a key is wrapped for you.
    FetchData {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        storage_key: StorageKey,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Let a project manager read your reports
    AssignManager {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        manager: Address,
    },
    /// Publish an indexed recording for anonymous reuse.
    Share {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        storage_key: StorageKey,
    },
    /// Audit a chain, offline from a data directory or through a node.
    VerifyChain {
        #[arg(long, conflicts_with = "node")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        trusted_genesis: Option<Digest>,
        #[arg(long)]
        node: Option<String>,
    },
    /// Print a node's status.
    Status {
        #[command(flatten)]
        remote: Remote,
    },
    /// Run the scripted scenario, against a fresh in-process sequencer unless --node is given.
    Demo {
        #[arg(long)]
        node: Option<String>,
        /// Keep the in-process chain here (default: a temporary directory).
        #[arg(long, conflicts_with = "node")]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        block_interval_ms: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    chain_id: Option<String>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    block_interval_ms: Option<u64>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    key_file: Option<String>,
    #[arg(long)]
    sequencer_url: Option<String>,
    #[arg(long)]
    sequencer_address: Option<String>,
    #[arg(long)]
    trusted_genesis: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Failure {
        Failure { code, message: message.to_string() }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Failure {
        let code = match &e {
            ClientError::Connect(_) | ClientError::Timeout(_) => EXIT_CONNECT,
            ClientError::Rejected { .. } | ClientError::Denied { .. } | ClientError::NotFound(_) => EXIT_DENIED,
            ClientError::Protocol(_) => EXIT_FAILED,
        };
        Failure::new(code, e)
    }
}

impl From<KeyFileError> for Failure {
    fn from(e: KeyFileError) -> Failure {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<NodeError> for Failure {
    fn from(e: NodeError) -> Failure {
        let code = match e {
            NodeError::Config(_) | NodeError::Key(_) => EXIT_CONFIG,
            _ => EXIT_FAILED,
        };
        Failure::new(code, e)
    }
}

type Outcome = Result<(), Failure>;

fn print_json<T: Serialize>(value: &T) {
    let bytes = to_canonical_bytes(value).expect("response records encode");
    println!("{}", String::from_utf8_lossy(&bytes));
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Failure::new(EXIT_FAILED, format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| Failure::new(EXIT_FAILED, e))
        }
    }
}

/// Signs and submits one transaction; waits for inclusion unless told not to.
fn submit(signer: &Signer, body: TxBody) -> Result<(KeyPair, SignedTransaction), Failure> {
    let keys = keyfile::load(&signer.key)?;
    let client = Client::new(&signer.remote.node);
    let nonce = client.next_nonce(&keys.address())?;
    let tx = SignedTransaction::sign(&keys, nonce, body);
    if signer.no_wait {
        let resp = client.submit(&tx)?;
        if !resp.accepted {
            return Err(ClientError::Rejected {
                reason: resp.reason.unwrap_or_default(),
                detail: resp.detail.unwrap_or_default(),
            }
            .into());
        }
        println!("accepted {}", resp.tx_digest.map(|d| d.to_string()).unwrap_or_default());
    } else {
        let h = client.submit_and_wait(&tx, Duration::from_secs(60))?;
        println!("committed {} at height {h}", tx.digest().expect("signed transactions encode"));
    }
    Ok((keys, tx))
}

fn exchange_key(client: &Client, address: &Address) -> Result<neuroledger_core::crypto::PublicKey, Failure> {
    Ok(client.identity(address)?.exchange_public)
}

fn keygen(out: &Path, seed_file: Option<&Path>) -> Outcome {
    let keys = match seed_file {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            let mut seed = keyfile::parse_seed_hex(&text)?;
            let keys = generate_keypair(&seed).map_err(|e| Failure::new(EXIT_CONFIG, e));
            zeroize::Zeroize::zeroize(&mut seed);
            keys?
        }
        None => KeyPair::random(),
    };
    keyfile::write_new(out, &keys)?;
    println!("{}", keys.address());
    Ok(())
}

fn run_node(args: RunArgs) -> Outcome {
    let mut settings = match &args.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let overrides = [
        ("mode", args.mode),
        ("chain_id", args.chain_id),
        ("listen", args.listen),
        ("block_interval_ms", args.block_interval_ms.map(|v| v.to_string())),
        ("data_dir", args.data_dir),
        ("key_file", args.key_file),
        ("sequencer_url", args.sequencer_url),
        ("sequencer_address", args.sequencer_address),
        ("trusted_genesis", args.trusted_genesis),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            settings.set(k, v);
        }
    }
    let config = NodeConfig::from_settings(&settings, std::env::var(DATA_DIR_ENV).ok())?;
    let handle = neuroledger_node::spawn(config)?;
    println!("{} node on {} genesis {}", handle.node.config.mode, handle.url(), handle.node.genesis_hash());
    handle.wait();
    Ok(())
}

fn upload_data(signer: &Signer, file: &Path, share_with: &[Address], meta: String) -> Outcome {
    let keys = keyfile::load(&signer.key)?;
    let client = Client::new(&signer.remote.node);
    let mut readers = vec![(keys.address(), keys.exchange_public)];
    for a in share_with {
        readers.push((*a, exchange_key(&client, a)?));
    }
    let envelope = DataEnvelope::seal(&read_file(file)?, &readers).map_err(|e| Failure::new(EXIT_FAILED, e))?;
    let storage_key = client.put_blob(envelope.to_bytes())?;
    println!("stored {storage_key}");
    submit(signer, TxBody::UploadDataIndex { storage_key, content_hash: storage_key.digest(), meta })?;
    Ok(())
}

fn update_report(signer: &Signer, report_id: ReportId, file: &Path) -> Outcome {
    let keys = keyfile::load(&signer.key)?;
    let client = Client::new(&signer.remote.node);
    let meta = client.report_meta(&report_id)?;
    let key = SymmetricKey::random();
    let mut wrapped = BTreeMap::new();
    let recipients = [Some(meta.owner), meta.manager, Some(keys.address())];
    for a in recipients.into_iter().flatten() {
        let w = wrap_key(&key, a, &exchange_key(&client, &a)?).map_err(|e| Failure::new(EXIT_FAILED, e))?;
        wrapped.insert(a, w);
    }
    let storage_key = client.put_blob(encrypt_payload(&key, &read_file(file)?))?;
    let body = TxBody::UpdateReport {
        report_id,
        content_hash: storage_key.digest(),
        storage_key,
        wrapped_keys: wrapped,
        updated_at: meta.latest_updated_at.unwrap_or(0).max(now_ms()),
    };
    submit(signer, body)?;
    Ok(())
}

fn view_report(remote: &Remote, key: &Path, report_id: ReportId, out: Option<&Path>) -> Outcome {
    let keys = keyfile::load(key)?;
    let client = Client::new(&remote.node);
    let view = client.get_report(&report_id, &keys)?;
    let rec = view.records.last().ok_or_else(|| Failure::new(EXIT_DENIED, "report has no records yet"))?;
    let wrapped = rec
        .wrapped_keys
        .get(&keys.address())
        .ok_or_else(|| Failure::new(EXIT_DENIED, "denied: no key wrapped for this identity"))?;
    let sym = unwrap_key(&keys, wrapped).map_err(|e| Failure::new(EXIT_DENIED, format!("denied: {e}")))?;
    let blob = client.get_blob(&rec.storage_key, &keys)?;
    let plain = decrypt_payload(&sym, &blob).map_err(|e| Failure::new(EXIT_FAILED, e))?;
    eprintln!("record {} by {} at {}", rec.record_id, rec.author, rec.updated_at);
    write_out(out, &plain)
}

fn fetch_data(remote: &Remote, key: &Path, storage_key: StorageKey, out: Option<&Path>) -> Outcome {
    let keys = keyfile::load(key)?;
    let client = Client::new(&remote.node);
    let blob = client.get_blob(&storage_key, &keys)?;
    let bytes = match DataEnvelope::from_bytes(&blob).ok().and_then(|env| env.open(&keys).ok()) {
        Some(plain) => plain,
        None => {
            eprintln!("no key wrapped for this identity; writing stored bytes");
            blob
        }
    };
    write_out(out, &bytes)
}

fn verify_chain(data_dir: Option<PathBuf>, trusted: Option<Digest>, node: Option<String>) -> Outcome {
    let ok = match (data_dir, node) {
        (Some(dir), _) => {
            let report = audit::audit_data_dir(&dir, trusted)?;
            print_json(&report);
            report.ok
        }
        (None, node) => {
            let client = Client::new(node.as_deref().unwrap_or("http://127.0.0.1:7700"));
            if let Some(t) = trusted {
                let g = client.block(0)?.block_hash;
                if g != t {
                    return Err(Failure::new(EXIT_FAILED, format!("node genesis {g} differs from trusted {t}")));
                }
            }
            let report = client.verify()?;
            print_json(&report);
            report.ok
        }
    };
    if ok {
        eprintln!("chain verified");
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILED, "verification failed"))
    }
}

fn run_demo(node: Option<String>, data_dir: Option<PathBuf>, interval: u64) -> Outcome {
    let report = match node {
        Some(url) => demo::run(&Client::new(&url)),
        None => {
            let tmp;
            let dir = match data_dir {
                Some(d) => d,
                None => {
                    tmp = tempfile::tempdir().map_err(|e| Failure::new(EXIT_FAILED, e))?;
                    tmp.path().to_path_buf()
                }
            };
            demo::run_in_process(&dir, interval)?
        }
    };
    println!("{report}");
    if report.passed() && report.head_height >= 8 {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILED, "demo failed"))
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Keygen { out, seed_file } => keygen(&out, seed_file.as_deref()),
        Command::Run(args) => run_node(args),
        Command::Register { signer, role, profile } => {
            let keys = keyfile::load(&signer.key)?;
            let body = TxBody::Register {
                role: role.into(),
                public_key: keys.public_key,
                exchange_public: keys.exchange_public,
                profile_hash: hash_bytes(profile.as_bytes()),
            };
            let (keys, _) = submit(&signer, body)?;
            println!("address {}", keys.address());
            if let Ok(rec) = Client::new(&signer.remote.node).identity(&keys.address()) {
                if let Some(c) = rec.contract_address {
                    println!("contract {}", c.0);
                }
            }
            Ok(())
        }
        Command::Grant { signer, grantee } => submit(&signer, TxBody::GrantAccess { grantee }).map(drop),
        Command::Revoke { signer, grantee } => submit(&signer, TxBody::RevokeAccess { grantee }).map(drop),
        Command::Appoint { signer, provider, slot } => {
            let (keys, tx) = submit(&signer, TxBody::CreateAppointment { provider, slot })?;
            let id = neuroledger_core::contract::derive_report_id(&keys.address(), &provider, slot, tx.nonce);
            println!("report {id}");
            Ok(())
        }
        Command::UploadData { signer, file, share_with, meta } => upload_data(&signer, &file, &share_with, meta),
        Command::UpdateReport { signer, report_id, file } => update_report(&signer, report_id, &file),
        Command::ViewReport { remote, key, report_id, out } => view_report(&remote, &key, report_id, out.as_deref()),
        Command::FetchData { remote, key, storage_key, out } => fetch_data(&remote, &key, storage_key, out.as_deref()),
        Command::AssignManager { signer, manager } => submit(&signer, TxBody::AssignManager { manager }).map(drop),
        Command::Share { signer, storage_key } => submit(&signer, TxBody::ShareAnonymous { storage_key }).map(drop),
        Command::VerifyChain { data_dir, trusted_genesis, node } => verify_chain(data_dir, trusted_genesis, node),
        Command::Status { remote } => {
            print_json(&Client::new(&remote.node).status()?);
            Ok(())
        }
        Command::Demo { node, data_dir, block_interval_ms } => run_demo(node, data_dir, block_interval_ms),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
