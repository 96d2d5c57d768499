pub mod api;
pub mod audit;
pub mod auth;
pub mod client;
pub mod config;
pub mod demo;
pub mod keyfile;
pub mod payload;
pub mod persist;
pub mod pool;
pub mod server;
pub mod service;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use neuroledger_core::ledger::Block;
use neuroledger_core::replication::{BlockTransport, RetryPolicy, TransportError};

use crate::client::{Client, ClientError};
use crate::config::{Mode, NodeConfig};
use crate::service::{Node, NodeError};

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Pulls blocks from a sequencer's `GET /blocks?from=`.
pub struct HttpTransport {
    client: Client,
}

impl HttpTransport {
    pub fn new(base_url: &str) -> HttpTransport {
        HttpTransport { client: Client::new(base_url) }
    }
}

impl BlockTransport for HttpTransport {
    fn fetch_blocks(&mut self, from: u64) -> Result<Vec<Block>, TransportError> {
        self.client.blocks(from).map_err(|e| match e {
            ClientError::Connect(m) => TransportError::Unreachable(m),
            ClientError::Timeout(_) => TransportError::Timeout,
            other => TransportError::Malformed(other.to_string()),
        })
    }
}

/// A running node: HTTP server plus its commit or sync thread.
pub struct NodeHandle {
    pub addr: SocketAddr,
    pub node: Arc<Node>,
    stop: Arc<AtomicBool>,
    shutdown_tx: Option<tokio::sync::oneshot::Sender<()>>,
    threads: Vec<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn client(&self) -> Client {
        Client::new(&self.url())
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    /// Blocks until the server exits.
    pub fn wait(mut self) {
        if let Some(t) = self.threads.pop() {
            let _ = t.join();
        }
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown_tx.take() {
            let _ = tx.send(());
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn sleep_unless_stopped(stop: &AtomicBool, ms: u64) {
    let deadline = std::time::Instant::now() + Duration::from_millis(ms);
    while !stop.load(Ordering::SeqCst) {
        let now = std::time::Instant::now();
        if now >= deadline {
            return;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(25)));
    }
}

/// Opens the data directory, binds the listener and starts serving.
pub fn spawn(config: NodeConfig) -> Result<NodeHandle, NodeError> {
    let listener = std::net::TcpListener::bind(config.listen)
        .map_err(|e| NodeError::Config(format!("cannot listen on {}: {e}", config.listen)))?;
    listener.set_nonblocking(true).map_err(|e| NodeError::Config(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| NodeError::Config(e.to_string()))?;
    let node = Arc::new(Node::open(config)?);
    let stop = Arc::new(AtomicBool::new(false));
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();

    let mut threads = Vec::new();
    let interval = node.config.block_interval_ms;
    let worker = {
        let node = node.clone();
        let stop = stop.clone();
        match node.config.mode {
            Mode::Sequencer => std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    sleep_unless_stopped(&stop, interval);
                    if let Err(e) = node.commit_tick() {
                        log::error!("block production failed: {e}");
                    }
                }
            }),
            Mode::Follower => std::thread::spawn(move || {
                let url = node.config.sequencer_url.clone().unwrap_or_default();
                let mut transport = HttpTransport::new(&url);
                let policy = RetryPolicy::default();
                let poll = (interval / 2).max(50);
                while !stop.load(Ordering::SeqCst) {
                    match node.sync_once(&mut transport, &policy) {
                        Ok(appended) if !appended.is_empty() => continue,
                        Ok(_) => {}
                        Err(e) => log::warn!("sync: {e}"),
                    }
                    sleep_unless_stopped(&stop, poll);
                }
            }),
        }
    };
    threads.push(worker);

    let app = server::router(node.clone());
    let server = std::thread::spawn(move || {
        let rt =
            tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
            let res = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                })
                .await;
            if let Err(e) = res {
                log::error!("server stopped: {e}");
            }
        });
    });
    threads.push(server);
    log::info!("{} listening on {addr}", node.config.mode);
    Ok(NodeHandle { addr, node, stop, shutdown_tx: Some(shutdown_tx), threads })
}
