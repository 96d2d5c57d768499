//! Follower synchronization and a fault-injecting simulation harness.
//!
//! Followers pull blocks from the sequencer and fully re-verify each one
//! before appending. Any verification failure halts the follower and raises
//! an alarm; nothing is repaired automatically.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{from_canonical_slice, to_canonical_bytes, CanonicalError};
use crate::contract::Role;
use crate::crypto::{generate_keypair, hash_bytes, Digest, KeyPair};
use crate::ledger::{
    create_genesis, replay_roots, seal_block, Block, BlockVerifier, BootstrapIdentity, Chain, ChainConfig, LedgerError,
};
use crate::workload::Workload;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncCursor {
    pub next_height: u64,
    pub head_hash: Digest,
    pub last_verified_state_root: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub height: u64,
    pub block_hash: Digest,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub appended: Vec<u64>,
    /// Copies of blocks already held, ignored.
    pub duplicates: usize,
    /// Blocks beyond the next expected height, left for a later fetch.
    pub ahead: usize,
    pub alarm: Option<Alarm>,
}

/// A verifying replica of the sequencer's chain.
#[derive(Clone, Debug)]
pub struct Follower {
    config: ChainConfig,
    verifier: BlockVerifier,
    blocks: Vec<Block>,
    cursor: SyncCursor,
    alarms: Vec<Alarm>,
    halted: bool,
}

impl Follower {
    pub fn new(config: &ChainConfig, trusted_genesis: Digest) -> Follower {
        Follower {
            config: config.clone(),
            verifier: BlockVerifier::new(config, trusted_genesis),
            blocks: Vec::new(),
            cursor: SyncCursor { next_height: 0, head_hash: Digest::ZERO, last_verified_state_root: Digest::ZERO },
            alarms: Vec::new(),
            halted: false,
        }
    }

    /// Rebuilds a follower from locally persisted blocks, re-verifying all of them.
    pub fn restore(config: &ChainConfig, trusted_genesis: Digest, blocks: &[Block]) -> Result<Follower, Alarm> {
        let mut f = Follower::new(config, trusted_genesis);
        match f.ingest(blocks).alarm {
            Some(alarm) => Err(alarm),
            None => Ok(f),
        }
    }

    pub fn cursor(&self) -> &SyncCursor {
        &self.cursor
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn head(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn state(&self) -> &crate::contract::WorldState {
        self.verifier.state()
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn chain(&self) -> Option<Chain> {
        (!self.blocks.is_empty()).then(|| Chain { config: self.config.clone(), blocks: self.blocks.clone() })
    }

    fn raise(&mut self, alarm: Alarm) -> Alarm {
        log::error!("replication alarm at height {}: {}", alarm.height, alarm.reason);
        self.alarms.push(alarm.clone());
        self.halted = true;
        alarm
    }

    /// Verifies and appends whatever extends the local head, in order.
    pub fn ingest(&mut self, blocks: &[Block]) -> IngestReport {
        let mut report = IngestReport::default();
        if self.halted {
            return report;
        }
        for block in blocks {
            let next = self.cursor.next_height;
            if block.height < next {
                if self.blocks[block.height as usize] == *block {
                    report.duplicates += 1;
                    continue;
                }
                report.alarm = Some(self.raise(Alarm {
                    height: block.height,
                    block_hash: block.block_hash,
                    reason: "conflicting block served for an already verified height".into(),
                }));
                break;
            }
            if block.height > next {
                report.ahead += 1;
                continue;
            }
            let mut trial = self.verifier.clone();
            let check = trial.check(block);
            if !check.passed() {
                report.alarm = Some(self.raise(Alarm {
                    height: block.height,
                    block_hash: block.block_hash,
                    reason: check.errors.join("; "),
                }));
                break;
            }
            self.verifier = trial;
            self.blocks.push(block.clone());
            self.cursor = SyncCursor {
                next_height: block.height + 1,
                head_hash: block.block_hash,
                last_verified_state_root: block.state_root,
            };
            report.appended.push(block.height);
        }
        report
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("sequencer unreachable: {0}")]
    Unreachable(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Source of blocks, normally the sequencer's `GET /blocks?from=` endpoint.
pub trait BlockTransport {
    fn fetch_blocks(&mut self, from: u64) -> Result<Vec<Block>, TransportError>;

    fn pause(&mut self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy { max_attempts: 5, initial_backoff_ms: 50, max_backoff_ms: 1_000 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> u64 {
        self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_backoff_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncOutcome {
    pub appended: Vec<u64>,
    pub duplicates: usize,
    pub alarm: Option<Alarm>,
    pub cursor: SyncCursor,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SyncError {
    #[error("follower is halted after an alarm")]
    Halted,
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: TransportError },
}

/// One pull: fetch from the cursor (retrying with backoff), then verify and
/// append. An alarm is reported in the outcome and halts the follower.
pub fn sync_step<T: BlockTransport + ?Sized>(
    follower: &mut Follower,
    transport: &mut T,
    policy: &RetryPolicy,
) -> Result<SyncOutcome, SyncError> {
    if follower.is_halted() {
        return Err(SyncError::Halted);
    }
    let mut attempt = 0;
    let blocks = loop {
        match transport.fetch_blocks(follower.cursor.next_height) {
            Ok(b) => break b,
            Err(e) => {
                attempt += 1;
                if attempt >= policy.max_attempts.max(1) {
                    return Err(SyncError::Transport { attempts: attempt, last: e });
                }
                log::debug!("fetch failed ({e}); retry {attempt}");
                transport.pause(policy.backoff(attempt - 1));
            }
        }
    };
    let report = follower.ingest(&blocks);
    Ok(SyncOutcome {
        appended: report.appended,
        duplicates: report.duplicates,
        alarm: report.alarm,
        cursor: follower.cursor.clone(),
    })
}

/// Network faults applied by the simulated transport until quiescence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultProfile {
    pub drop: f64,
    pub delay_min_ms: u64,
    pub delay_max_ms: u64,
    pub duplicate: f64,
    /// Extra delay bound for duplicated or late responses; nonzero also
    /// lets responses that arrive together be processed out of order.
    pub reorder_window_ms: u64,
}

impl FaultProfile {
    pub fn none() -> FaultProfile {
        FaultProfile { drop: 0.0, delay_min_ms: 0, delay_max_ms: 0, duplicate: 0.0, reorder_window_ms: 0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop) || !(0.0..=1.0).contains(&self.duplicate) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if self.delay_min_ms > self.delay_max_ms {
            return Err("delay range is inverted".into());
        }
        Ok(())
    }
}

/// Integer form of a [`FaultProfile`] for reports (probabilities in parts per million).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSummary {
    pub drop_ppm: u32,
    pub delay_min_ms: u64,
    pub delay_max_ms: u64,
    pub duplicate_ppm: u32,
    pub reorder_window_ms: u64,
}

impl From<&FaultProfile> for FaultSummary {
    fn from(p: &FaultProfile) -> FaultSummary {
        FaultSummary {
            drop_ppm: (p.drop * 1e6).round() as u32,
            delay_min_ms: p.delay_min_ms,
            delay_max_ms: p.delay_max_ms,
            duplicate_ppm: (p.duplicate * 1e6).round() as u32,
            reorder_window_ms: p.reorder_window_ms,
        }
    }
}

/// A pre-sealed chain with the virtual time at which each block is published.
#[derive(Debug)]
pub struct Scenario {
    pub config: ChainConfig,
    pub sequencer: KeyPair,
    pub blocks: Vec<Block>,
    pub interval_ms: u64,
}

impl Scenario {
    /// Genesis plus `n_blocks` sealed blocks of seeded workload.
    pub fn generate(n_blocks: u64, interval_ms: u64, seed: u64) -> Result<Scenario, LedgerError> {
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
        seed_bytes[8..16].copy_from_slice(b"sequence");
        let sequencer = generate_keypair(&seed_bytes).expect("32-byte seed");
        let config = ChainConfig {
            chain_id: format!("sim-{seed}"),
            sequencer: sequencer.address(),
            block_interval_ms: interval_ms,
        };
        let boot = [BootstrapIdentity::new(Role::Operator, &sequencer, hash_bytes(b"operator"))];
        let base = 1_700_000_000_000u64;
        let (genesis, mut state) = create_genesis(&config, &boot, &sequencer, base)?;
        let mut blocks = vec![genesis];
        let mut workload = Workload::new(seed, 3, 2, 1);
        while (blocks.len() as u64) <= n_blocks {
            let parent = blocks.last().expect("genesis present");
            let at = base + (parent.height + 1) * interval_ms;
            let txs = workload.batch(&state, at, 3);
            match seal_block(parent, &state, txs, &sequencer, at) {
                Ok(out) => {
                    state = out.state;
                    blocks.push(out.block);
                }
                Err(LedgerError::EmptyBlock) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(Scenario { config, sequencer, blocks, interval_ms })
    }

    pub fn publish_at(&self, height: u64) -> u64 {
        height * self.interval_ms
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis present")
    }

    pub fn genesis_hash(&self) -> Digest {
        self.blocks[0].block_hash
    }

    /// Block `height` with one transaction signature corrupted, re-sealed by
    /// the real sequencer so its hash and proposer signature still check out.
    pub fn tampered_block(&self, height: u64) -> Block {
        let mut b = self.blocks[height as usize].clone();
        b.txs[0].signature.0[0] ^= 0x01;
        b.proposer_sig = self.sequencer.sign(&b.proposal_digest().expect("encodable"));
        b.block_hash = b.compute_hash().expect("encodable");
        b
    }
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub n_followers: usize,
    pub faults: FaultProfile,
    /// Virtual milliseconds allowed after fault quiescence.
    pub deadline_ms: u64,
    pub poll_interval_ms: u64,
    pub request_timeout_ms: u64,
    pub page_limit: usize,
    pub retry: RetryPolicy,
    pub inject_invalid_at: Option<u64>,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(n_followers: usize, faults: FaultProfile, deadline_ms: u64, seed: u64) -> SimulationConfig {
        SimulationConfig {
            n_followers,
            faults,
            deadline_ms,
            poll_interval_ms: 100,
            request_timeout_ms: 500,
            page_limit: 8,
            retry: RetryPolicy::default(),
            inject_invalid_at: None,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeightSample {
    pub at_ms: u64,
    pub height: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowerReport {
    pub index: u64,
    pub head_height: Option<u64>,
    pub head_hash: Option<Digest>,
    pub converged: bool,
    pub converged_after_quiescence_ms: Option<u64>,
    pub alarms: Vec<Alarm>,
    pub heights: Vec<HeightSample>,
    pub requests: u64,
    pub failed_requests: u64,
    pub duplicate_blocks: u64,
    /// Re-executing the follower's chain reproduces every embedded state root.
    pub replay_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub n_followers: u64,
    pub faults: FaultSummary,
    pub sequencer_height: u64,
    pub sequencer_head: Digest,
    pub quiescence_ms: u64,
    pub deadline_ms: u64,
    pub injected_invalid_at: Option<u64>,
    pub converged: bool,
    pub max_convergence_ms: Option<u64>,
    pub wall_clock_ms: u64,
    pub followers: Vec<FollowerReport>,
}

impl ConvergenceReport {
    pub fn total_alarms(&self) -> usize {
        self.followers.iter().map(|f| f.alarms.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        to_canonical_bytes(self)
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let bytes = self.to_bytes().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        std::fs::write(path, bytes)
    }

    pub fn read_from(path: &Path) -> std::io::Result<ConvergenceReport> {
        let bytes = std::fs::read(path)?;
        from_canonical_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// In-process transport with a virtual clock and injected faults.
struct SimTransport<'a> {
    served: &'a [Block],
    interval_ms: u64,
    quiesce_at: u64,
    faults: FaultProfile,
    timeout_ms: u64,
    page_limit: usize,
    rng: ChaCha8Rng,
    clock: u64,
    in_flight: Vec<(u64, Vec<Block>)>,
    requests: u64,
    failed: u64,
}

impl SimTransport<'_> {
    fn faulty(&self) -> bool {
        self.clock < self.quiesce_at
    }

    fn latency(&mut self) -> u64 {
        if self.faulty() {
            self.rng.gen_range(self.faults.delay_min_ms..=self.faults.delay_max_ms)
        } else {
            1
        }
    }

    fn chance(&mut self, p: f64) -> bool {
        self.faulty() && p > 0.0 && self.rng.gen_bool(p.min(1.0))
    }

    fn available(&self, from: u64, at: u64) -> Vec<Block> {
        self.served
            .iter()
            .filter(|b| b.height >= from && b.height * self.interval_ms <= at)
            .take(self.page_limit)
            .cloned()
            .collect()
    }

    fn time_out(&mut self) -> Result<Vec<Block>, TransportError> {
        self.failed += 1;
        self.clock += self.timeout_ms;
        Err(TransportError::Timeout)
    }
}

impl BlockTransport for SimTransport<'_> {
    fn fetch_blocks(&mut self, from: u64) -> Result<Vec<Block>, TransportError> {
        self.requests += 1;
        if self.chance(self.faults.drop) {
            return self.time_out();
        }
        let served_at = self.clock + self.latency();
        let response = self.available(from, served_at);
        let arrival = served_at + self.latency();
        if self.chance(self.faults.duplicate) {
            let extra = self.rng.gen_range(0..=self.faults.reorder_window_ms);
            self.in_flight.push((arrival + extra, response.clone()));
        }
        if self.chance(self.faults.drop) {
            return self.time_out();
        }
        if arrival - self.clock > self.timeout_ms {
            self.in_flight.push((arrival, response));
            return self.time_out();
        }
        let reorder = self.faulty() && self.faults.reorder_window_ms > 0;
        self.clock = arrival;
        let mut messages: Vec<(u64, Vec<Block>)> = Vec::new();
        let clock = self.clock;
        self.in_flight.retain(|(at, blocks)| {
            if *at <= clock {
                messages.push((*at, blocks.clone()));
                false
            } else {
                true
            }
        });
        messages.sort_by_key(|(at, _)| *at);
        messages.push((arrival, response));
        if reorder {
            messages.shuffle(&mut self.rng);
        }
        Ok(messages.into_iter().flat_map(|(_, b)| b).collect())
    }

    fn pause(&mut self, ms: u64) {
        self.clock += ms;
    }
}

fn simulate_follower(index: usize, scenario: &Scenario, served: &[Block], cfg: &SimulationConfig) -> FollowerReport {
    let quiesce_at = scenario.publish_at(scenario.head().height);
    let mut transport = SimTransport {
        served,
        interval_ms: scenario.interval_ms,
        quiesce_at,
        faults: cfg.faults,
        timeout_ms: cfg.request_timeout_ms,
        page_limit: cfg.page_limit.max(1),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)),
        clock: 0,
        in_flight: Vec::new(),
        requests: 0,
        failed: 0,
    };
    let target = scenario.head().block_hash;
    let horizon = quiesce_at + cfg.deadline_ms;
    let mut follower = Follower::new(&scenario.config, scenario.genesis_hash());
    let mut heights = Vec::new();
    let mut duplicates = 0u64;
    let mut converged_at = None;
    while transport.clock <= horizon {
        match sync_step(&mut follower, &mut transport, &cfg.retry) {
            Ok(out) => {
                duplicates += out.duplicates as u64;
                if let Some(&h) = out.appended.last() {
                    heights.push(HeightSample { at_ms: transport.clock, height: h });
                } else if out.alarm.is_none() {
                    transport.pause(cfg.poll_interval_ms);
                }
            }
            Err(SyncError::Halted) => break,
            Err(SyncError::Transport { .. }) => transport.pause(cfg.poll_interval_ms),
        }
        if follower.cursor().head_hash == target {
            converged_at = Some(transport.clock);
            break;
        }
    }
    let replay_ok = match follower.chain() {
        Some(chain) => match replay_roots(&chain) {
            Ok((_, roots)) => roots.iter().zip(&chain.blocks).all(|(r, b)| *r == b.state_root),
            Err(_) => false,
        },
        None => true,
    };
    let converged = converged_at.is_some_and(|t| t <= horizon);
    FollowerReport {
        index: index as u64,
        head_height: follower.head().map(|b| b.height),
        head_hash: follower.head().map(|b| b.block_hash),
        converged,
        converged_after_quiescence_ms: converged_at.map(|t| t.saturating_sub(quiesce_at)),
        alarms: follower.alarms().to_vec(),
        heights,
        requests: transport.requests,
        failed_requests: transport.failed,
        duplicate_blocks: duplicates,
        replay_ok,
    }
}

/// Runs one sequencer timeline against `n_followers` independent followers,
/// each on its own thread with its own seeded fault stream.
pub fn run_simulation(scenario: &Scenario, cfg: &SimulationConfig) -> Result<ConvergenceReport, String> {
    cfg.faults.validate()?;
    let mut served = scenario.blocks.clone();
    if let Some(h) = cfg.inject_invalid_at {
        if h == 0 || h > scenario.head().height {
            return Err(format!("cannot inject an invalid block at height {h}"));
        }
        served[h as usize] = scenario.tampered_block(h);
    }
    let started = Instant::now();
    let followers: Vec<FollowerReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_followers)
            .map(|i| {
                let served = &served;
                scope.spawn(move || simulate_follower(i, scenario, served, cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("follower thread panicked")).collect()
    });
    let wall_clock_ms = started.elapsed().as_millis() as u64;
    let converged = !followers.is_empty() && followers.iter().all(|f| f.converged);
    let max_convergence_ms =
        if converged { followers.iter().filter_map(|f| f.converged_after_quiescence_ms).max() } else { None };
    Ok(ConvergenceReport {
        seed: cfg.seed,
        n_followers: cfg.n_followers as u64,
        faults: FaultSummary::from(&cfg.faults),
        sequencer_height: scenario.head().height,
        sequencer_head: scenario.head().block_hash,
        quiescence_ms: scenario.publish_at(scenario.head().height),
        deadline_ms: cfg.deadline_ms,
        injected_invalid_at: cfg.inject_invalid_at,
        converged,
        max_convergence_ms,
        wall_clock_ms,
        followers,
    })
}
