//! Seeded generator of plausible transaction batches.
//!
//! Used to drive multi-block scenarios. Most generated transactions are
//! valid against the state they are built from; the occasional invalid one
//! is simply filtered at sealing time.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contract::{Role, WorldState};
use crate::crypto::{encrypt_payload, generate_keypair, hash_bytes, wrap_key, Address, KeyPair, SymmetricKey};
use crate::store::StorageKey;
use crate::tx::{SignedTransaction, TxBody};

#[derive(Debug)]
pub struct Actor {
    pub keys: KeyPair,
    pub role: Role,
}

impl Actor {
    pub fn address(&self) -> Address {
        self.keys.address()
    }
}

#[derive(Debug)]
pub struct Workload {
    rng: ChaCha8Rng,
    actors: Vec<Actor>,
    nonces: BTreeMap<Address, u64>,
}

impl Workload {
    pub fn new(seed: u64, workers: usize, providers: usize, managers: usize) -> Workload {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actors = Vec::new();
        let roles = std::iter::repeat_n(Role::Worker, workers)
            .chain(std::iter::repeat_n(Role::BciProvider, providers))
            .chain(std::iter::repeat_n(Role::ProjectManager, managers));
        for role in roles {
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            actors.push(Actor { keys: generate_keypair(&seed).expect("32-byte seed"), role });
        }
        Workload { rng, actors, nonces: BTreeMap::new() }
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actor(&self, address: &Address) -> Option<&Actor> {
        self.actors.iter().find(|a| a.address() == *address)
    }

    fn of_role(&self, role: Role) -> Vec<usize> {
        (0..self.actors.len()).filter(|&i| self.actors[i].role == role).collect()
    }

    fn sign(&mut self, idx: usize, body: TxBody) -> SignedTransaction {
        let kp = &self.actors[idx].keys;
        let n = self.nonces.entry(kp.address()).or_insert(0);
        *n += 1;
        SignedTransaction::sign(kp, *n, body)
    }

    /// Registrations for every actor not yet known to `state`.
    pub fn registrations(&mut self, state: &WorldState) -> Vec<SignedTransaction> {
        let pending: Vec<usize> =
            (0..self.actors.len()).filter(|&i| state.identity(&self.actors[i].address()).is_none()).collect();
        pending
            .into_iter()
            .map(|i| {
                let a = &self.actors[i];
                let body = TxBody::Register {
                    role: a.role,
                    public_key: a.keys.public_key,
                    exchange_public: a.keys.exchange_public,
                    profile_hash: hash_bytes(a.address().to_string().as_bytes()),
                };
                self.sign(i, body)
            })
            .collect()
    }

    /// Up to `size` transactions built against `state`. Registrations come
    /// first; once everyone is registered the mix is random.
    pub fn batch(&mut self, state: &WorldState, at: u64, size: usize) -> Vec<SignedTransaction> {
        let regs = self.registrations(state);
        if !regs.is_empty() {
            return regs;
        }
        let workers = self.of_role(Role::Worker);
        let providers = self.of_role(Role::BciProvider);
        let managers = self.of_role(Role::ProjectManager);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            let Some(&w) = workers.choose(&mut self.rng) else { break };
            let owner = self.actors[w].address();
            let contract = state.contract_of(&owner).cloned();
            let grantees: Vec<Address> =
                contract.as_ref().map(|c| c.grantees.keys().copied().collect()).unwrap_or_default();
            let tx = match self.rng.gen_range(0..8u8) {
                0 | 1 => match providers.choose(&mut self.rng) {
                    Some(&p) => {
                        let grantee = self.actors[p].address();
                        self.sign(w, TxBody::GrantAccess { grantee })
                    }
                    None => continue,
                },
                2 => match grantees.choose(&mut self.rng) {
                    Some(&grantee) => self.sign(w, TxBody::RevokeAccess { grantee }),
                    None => continue,
                },
                3 => match grantees.choose(&mut self.rng) {
                    Some(&provider) => {
                        let slot = at + self.rng.gen_range(0..86_400_000);
                        self.sign(w, TxBody::CreateAppointment { provider, slot })
                    }
                    None => continue,
                },
                4 => {
                    let mut blob = vec![0u8; 48];
                    self.rng.fill_bytes(&mut blob);
                    let storage_key = StorageKey::for_content(&blob);
                    let meta = format!("session {}", self.rng.gen_range(0..1000));
                    self.sign(w, TxBody::UploadDataIndex { storage_key, content_hash: storage_key.digest(), meta })
                }
                5 => {
                    let Some(c) = &contract else { continue };
                    let open: Vec<_> = c.reports.keys().copied().collect();
                    let (Some(&report_id), Some(&author)) =
                        (open.choose(&mut self.rng), grantees.choose(&mut self.rng))
                    else {
                        continue;
                    };
                    let Some(a) = self.actors.iter().position(|x| x.address() == author) else { continue };
                    let mut recipients = vec![owner];
                    if let Some(m) = state.manager_of.get(&owner) {
                        recipients.push(*m);
                    }
                    let mut raw = [0u8; 32];
                    self.rng.fill_bytes(&mut raw);
                    let key = SymmetricKey(raw);
                    let mut body = vec![0u8; 64];
                    self.rng.fill_bytes(&mut body);
                    let ct = encrypt_payload(&key, &body);
                    let storage_key = StorageKey::for_content(&ct);
                    let mut wrapped_keys = BTreeMap::new();
                    for r in recipients {
                        let rec = state.identity(&r).expect("recipient registered");
                        wrapped_keys
                            .insert(r, wrap_key(&key, r, &rec.exchange_public).expect("registered keys are valid"));
                    }
                    self.sign(
                        a,
                        TxBody::UpdateReport {
                            report_id,
                            content_hash: storage_key.digest(),
                            storage_key,
                            wrapped_keys,
                            updated_at: at,
                        },
                    )
                }
                6 => match managers.choose(&mut self.rng) {
                    Some(&m) => {
                        let manager = self.actors[m].address();
                        self.sign(w, TxBody::AssignManager { manager })
                    }
                    None => continue,
                },
                _ => {
                    let Some(c) = &contract else { continue };
                    let unshared: Vec<StorageKey> =
                        c.data_index.iter().map(|e| e.storage_key).filter(|k| !state.public_data.contains(k)).collect();
                    match unshared.choose(&mut self.rng) {
                        Some(&storage_key) => self.sign(w, TxBody::ShareAnonymous { storage_key }),
                        None => continue,
                    }
                }
            };
            out.push(tx);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::ExecContext;

    #[test]
    fn batches_are_mostly_valid_and_seeded() {
        let run = |seed| {
            let mut wl = Workload::new(seed, 3, 2, 1);
            let mut state = WorldState::new("w", Address::default());
            let mut accepted = 0;
            let mut total = 0;
            for h in 1..=30u64 {
                let ctx = ExecContext { height: h, block_time: h * 1000 };
                for tx in wl.batch(&state, ctx.block_time, 4) {
                    total += 1;
                    if state.execute(&tx, ctx).is_ok() {
                        accepted += 1;
                    }
                }
            }
            (accepted, total, state.state_root().unwrap())
        };
        let (accepted, total, root) = run(7);
        assert!(accepted * 10 >= total * 8, "{accepted}/{total}");
        assert_eq!(run(7).0, accepted);
        assert_ne!(run(8).2, root);
    }
}
