//! Blocking HTTP client for a node.

use std::time::{Duration, Instant};

use neuroledger_core::canonical::{from_canonical_slice, to_canonical_bytes};
use neuroledger_core::contract::{IdentityRecord, ReportId};
use neuroledger_core::crypto::{Address, Digest, KeyPair};
use neuroledger_core::ledger::{Block, VerificationReport};
use neuroledger_core::store::StorageKey;
use neuroledger_core::tx::SignedTransaction;
use reqwest::blocking::{Client as Http, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{
    BlobStored, ContractView, ErrorBody, NodeStatus, ReportMeta, ReportView, SubmitResponse, TxState, TxStatus,
};
use crate::auth::{SignedReadRequest, READ_HEADER};
use crate::now_ms;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach node: {0}")]
    Connect(String),
    #[error("transaction rejected: {reason}: {detail}")]
    Rejected { reason: String, detail: String },
    #[error("denied: {reason}")]
    Denied { status: u16, reason: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: Http,
}

fn decode<T: Serialize + DeserializeOwned>(bytes: &[u8]) -> Result<T, ClientError> {
    from_canonical_slice(bytes).map_err(|e| ClientError::Protocol(e.to_string()))
}

impl Client {
    pub fn new(base: &str) -> Client {
        let http = Http::builder().timeout(Duration::from_secs(30)).build().expect("http client builds");
        Client { base: base.trim_end_matches('/').to_string(), http }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<Response, ClientError> {
        req.send().map_err(|e| ClientError::Connect(e.to_string()))
    }

    fn body(resp: Response) -> Result<(StatusCode, Vec<u8>), ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| ClientError::Connect(e.to_string()))?;
        Ok((status, bytes.to_vec()))
    }

    fn fail(status: StatusCode, bytes: &[u8]) -> ClientError {
        let body: Option<ErrorBody> = decode(bytes).ok();
        let reason = body.as_ref().map(|b| b.reason.clone()).unwrap_or_else(|| status.to_string());
        match status {
            StatusCode::NOT_FOUND => ClientError::NotFound(body.and_then(|b| b.detail).unwrap_or(reason)),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN | StatusCode::PAYLOAD_TOO_LARGE => {
                ClientError::Denied { status: status.as_u16(), reason }
            }
            _ => ClientError::Protocol(format!("{status}: {reason}")),
        }
    }

    fn get<T: Serialize + DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let (status, bytes) = Self::body(self.send(self.http.get(self.url(path)))?)?;
        if status != StatusCode::OK {
            return Err(Self::fail(status, &bytes));
        }
        decode(&bytes)
    }

    fn get_signed(&self, path: &str, keys: &KeyPair) -> Result<(StatusCode, Vec<u8>), ClientError> {
        let auth = SignedReadRequest::sign(keys, path, now_ms());
        Self::body(self.send(self.http.get(self.url(path)).header(READ_HEADER, auth.to_header()))?)
    }

    pub fn status(&self) -> Result<NodeStatus, ClientError> {
        self.get("/status")
    }

    /// Posts a transaction. A node-side rejection is returned as `Ok` with `accepted == false`.
    pub fn submit(&self, tx: &SignedTransaction) -> Result<SubmitResponse, ClientError> {
        let body = to_canonical_bytes(tx).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let req = self.http.post(self.url("/tx")).header("content-type", "application/json").body(body);
        let (status, bytes) = Self::body(self.send(req)?)?;
        match status {
            StatusCode::ACCEPTED | StatusCode::UNPROCESSABLE_ENTITY | StatusCode::BAD_REQUEST => decode(&bytes),
            s => Err(Self::fail(s, &bytes)),
        }
    }

    pub fn tx_status(&self, digest: &Digest) -> Result<TxStatus, ClientError> {
        self.get(&format!("/tx/{digest}"))
    }

    /// Submits and waits until the transaction is in a block; returns its height.
    pub fn submit_and_wait(&self, tx: &SignedTransaction, timeout: Duration) -> Result<u64, ClientError> {
        let resp = self.submit(tx)?;
        if !resp.accepted {
            return Err(ClientError::Rejected {
                reason: resp.reason.unwrap_or_default(),
                detail: resp.detail.unwrap_or_default(),
            });
        }
        let digest = resp.tx_digest.ok_or_else(|| ClientError::Protocol("accepted without digest".into()))?;
        self.wait_for(&digest, timeout)
    }

    pub fn wait_for(&self, digest: &Digest, timeout: Duration) -> Result<u64, ClientError> {
        let start = Instant::now();
        loop {
            let st = self.tx_status(digest)?;
            match (st.status, st.height) {
                (TxState::Committed, Some(h)) => return Ok(h),
                (TxState::Unknown, _) => {
                    return Err(ClientError::Protocol(format!("transaction {digest} was dropped")))
                }
                _ => {}
            }
            if start.elapsed() > timeout {
                return Err(ClientError::Timeout(format!("transaction {digest}")));
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn blocks(&self, from: u64) -> Result<Vec<Block>, ClientError> {
        self.get(&format!("/blocks?from={from}"))
    }

    pub fn block(&self, height: u64) -> Result<Block, ClientError> {
        self.get(&format!("/blocks/{height}"))
    }

    pub fn identity(&self, address: &Address) -> Result<IdentityRecord, ClientError> {
        self.get(&format!("/state/identity/{address}"))
    }

    pub fn contract(&self, address: &Address) -> Result<ContractView, ClientError> {
        self.get(&format!("/state/contract/{address}"))
    }

    pub fn report_meta(&self, id: &ReportId) -> Result<ReportMeta, ClientError> {
        self.get(&format!("/state/report/{id}"))
    }

    pub fn verify(&self) -> Result<VerificationReport, ClientError> {
        self.get("/verify")
    }

    pub fn put_blob(&self, bytes: Vec<u8>) -> Result<StorageKey, ClientError> {
        let req = self.http.post(self.url("/blob")).header("content-type", "application/octet-stream").body(bytes);
        let (status, body) = Self::body(self.send(req)?)?;
        if status != StatusCode::CREATED {
            return Err(Self::fail(status, &body));
        }
        Ok(decode::<BlobStored>(&body)?.storage_key)
    }

    pub fn get_blob(&self, key: &StorageKey, keys: &KeyPair) -> Result<Vec<u8>, ClientError> {
        let (status, body) = self.get_signed(&format!("/blob/{key}"), keys)?;
        if status != StatusCode::OK {
            return Err(Self::fail(status, &body));
        }
        Ok(body)
    }

    pub fn get_report(&self, id: &ReportId, keys: &KeyPair) -> Result<ReportView, ClientError> {
        let (status, body) = self.get_signed(&format!("/report/{id}"), keys)?;
        if status != StatusCode::OK {
            return Err(Self::fail(status, &body));
        }
        decode(&body)
    }

    /// Next usable nonce for `address`: above the last one used and never below the clock.
    pub fn next_nonce(&self, address: &Address) -> Result<u64, ClientError> {
        let last = match self.identity(address) {
            Ok(rec) => rec.last_nonce,
            Err(ClientError::NotFound(_)) => 0,
            Err(e) => return Err(e),
        };
        Ok((last + 1).max(now_ms()))
    }
}
