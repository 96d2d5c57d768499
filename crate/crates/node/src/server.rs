//! HTTP endpoints. JSON bodies are canonical records; blobs are raw bytes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use neuroledger_core::canonical::{from_canonical_slice, to_canonical_bytes};
use neuroledger_core::contract::ReportId;
use neuroledger_core::crypto::{Address, Digest};
use neuroledger_core::store::{StorageKey, StoreError};
use neuroledger_core::tx::SignedTransaction;
use serde::{Deserialize, Serialize};

use crate::api::{BlobStored, ErrorBody, SubmitResponse, DEFAULT_PAGE, MAX_PAGE};
use crate::auth::READ_HEADER;
use crate::config::Mode;
use crate::service::{Node, ReadError};

type Shared = Arc<Node>;

fn canonical<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match to_canonical_bytes(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "encoding", Some(e.to_string())),
    }
}

fn error(status: StatusCode, reason: &str, detail: Option<String>) -> Response {
    let body = ErrorBody { reason: reason.to_string(), detail };
    let bytes = to_canonical_bytes(&body).expect("error body encodes");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn not_found(what: impl Into<String>) -> Response {
    error(StatusCode::NOT_FOUND, "not-found", Some(what.into()))
}

fn read_error(e: ReadError) -> Response {
    match e {
        ReadError::Unauthenticated(a) => error(StatusCode::UNAUTHORIZED, a.code(), Some(a.to_string())),
        ReadError::Denied(r) => error(StatusCode::FORBIDDEN, r.code(), None),
        ReadError::NotFound(what) => not_found(what),
        ReadError::Integrity(detail) => error(StatusCode::INTERNAL_SERVER_ERROR, "integrity", Some(detail)),
    }
}

fn parse<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T, Response> {
    raw.parse().map_err(|_| error(StatusCode::BAD_REQUEST, "malformed", Some(format!("invalid {what}: {raw}"))))
}

pub fn router(node: Shared) -> Router {
    let blob_limit = node.objects().max_blob_bytes() + 1;
    Router::new()
        .route("/status", get(status))
        .route("/tx", post(submit_tx))
        .route("/tx/{digest}", get(tx_status))
        .route("/blocks", get(blocks))
        .route("/blocks/{height}", get(block))
        .route("/state/identity/{addr}", get(identity))
        .route("/state/contract/{addr}", get(contract))
        .route("/state/report/{id}", get(report_meta))
        .route("/verify", get(verify))
        .route("/report/{id}", get(report))
        .route("/blob", post(put_blob).layer(DefaultBodyLimit::max(blob_limit)))
        .route("/blob/{key}", get(get_blob))
        .with_state(node)
}

async fn status(State(node): State<Shared>) -> Response {
    canonical(StatusCode::OK, &node.status())
}

async fn submit_tx(State(node): State<Shared>, body: Bytes) -> Response {
    if node.config.mode == Mode::Follower {
        let target = format!("{}/tx", node.config.sequencer_url.as_deref().unwrap_or_default());
        return (StatusCode::TEMPORARY_REDIRECT, [(header::LOCATION, target)]).into_response();
    }
    let tx: SignedTransaction = match from_canonical_slice(&body) {
        Ok(tx) => tx,
        Err(e) => {
            let resp = SubmitResponse {
                accepted: false,
                tx_digest: None,
                reason: Some("encoding".into()),
                detail: Some(e.to_string()),
            };
            return canonical(StatusCode::BAD_REQUEST, &resp);
        }
    };
    let resp = node.submit(tx);
    let code = if resp.accepted { StatusCode::ACCEPTED } else { StatusCode::UNPROCESSABLE_ENTITY };
    canonical(code, &resp)
}

async fn tx_status(State(node): State<Shared>, Path(raw): Path<String>) -> Response {
    match parse::<Digest>(&raw, "transaction digest") {
        Ok(d) => canonical(StatusCode::OK, &node.tx_status(d)),
        Err(r) => r,
    }
}

#[derive(Deserialize)]
struct Page {
    from: Option<u64>,
    limit: Option<usize>,
}

async fn blocks(State(node): State<Shared>, Query(page): Query<Page>) -> Response {
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    canonical(StatusCode::OK, &node.blocks_from(page.from.unwrap_or(0), limit))
}

async fn block(State(node): State<Shared>, Path(raw): Path<String>) -> Response {
    let h = match parse::<u64>(&raw, "height") {
        Ok(h) => h,
        Err(r) => return r,
    };
    match node.block(h) {
        Some(b) => canonical(StatusCode::OK, &b),
        None => not_found(format!("block {h}")),
    }
}

async fn identity(State(node): State<Shared>, Path(raw): Path<String>) -> Response {
    let addr = match parse::<Address>(&raw, "address") {
        Ok(a) => a,
        Err(r) => return r,
    };
    match node.identity(&addr) {
        Some(rec) => canonical(StatusCode::OK, &rec),
        None => not_found(format!("identity {addr}")),
    }
}

async fn contract(State(node): State<Shared>, Path(raw): Path<String>) -> Response {
    let addr = match parse::<Address>(&raw, "address") {
        Ok(a) => a,
        Err(r) => return r,
    };
    match node.contract(&addr) {
        Some(c) => canonical(StatusCode::OK, &c),
        None => not_found(format!("contract {addr}")),
    }
}

async fn report_meta(State(node): State<Shared>, Path(raw): Path<String>) -> Response {
    let id = match parse::<ReportId>(&raw, "report id") {
        Ok(id) => id,
        Err(r) => return r,
    };
    match node.report_meta(&id) {
        Some(m) => canonical(StatusCode::OK, &m),
        None => not_found(format!("report {id}")),
    }
}

async fn verify(State(node): State<Shared>) -> Response {
    match tokio::task::spawn_blocking(move || node.verify()).await {
        Ok(Ok(report)) => canonical(StatusCode::OK, &report),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "storage", Some(e.to_string())),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", Some(e.to_string())),
    }
}

fn auth_header(headers: &HeaderMap) -> Option<&str> {
    headers.get(READ_HEADER).and_then(|v| v.to_str().ok())
}

async fn report(State(node): State<Shared>, uri: Uri, headers: HeaderMap, Path(raw): Path<String>) -> Response {
    let requester = match node.authenticate(auth_header(&headers), uri.path()) {
        Ok(a) => a,
        Err(e) => return read_error(e),
    };
    let id = match parse::<ReportId>(&raw, "report id") {
        Ok(id) => id,
        Err(r) => return r,
    };
    match node.read_report(&requester, &id) {
        Ok(view) => canonical(StatusCode::OK, &view),
        Err(e) => read_error(e),
    }
}

async fn get_blob(State(node): State<Shared>, uri: Uri, headers: HeaderMap, Path(raw): Path<String>) -> Response {
    let requester = match node.authenticate(auth_header(&headers), uri.path()) {
        Ok(a) => a,
        Err(e) => return read_error(e),
    };
    let key = match parse::<StorageKey>(&raw, "storage key") {
        Ok(k) => k,
        Err(r) => return r,
    };
    match tokio::task::spawn_blocking(move || node.read_blob(&requester, &key)).await {
        Ok(Ok(bytes)) => (StatusCode::OK, [(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response(),
        Ok(Err(e)) => read_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", Some(e.to_string())),
    }
}

async fn put_blob(State(node): State<Shared>, body: Bytes) -> Response {
    match tokio::task::spawn_blocking(move || node.objects().put(&body)).await {
        Ok(Ok(storage_key)) => canonical(StatusCode::CREATED, &BlobStored { storage_key }),
        Ok(Err(StoreError::Oversize { size, max })) => {
            error(StatusCode::PAYLOAD_TOO_LARGE, "oversize", Some(format!("{size} bytes exceeds {max}")))
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "storage", Some(e.to_string())),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", Some(e.to_string())),
    }
}
