//! HTTP/JSON interface under `/v1`. Hex is lowercase throughout.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use contact_core::proof::{ContactMac, NONCE_LEN};
use contact_core::psi::{GroupElement, PsiMessage};
use contact_core::{CeTcn, DailyKey};
use serde::{Deserialize, Serialize};

use crate::batch::{InfectedBatch, OrderTag};
use crate::server::{Health, TracingServer};
use crate::tan::{TanKind, UploadAuthorization};
use crate::ServerError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TanResponse {
    pub tan: String,
    pub kind: TanKind,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

impl From<UploadAuthorization> for TanResponse {
    fn from(a: UploadAuthorization) -> Self {
        TanResponse {
            tan: a.tan,
            kind: a.kind,
            issued_at: a.issued_at,
            expires_at: a.expires_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub date: NaiveDate,
    pub key_hex: String,
}

/// Anything besides `tan` and `keys` is collected so that raw-TCN uploads
/// get a specific rejection instead of a generic parse error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub tan: String,
    #[serde(default)]
    pub keys: Vec<KeyEntry>,
    #[serde(flatten)]
    pub other: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub accepted_ce_tcns: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReleaseMode {
    #[default]
    Direct,
    Psi,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct BatchesQuery {
    #[serde(default)]
    pub since: u64,
    #[serde(default)]
    pub mode: ReleaseMode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleasedBatch {
    pub batch_id: u64,
    pub sealed_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_order: Option<Vec<CeTcn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_order: Option<Vec<CeTcn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_order_filter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_order_filter: Option<String>,
}

impl ReleasedBatch {
    pub fn direct(b: &InfectedBatch) -> Self {
        ReleasedBatch {
            batch_id: b.id(),
            sealed_at: b.sealed_at(),
            first_order: Some(b.ce_tcns(OrderTag::FirstOrder)),
            second_order: Some(b.ce_tcns(OrderTag::SecondOrder)),
            first_order_filter: None,
            second_order_filter: None,
        }
    }

    pub fn psi(b: &InfectedBatch) -> Self {
        let filters = b.filters();
        ReleasedBatch {
            batch_id: b.id(),
            sealed_at: b.sealed_at(),
            first_order: None,
            second_order: None,
            first_order_filter: Some(hex::encode(filters.first_order.encode())),
            second_order_filter: Some(hex::encode(filters.second_order.encode())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchesResponse {
    pub latest_batch_id: u64,
    pub batches: Vec<ReleasedBatch>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round1Request {
    pub client_token: String,
    pub batch_ids: Vec<u64>,
    pub elements: Vec<GroupElement>,
    /// Sizes of consecutive query groups; one group when absent.
    #[serde(default)]
    pub groups: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReply {
    pub batch_id: u64,
    pub elements: Vec<GroupElement>,
    pub groups: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round1Response {
    pub replies: Vec<BatchReply>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeResponse {
    pub nonce: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofRequest {
    pub nonce: String,
    pub macs: Vec<String>,
}

pub struct ApiError(pub ServerError);

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let retry_after = match self.0 {
            ServerError::RateLimited { retry_after_secs } => Some(retry_after_secs),
            _ => None,
        };
        let body = ErrorBody {
            code: self.0.code().into(),
            message: self.0.to_string(),
            retry_after,
        };
        let mut resp = (status, Json(body)).into_response();
        if let Some(secs) = retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, secs.to_string().parse().expect("digits"));
        }
        resp
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(ServerError::BadRequest(msg.to_string()))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(t)| t).map_err(|r| bad_request(r.body_text()))
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(server: Arc<TracingServer>) -> Router {
    Router::new()
        .route("/v1/tan", post(issue_tan))
        .route("/v1/report", post(report))
        .route("/v1/batches", get(batches))
        .route("/v1/psi/round1", post(psi_round1))
        .route("/v1/proof/challenge", post(proof_challenge))
        .route("/v1/proof/response", post(proof_response))
        .route("/v1/health", get(health))
        .with_state(server)
}

async fn issue_tan(State(server): State<Arc<TracingServer>>, headers: HeaderMap) -> ApiResult<TanResponse> {
    let credential = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ApiError(ServerError::BadCredential))?;
    Ok(Json(server.issue_tan(credential)?.into()))
}

async fn report(
    State(server): State<Arc<TracingServer>>,
    body: Result<Json<ReportRequest>, JsonRejection>,
) -> ApiResult<ReportResponse> {
    let req = json_body(body)?;
    if req.keys.is_empty() {
        return Err(ServerError::KeysRequired.into());
    }
    let keys = req
        .keys
        .iter()
        .map(|k| {
            let mut bytes = [0u8; 32];
            hex::decode_to_slice(&k.key_hex, &mut bytes)
                .map_err(|e| ServerError::InvalidReport(format!("key for {}: {e}", k.date)))?;
            Ok(DailyKey::from_parts(k.date, bytes))
        })
        .collect::<Result<Vec<_>, ServerError>>()?;
    let accepted_ce_tcns = server.accept_report(&req.tan, keys)?;
    Ok(Json(ReportResponse { accepted_ce_tcns }))
}

async fn batches(
    State(server): State<Arc<TracingServer>>,
    query: Result<Query<BatchesQuery>, QueryRejection>,
) -> ApiResult<BatchesResponse> {
    let Query(q) = query.map_err(|r| bad_request(r.body_text()))?;
    let batches = server.release(q.since);
    let latest_batch_id = server.health().latest_batch_id;
    let batches = match q.mode {
        ReleaseMode::Direct => batches.iter().map(|b| ReleasedBatch::direct(b)).collect(),
        // Filters are built lazily on first request and can take a while.
        ReleaseMode::Psi => tokio::task::spawn_blocking(move || {
            batches.iter().map(|b| ReleasedBatch::psi(b)).collect()
        })
        .await
        .map_err(bad_request)?,
    };
    Ok(Json(BatchesResponse {
        latest_batch_id,
        batches,
    }))
}

async fn psi_round1(
    State(server): State<Arc<TracingServer>>,
    body: Result<Json<Round1Request>, JsonRejection>,
) -> ApiResult<Round1Response> {
    let req = json_body(body)?;
    let groups = req.groups.unwrap_or_else(|| vec![req.elements.len()]);
    let query = PsiMessage {
        elements: req.elements,
        groups,
    };
    let replies = tokio::task::spawn_blocking(move || {
        server.psi_round1(&req.client_token, &req.batch_ids, &query)
    })
    .await
    .map_err(bad_request)??;
    Ok(Json(Round1Response {
        replies: replies
            .into_iter()
            .map(|(batch_id, m)| BatchReply {
                batch_id,
                elements: m.elements,
                groups: m.groups,
            })
            .collect(),
    }))
}

async fn proof_challenge(State(server): State<Arc<TracingServer>>) -> Json<ChallengeResponse> {
    let (nonce, expires_at) = server.proof_challenge();
    Json(ChallengeResponse {
        nonce: hex::encode(nonce),
        expires_at,
    })
}

async fn proof_response(
    State(server): State<Arc<TracingServer>>,
    body: Result<Json<ProofRequest>, JsonRejection>,
) -> ApiResult<TanResponse> {
    let req = json_body(body)?;
    let mut nonce = [0u8; NONCE_LEN];
    hex::decode_to_slice(&req.nonce, &mut nonce).map_err(|e| bad_request(format!("nonce: {e}")))?;
    let macs = req
        .macs
        .iter()
        .map(|m| {
            let mut mac: ContactMac = [0u8; 32];
            hex::decode_to_slice(m, &mut mac).map(|_| mac)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad_request(format!("mac: {e}")))?;
    Ok(Json(server.proof_response(&nonce, &macs)?.into()))
}

async fn health(State(server): State<Arc<TracingServer>>) -> Json<Health> {
    Json(server.health())
}
