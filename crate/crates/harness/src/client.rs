//! HTTP client for the tracing server, driving the axum router in process.

use std::sync::Arc;

use axum::body::Body;
use axum::Router;
use contact_core::proof::{ContactMac, NONCE_LEN};
use contact_core::psi::{BloomFilter, PsiMessage};
use contact_core::{CeTcn, DailyKey};
use contact_server::api::{
    BatchesResponse, ChallengeResponse, ErrorBody, ProofRequest, ReleaseMode, ReleasedBatch, ReportRequest,
    ReportResponse, Round1Request, Round1Response, TanResponse,
};
use contact_server::{ManualClock, ServerConfig, TracingServer};
use http::{header, Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower::ServiceExt;

use crate::HarnessError;

/// A non-2xx answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub status: u16,
    pub body: ErrorBody,
}

pub struct ApiClient {
    router: Router,
    runtime: tokio::runtime::Runtime,
}

impl ApiClient {
    pub fn new(server: Arc<TracingServer>) -> Self {
        ApiClient {
            router: contact_server::api::router(server),
            runtime: tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("tokio runtime"),
        }
    }

    fn call<T: DeserializeOwned>(
        &self,
        method: Method,
        uri: &str,
        bearer: Option<&str>,
        body: Option<Vec<u8>>,
    ) -> Result<Result<T, Rejection>, HarnessError> {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(token) = bearer {
            req = req.header(header::AUTHORIZATION, format!("Bearer {token}"));
        }
        if body.is_some() {
            req = req.header(header::CONTENT_TYPE, "application/json");
        }
        let req = req
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .map_err(|e| HarnessError::Http(e.to_string()))?;
        let (status, bytes) = self.runtime.block_on(async {
            let resp = self.router.clone().oneshot(req).await.expect("infallible service");
            let status = resp.status();
            let bytes = resp.into_body().collect().await.map(|b| b.to_bytes());
            (status, bytes)
        });
        let bytes = bytes.map_err(|e| HarnessError::Http(e.to_string()))?;
        let decode_err = |e: serde_json::Error| HarnessError::Http(format!("{uri}: {status}: {e}"));
        if status == StatusCode::OK {
            Ok(Ok(serde_json::from_slice(&bytes).map_err(decode_err)?))
        } else {
            let body = serde_json::from_slice(&bytes).map_err(decode_err)?;
            Ok(Err(Rejection { status: status.as_u16(), body }))
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, uri: &str, body: &B) -> Result<Result<T, Rejection>, HarnessError> {
        let bytes = serde_json::to_vec(body).expect("request serializes");
        self.call(Method::POST, uri, None, Some(bytes))
    }

    pub fn issue_tan(&self, credential: &str) -> Result<Result<TanResponse, Rejection>, HarnessError> {
        self.call(Method::POST, "/v1/tan", Some(credential), None)
    }

    pub fn report(&self, tan: &str, keys: &[DailyKey]) -> Result<Result<usize, Rejection>, HarnessError> {
        let req = ReportRequest {
            tan: tan.to_owned(),
            keys: keys
                .iter()
                .map(|k| contact_server::api::KeyEntry { date: k.date(), key_hex: hex::encode(k.bytes()) })
                .collect(),
            other: Default::default(),
        };
        Ok(self.post::<_, ReportResponse>("/v1/report", &req)?.map(|r| r.accepted_ce_tcns))
    }

    /// Posts an arbitrary JSON body to the report endpoint.
    pub fn report_raw(&self, body: &serde_json::Value) -> Result<Result<usize, Rejection>, HarnessError> {
        Ok(self.post::<_, ReportResponse>("/v1/report", body)?.map(|r| r.accepted_ce_tcns))
    }

    pub fn batches(&self, since: u64, mode: ReleaseMode) -> Result<BatchesResponse, HarnessError> {
        let mode = match mode {
            ReleaseMode::Direct => "direct",
            ReleaseMode::Psi => "psi",
        };
        self.call(Method::GET, &format!("/v1/batches?since={since}&mode={mode}"), None, None)?
            .map_err(HarnessError::Rejected)
    }

    pub fn psi_round1(
        &self,
        client_token: &str,
        batch_ids: &[u64],
        query: &PsiMessage,
    ) -> Result<Result<Vec<(u64, PsiMessage)>, Rejection>, HarnessError> {
        let req = Round1Request {
            client_token: client_token.to_owned(),
            batch_ids: batch_ids.to_vec(),
            elements: query.elements.clone(),
            groups: Some(query.groups.clone()),
        };
        Ok(self.post::<_, Round1Response>("/v1/psi/round1", &req)?.map(|r| {
            r.replies
                .into_iter()
                .map(|b| (b.batch_id, PsiMessage { elements: b.elements, groups: b.groups }))
                .collect()
        }))
    }

    pub fn proof_challenge(&self) -> Result<[u8; NONCE_LEN], HarnessError> {
        let resp: ChallengeResponse = self
            .call(Method::POST, "/v1/proof/challenge", None, None)?
            .map_err(HarnessError::Rejected)?;
        let mut nonce = [0u8; NONCE_LEN];
        hex::decode_to_slice(&resp.nonce, &mut nonce).map_err(|e| HarnessError::Http(e.to_string()))?;
        Ok(nonce)
    }

    pub fn proof_response(
        &self,
        nonce: &[u8; NONCE_LEN],
        macs: &[ContactMac],
    ) -> Result<Result<TanResponse, Rejection>, HarnessError> {
        let req = ProofRequest { nonce: hex::encode(nonce), macs: macs.iter().map(hex::encode).collect() };
        self.post("/v1/proof/response", &req)
    }
}

/// Decoded filters of one PSI-mode batch.
pub struct BatchFilters {
    pub batch_id: u64,
    pub first_order: BloomFilter,
    pub second_order: BloomFilter,
}

pub fn decode_filters(batch: &ReleasedBatch) -> Result<BatchFilters, HarnessError> {
    let decode = |hex_str: &Option<String>| -> Result<BloomFilter, HarnessError> {
        let bytes = hex::decode(hex_str.as_deref().unwrap_or_default())
            .map_err(|e| HarnessError::Http(e.to_string()))?;
        BloomFilter::decode(&bytes).map_err(|e| HarnessError::Http(e.to_string()))
    };
    Ok(BatchFilters {
        batch_id: batch.batch_id,
        first_order: decode(&batch.first_order_filter)?,
        second_order: decode(&batch.second_order_filter)?,
    })
}

/// Sorted first- and second-order lists of one direct-mode batch.
pub fn direct_lists(batch: &ReleasedBatch) -> (&[CeTcn], &[CeTcn]) {
    (
        batch.first_order.as_deref().unwrap_or_default(),
        batch.second_order.as_deref().unwrap_or_default(),
    )
}

pub const MEDICAL_CREDENTIAL: &str = "harness-medical-credential";

/// In-memory server with a manual clock, reachable through an [`ApiClient`].
pub struct Backend {
    pub server: Arc<TracingServer>,
    pub clock: Arc<ManualClock>,
    pub client: ApiClient,
}

impl Backend {
    pub fn start(mut config: ServerConfig, now: chrono::DateTime<chrono::Utc>) -> Result<Self, HarnessError> {
        if config.medical_credentials.is_empty() {
            config.medical_credentials.push(MEDICAL_CREDENTIAL.to_owned());
        }
        let clock = Arc::new(ManualClock::new(now));
        let server = Arc::new(TracingServer::open(config, clock.clone())?);
        Ok(Backend { client: ApiClient::new(server.clone()), server, clock })
    }

    pub fn credential(&self) -> &str {
        &self.server.config().medical_credentials[0]
    }
}
