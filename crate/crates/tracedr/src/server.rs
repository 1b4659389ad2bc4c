//! HTTP inference service under `/v1`.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracedr_core::kg::{DrugRecord, EvidenceText};
use tracedr_core::pipeline::{check_patient, FieldIssue, Pipeline, RankedRecommendation};
use tracedr_core::graph::GraphExcerpt;
use tracedr_core::{Checkpoint, PatientEHR};

use crate::config::ServeConfig;

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    meta: Arc<Value>,
    serve: ServeConfig,
}

impl AppState {
    pub fn new(pipeline: Pipeline, ckpt: &Checkpoint, serve: ServeConfig) -> Self {
        let store = &pipeline.store;
        let meta = json!({
            "service": "tracedr",
            "version": env!("CARGO_PKG_VERSION"),
            "model": ckpt.model,
            "encoder": ckpt.encoder,
            "retrieval_k": ckpt.retrieval_k,
            "parameters": ckpt.params.num_parameters(),
            "train_config": ckpt.train_log.as_ref().map(|l| &l.config),
            "best_epoch": ckpt.train_log.as_ref().map(|l| l.best_epoch),
            "kg": {
                "drugs": store.drugs().len(),
                "diseases": store.diseases().len(),
                "ingredients": store.ingredients().len(),
            },
            "defaults": { "top_k": serve.default_top_k, "top_evidence": serve.default_top_evidence },
        });
        AppState {
            pipeline: Arc::new(pipeline),
            meta: Arc::new(meta),
            serve,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub patient: PatientEHR,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub top_evidence: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub recommendations: Vec<RankedRecommendation>,
    pub candidate_count: usize,
    pub graph: GraphExcerpt,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrugResponse {
    pub drug: DrugRecord,
    pub evidence: EvidenceText,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    fields: Vec<FieldIssue>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>, fields: Vec<FieldIssue>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
            fields,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
            fields: Vec::new(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": { "code": self.code, "message": self.message, "fields": self.fields }
        });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/health", get(health))
        .route("/v1/meta", get(meta))
        .route("/v1/drugs/{id}", get(drug))
        .route("/v1/recommend", post(recommend))
        .fallback(not_found)
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn meta(State(s): State<AppState>) -> Json<Value> {
    Json((*s.meta).clone())
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such route".into(),
        fields: Vec::new(),
    }
}

async fn drug(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<DrugResponse>, ApiError> {
    let store = &s.pipeline.store;
    let (Ok(record), Ok(evidence)) = (store.drug(&id), store.verbalize(&id)) else {
        return Err(ApiError {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: format!("unknown drug id {id:?}"),
            fields: Vec::new(),
        });
    };
    Ok(Json(DrugResponse {
        drug: record.clone(),
        evidence,
    }))
}

fn parse_request(body: &[u8]) -> Result<RecommendRequest, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.inner().to_string();
        ApiError::bad_request(
            "request body is not a valid recommend request",
            vec![FieldIssue {
                field: if field == "." { String::new() } else { field },
                message,
            }],
        )
    })
}

async fn recommend(State(s): State<AppState>, body: Bytes) -> Result<Json<RecommendResponse>, ApiError> {
    let t0 = Instant::now();
    let req = parse_request(&body)?;
    let top_k = req.top_k.unwrap_or(s.serve.default_top_k);
    let top_evidence = req.top_evidence.unwrap_or(s.serve.default_top_evidence);
    let mut issues: Vec<FieldIssue> = check_patient(&s.pipeline.store, &req.patient)
        .into_iter()
        .map(|i| FieldIssue {
            field: format!("patient.{}", i.field),
            message: i.message,
        })
        .collect();
    if top_k == 0 {
        issues.push(FieldIssue {
            field: "top_k".into(),
            message: "must be at least 1".into(),
        });
    }
    if !issues.is_empty() {
        return Err(ApiError::bad_request("patient record failed validation", issues));
    }
    let patient = req.patient.without_ground_truth();
    let pipeline = s.pipeline.clone();
    let rec = tokio::task::spawn_blocking(move || pipeline.recommend(&patient, top_k, top_evidence))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(RecommendResponse {
        recommendations: rec.recommendations,
        candidate_count: rec.candidate_count,
        graph: rec.graph,
        timing: Timing {
            total_ms: t0.elapsed().as_secs_f64() * 1e3,
        },
    }))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: &str, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
