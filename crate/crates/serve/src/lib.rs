//! Translation service: `POST /translate`, `POST /translate_long`,
//! `GET /languages`, `GET /health`.
//!
//! Requests and responses are JSON. Errors carry a machine-readable code:
//!
//! ```json
//! { "error": { "code": "unknown_language", "message": "..." } }
//! ```
//!
//! | code               | status |
//! |--------------------|--------|
//! | `invalid_request`  | 400    |
//! | `empty_text`       | 400    |
//! | `unknown_language` | 400    |
//! | `text_too_long`    | 413    |
//! | `overloaded`       | 503    |
//! | `decode_failed`    | 500    |

mod split;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lrmt::nmt::{Checkpoint, DecodeSettings, Translator};
use lrmt::{LangId, SubwordModel};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use split::split_sentences;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    /// Longest accepted `text`, in characters.
    pub max_chars: usize,
    /// Requests decoded at the same time.
    pub workers: usize,
    /// Requests allowed to wait for a worker before new ones get 503.
    pub queue: usize,
    /// Allowed CORS origin; `None` allows any.
    pub cors_origin: Option<String>,
    /// Append every request and response to this JSON-lines file.
    pub request_log: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            max_chars: 2000,
            workers: 2,
            queue: 64,
            cors_origin: None,
            request_log: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateRequest {
    pub text: String,
    pub tgt_lang: String,
    /// Informational only: the target factor alone drives the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_lang: Option<String>,
    #[serde(default)]
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub translation: String,
    pub tgt_lang: String,
    /// Fingerprint of the checkpoint that produced the translation.
    pub model: String,
    pub latency_ms: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguagesResponse {
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
    pub uptime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiError {
    InvalidRequest(String),
    EmptyText,
    UnknownLanguage(String),
    TextTooLong { chars: usize, max: usize },
    Overloaded,
    DecodeFailed(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::InvalidRequest(_) => "invalid_request",
            ApiError::EmptyText => "empty_text",
            ApiError::UnknownLanguage(_) => "unknown_language",
            ApiError::TextTooLong { .. } => "text_too_long",
            ApiError::Overloaded => "overloaded",
            ApiError::DecodeFailed(_) => "decode_failed",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::InvalidRequest(_) | ApiError::EmptyText | ApiError::UnknownLanguage(_) => StatusCode::BAD_REQUEST,
            ApiError::TextTooLong { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Overloaded => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::DecodeFailed(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn message(&self) -> String {
        match self {
            ApiError::InvalidRequest(m) => m.clone(),
            ApiError::EmptyText => "text is empty".into(),
            ApiError::UnknownLanguage(l) => format!("the model cannot translate into `{l}`"),
            ApiError::TextTooLong { chars, max } => format!("text has {chars} characters, the limit is {max}"),
            ApiError::Overloaded => "too many requests in flight, retry later".into(),
            ApiError::DecodeFailed(m) => m.clone(),
        }
    }

    pub fn body(&self) -> ErrorResponse {
        ErrorResponse { error: ErrorBody { code: self.code().into(), message: self.message() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

/// The loaded model, shared read-only by every request.
pub struct Model {
    pub checkpoint: Checkpoint,
    pub subword: SubwordModel,
    pub fingerprint: String,
}

impl Model {
    pub fn new(checkpoint: Checkpoint, subword: SubwordModel) -> Self {
        let fingerprint = checkpoint.fingerprint();
        Model { checkpoint, subword, fingerprint }
    }

    pub fn languages(&self) -> &[LangId] {
        &self.checkpoint.languages
    }

    fn settings(mode: Mode) -> DecodeSettings {
        match mode {
            Mode::Greedy => DecodeSettings::greedy(),
            Mode::Beam => DecodeSettings::beam(5),
        }
    }

    /// Translates `text` as one segment. Returns (translation, truncated).
    pub fn translate(&self, text: &str, tgt: &LangId, mode: Mode) -> Result<(String, bool), ApiError> {
        let tr = Translator::new(&self.checkpoint.params, &self.subword, &self.checkpoint.languages);
        let t = tr.translate(text, tgt, &Self::settings(mode)).map_err(|e| ApiError::DecodeFailed(e.to_string()))?;
        Ok((t.text, t.truncated))
    }

    /// Splits on sentence-final punctuation and newlines, translates every
    /// nonempty segment into `tgt` and rejoins with the original separators.
    pub fn translate_long(&self, text: &str, tgt: &LangId, mode: Mode) -> Result<(String, bool), ApiError> {
        let mut out = String::new();
        let mut truncated = false;
        for (seg, sep) in split_sentences(text) {
            if !seg.trim().is_empty() {
                let (t, tr) = self.translate(seg, tgt, mode)?;
                out.push_str(&t);
                truncated |= tr;
            }
            out.push_str(sep);
        }
        Ok((out, truncated))
    }
}

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<Model>,
    cfg: Arc<ServeConfig>,
    started: Instant,
    /// Admission: workers plus queue slots.
    admitted: Arc<Semaphore>,
    workers: Arc<Semaphore>,
    log: Option<Arc<Mutex<std::fs::File>>>,
}

impl AppState {
    pub fn new(model: Model, cfg: ServeConfig) -> std::io::Result<Self> {
        let log = match &cfg.request_log {
            Some(p) => Some(Arc::new(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?))),
            None => None,
        };
        Ok(AppState {
            model: Arc::new(model),
            admitted: Arc::new(Semaphore::new(cfg.workers.max(1) + cfg.queue)),
            workers: Arc::new(Semaphore::new(cfg.workers.max(1))),
            cfg: Arc::new(cfg),
            started: Instant::now(),
            log,
        })
    }

    fn validate(&self, req: &TranslateRequest) -> Result<LangId, ApiError> {
        if req.text.trim().is_empty() {
            return Err(ApiError::EmptyText);
        }
        let chars = req.text.chars().count();
        if chars > self.cfg.max_chars {
            return Err(ApiError::TextTooLong { chars, max: self.cfg.max_chars });
        }
        self.model
            .languages()
            .iter()
            .find(|l| l.as_str() == req.tgt_lang)
            .cloned()
            .ok_or_else(|| ApiError::UnknownLanguage(req.tgt_lang.clone()))
    }

    fn record(&self, endpoint: &str, req: &TranslateRequest, resp: &Result<TranslateResponse, ApiError>) {
        let Some(log) = &self.log else { return };
        let line = serde_json::json!({
            "endpoint": endpoint,
            "request": req,
            "response": match resp {
                Ok(r) => serde_json::to_value(r).unwrap(),
                Err(e) => serde_json::to_value(e.body()).unwrap(),
            },
        });
        let mut f = log.lock().unwrap();
        if let Err(e) = writeln!(f, "{line}") {
            tracing::warn!(error = %e, "request log write failed");
        }
    }

    async fn handle(&self, req: TranslateRequest, long: bool) -> Result<TranslateResponse, ApiError> {
        let tgt = self.validate(&req)?;
        let _slot = self.admitted.clone().try_acquire_owned().map_err(|_| ApiError::Overloaded)?;
        let _worker = self.workers.clone().acquire_owned().await.map_err(|_| ApiError::Overloaded)?;
        let model = self.model.clone();
        let clock = Instant::now();
        let text = req.text.clone();
        let mode = req.mode;
        let tgt2 = tgt.clone();
        let (translation, truncated) = tokio::task::spawn_blocking(move || {
            if long {
                model.translate_long(&text, &tgt2, mode)
            } else {
                model.translate(&text, &tgt2, mode)
            }
        })
        .await
        .map_err(|e| ApiError::DecodeFailed(e.to_string()))??;
        Ok(TranslateResponse {
            translation,
            tgt_lang: tgt.to_string(),
            model: self.model.fingerprint.clone(),
            latency_ms: clock.elapsed().as_secs_f64() * 1000.0,
            truncated,
        })
    }
}

fn parse(body: Result<Json<TranslateRequest>, JsonRejection>) -> Result<TranslateRequest, ApiError> {
    body.map(|Json(r)| r).map_err(|e| ApiError::InvalidRequest(e.body_text()))
}

async fn translate(State(st): State<AppState>, body: Result<Json<TranslateRequest>, JsonRejection>) -> Response {
    respond(&st, "/translate", body, false).await
}

async fn translate_long(State(st): State<AppState>, body: Result<Json<TranslateRequest>, JsonRejection>) -> Response {
    respond(&st, "/translate_long", body, true).await
}

async fn respond(st: &AppState, endpoint: &str, body: Result<Json<TranslateRequest>, JsonRejection>, long: bool) -> Response {
    let req = match parse(body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let resp = st.handle(req.clone(), long).await;
    st.record(endpoint, &req, &resp);
    match resp {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn languages(State(st): State<AppState>) -> Json<LanguagesResponse> {
    Json(LanguagesResponse { languages: st.model.languages().iter().map(|l| l.to_string()).collect() })
}

async fn health(State(st): State<AppState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model: st.model.fingerprint.clone(),
        uptime_s: st.started.elapsed().as_secs_f64(),
    })
}

pub fn router(state: AppState) -> Router {
    let origin = match &state.cfg.cors_origin {
        Some(o) => match o.parse() {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => {
                tracing::warn!(origin = %o, "invalid CORS origin, allowing any");
                AllowOrigin::any()
            }
        },
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/translate", post(translate))
        .route("/translate_long", post(translate_long))
        .route("/languages", get(languages))
        .route("/health", get(health))
        .layer(cors)
        .with_state(state)
}

/// Binds and serves until ctrl-c.
pub async fn serve(model: Model, cfg: ServeConfig) -> std::io::Result<()> {
    let bind = cfg.bind;
    let app = router(AppState::new(model, cfg)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
