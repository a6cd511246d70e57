//! Deterministic model server speaking the gateway wire protocol.
//!
//! Responses come from a fixture file: exact request digests first, then
//! substring rules, then the fallback answer (`"unknown"`). Embeddings are
//! hashed character trigrams. The server counts requests and tracks the
//! peak number of requests in flight, exposed at `GET /v1/stats`.

#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::digest::{request_digest, EncodedImage};
use super::embed::{TrigramEmbedder, TRIGRAM_DIM};
use super::wire::*;
use super::{GatewayError, RequestKind};

pub const FALLBACK_ANSWER: &str = "unknown";

/// Answers `respond` when the request text contains `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub kind: RequestKind,
    pub contains: String,
    pub respond: String,
}

/// Scripted failures, counted across all requests to the server.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultPlan {
    /// The first `fail_first` requests get an error status.
    pub fail_first: u64,
    pub always_fail: bool,
    /// Status used for injected failures; 503 when unset.
    pub status: Option<u16>,
    /// Artificial latency added to every request.
    pub delay_ms: u64,
    /// When set, faults only hit requests whose question or prompt contains
    /// this text, and `fail_first` counts only those requests.
    pub fail_on: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    /// Request digest → response text (caption, vqa, generate).
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_fallback")]
    pub fallback: String,
    #[serde(default)]
    pub faults: FaultPlan,
}

fn default_embed_dim() -> usize {
    TRIGRAM_DIM
}

fn default_fallback() -> String {
    FALLBACK_ANSWER.to_string()
}

impl Default for MockFixtures {
    fn default() -> Self {
        Self {
            responses: BTreeMap::new(),
            rules: Vec::new(),
            embed_dim: default_embed_dim(),
            fallback: default_fallback(),
            faults: FaultPlan::default(),
        }
    }
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let fixtures: Self = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        if fixtures.embed_dim == 0 {
            return Err(GatewayError::Config("embed_dim must be >= 1".into()));
        }
        Ok(fixtures)
    }

    pub fn add_caption(&mut self, image: &EncodedImage, caption: impl Into<String>) -> &mut Self {
        let d = request_digest(RequestKind::Caption, Some(&image.digest), None, None);
        self.responses.insert(d, caption.into());
        self
    }

    pub fn add_vqa(
        &mut self,
        image: &EncodedImage,
        question: &str,
        choices: Option<&[String]>,
        answer: impl Into<String>,
    ) -> &mut Self {
        let d = request_digest(
            RequestKind::Vqa,
            Some(&image.digest),
            Some(question),
            choices,
        );
        self.responses.insert(d, answer.into());
        self
    }

    pub fn add_generate(&mut self, prompt: &str, text: impl Into<String>) -> &mut Self {
        let d = request_digest(RequestKind::Generate, None, Some(prompt), None);
        self.responses.insert(d, text.into());
        self
    }

    pub fn add_rule(
        &mut self,
        kind: RequestKind,
        contains: impl Into<String>,
        respond: impl Into<String>,
    ) -> &mut Self {
        self.rules.push(MockRule {
            kind,
            contains: contains.into(),
            respond: respond.into(),
        });
        self
    }

    fn answer(&self, kind: RequestKind, digest: &str, text: Option<&str>) -> String {
        if let Some(r) = self.responses.get(digest) {
            return r.clone();
        }
        if let Some(text) = text {
            if let Some(rule) = self
                .rules
                .iter()
                .find(|r| r.kind == kind && text.contains(&r.contains))
            {
                return rule.respond.clone();
            }
        }
        self.fallback.clone()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockStats {
    pub requests: u64,
    pub by_route: BTreeMap<String, u64>,
    pub in_flight: u64,
    pub max_in_flight: u64,
    pub injected_failures: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    caption: AtomicU64,
    vqa: AtomicU64,
    generate: AtomicU64,
    embed: AtomicU64,
    in_flight: AtomicU64,
    max_in_flight: AtomicU64,
    injected_failures: AtomicU64,
    fault_candidates: AtomicU64,
}

impl Counters {
    fn route(&self, kind: RequestKind) -> &AtomicU64 {
        match kind {
            RequestKind::Caption => &self.caption,
            RequestKind::Vqa => &self.vqa,
            RequestKind::Generate => &self.generate,
            RequestKind::Embed => &self.embed,
        }
    }

    fn snapshot(&self) -> MockStats {
        let by_route = [
            RequestKind::Caption,
            RequestKind::Vqa,
            RequestKind::Generate,
            RequestKind::Embed,
        ]
        .into_iter()
        .map(|k| (k.as_str().to_string(), self.route(k).load(Ordering::SeqCst)))
        .collect();
        MockStats {
            requests: self.requests.load(Ordering::SeqCst),
            by_route,
            in_flight: self.in_flight.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
            injected_failures: self.injected_failures.load(Ordering::SeqCst),
        }
    }
}

struct MockState {
    fixtures: MockFixtures,
    embedder: TrigramEmbedder,
    counters: Counters,
}

struct InFlight<'a>(&'a Counters);

impl<'a> InFlight<'a> {
    fn enter(c: &'a Counters) -> Self {
        let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        c.max_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(c)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
        }),
    )
        .into_response()
}

impl MockState {
    /// Counts the request and applies latency.
    async fn admit(&self, kind: RequestKind) -> InFlight<'_> {
        self.counters.requests.fetch_add(1, Ordering::SeqCst);
        self.counters.route(kind).fetch_add(1, Ordering::SeqCst);
        let guard = InFlight::enter(&self.counters);
        let delay = self.fixtures.faults.delay_ms;
        if delay > 0 {
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
        guard
    }

    /// Applies the fault plan to a request carrying `text`.
    fn inject(&self, text: Option<&str>) -> Result<(), Response> {
        let faults = &self.fixtures.faults;
        if let Some(needle) = &faults.fail_on {
            if !text.is_some_and(|t| t.contains(needle.as_str())) {
                return Ok(());
            }
        }
        let n = self
            .counters
            .fault_candidates
            .fetch_add(1, Ordering::SeqCst)
            + 1;
        if faults.always_fail || n <= faults.fail_first {
            self.counters
                .injected_failures
                .fetch_add(1, Ordering::SeqCst);
            let status = StatusCode::from_u16(faults.status.unwrap_or(503))
                .unwrap_or(StatusCode::SERVICE_UNAVAILABLE);
            return Err(error(status, format!("injected failure on request {n}")));
        }
        Ok(())
    }
}

type Shared = Arc<MockState>;

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, Response> {
    b.map(|Json(v)| v)
        .map_err(|e| error(StatusCode::BAD_REQUEST, e.body_text()))
}

fn image_digest(b64: &str) -> Result<String, Response> {
    EncodedImage::digest_of_base64(b64).map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn caption(
    State(s): State<Shared>,
    b: Result<Json<CaptionRequest>, JsonRejection>,
) -> Response {
    let _guard = s.admit(RequestKind::Caption).await;
    let run = || -> Result<Response, Response> {
        s.inject(None)?;
        let req = body(b)?;
        let img = image_digest(&req.image_b64)?;
        let d = request_digest(RequestKind::Caption, Some(&img), None, None);
        let caption = s.fixtures.answer(RequestKind::Caption, &d, None);
        Ok(Json(CaptionResponse { caption }).into_response())
    };
    run().unwrap_or_else(|e| e)
}

async fn vqa(State(s): State<Shared>, b: Result<Json<VqaRequest>, JsonRejection>) -> Response {
    let _guard = s.admit(RequestKind::Vqa).await;
    let run = || -> Result<Response, Response> {
        let req = body(b)?;
        s.inject(Some(&req.question))?;
        if req.question.trim().is_empty() {
            return Err(error(StatusCode::BAD_REQUEST, "question is empty"));
        }
        let img = image_digest(&req.image_b64)?;
        let d = request_digest(
            RequestKind::Vqa,
            Some(&img),
            Some(&req.question),
            req.choices.as_deref(),
        );
        let answer = s.fixtures.answer(RequestKind::Vqa, &d, Some(&req.question));
        Ok(Json(VqaResponse { answer }).into_response())
    };
    run().unwrap_or_else(|e| e)
}

async fn generate(
    State(s): State<Shared>,
    b: Result<Json<GenerateRequest>, JsonRejection>,
) -> Response {
    let _guard = s.admit(RequestKind::Generate).await;
    let run = || -> Result<Response, Response> {
        let req = body(b)?;
        s.inject(Some(&req.prompt))?;
        if req.prompt.trim().is_empty() {
            return Err(error(StatusCode::BAD_REQUEST, "prompt is empty"));
        }
        let d = request_digest(RequestKind::Generate, None, Some(&req.prompt), None);
        let text = s
            .fixtures
            .answer(RequestKind::Generate, &d, Some(&req.prompt));
        Ok(Json(GenerateResponse { text }).into_response())
    };
    run().unwrap_or_else(|e| e)
}

async fn embed(State(s): State<Shared>, b: Result<Json<EmbedRequest>, JsonRejection>) -> Response {
    let _guard = s.admit(RequestKind::Embed).await;
    let run = || -> Result<Response, Response> {
        let req = body(b)?;
        s.inject(Some(&req.text))?;
        if req.text.trim().is_empty() {
            return Err(error(StatusCode::BAD_REQUEST, "text is empty"));
        }
        let vector = s.embedder.vector(&req.text);
        Ok(Json(EmbedResponse {
            dim: vector.len(),
            vector,
        })
        .into_response())
    };
    run().unwrap_or_else(|e| e)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "ok": true }))
}

async fn stats(State(s): State<Shared>) -> Json<MockStats> {
    Json(s.counters.snapshot())
}

fn router(fixtures: MockFixtures) -> (Router, Arc<MockState>) {
    let state = Arc::new(MockState {
        embedder: TrigramEmbedder::new(fixtures.embed_dim),
        fixtures,
        counters: Counters::default(),
    });
    let router = Router::new()
        .route("/v1/caption", post(caption))
        .route("/v1/vqa", post(vqa))
        .route("/v1/generate", post(generate))
        .route("/v1/embed", post(embed))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .with_state(state.clone());
    (router, state)
}

/// The mock's routes, for embedding in another server.
pub fn mock_router(fixtures: MockFixtures) -> Router {
    router(fixtures).0
}

/// A mock server running on the current tokio runtime.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub async fn start(fixtures: MockFixtures, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (router, state) = router(fixtures);
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task,
        })
    }

    pub async fn start_local(fixtures: MockFixtures) -> std::io::Result<Self> {
        Self::start(fixtures, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> MockStats {
        self.state.counters.snapshot()
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Serves `fixtures` on `0.0.0.0:port` until ctrl-c.
pub async fn serve_mock(fixtures: MockFixtures, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port))).await?;
    tracing::info!(addr = %listener.local_addr()?, "mock model server listening");
    let (router, _) = router(fixtures);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
