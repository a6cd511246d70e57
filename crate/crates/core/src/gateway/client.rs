use std::collections::BTreeMap;
use std::future::Future;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::cache::{cached_call, CacheStore};
use super::digest::{request_digest, CacheKey, EncodedImage};
use super::endpoint::{validate_endpoints, ModelEndpoint, RequestKind};
use super::wire::*;
use super::GatewayError;

tokio::task_local! {
    static ATTEMPTS: Arc<AtomicU64>;
}

/// Runs `fut`, returning its output and the number of HTTP attempts any
/// [`Gateway`] made while polling it. Cache hits count zero.
pub async fn count_attempts<F: Future>(fut: F) -> (F::Output, u64) {
    let counter = Arc::new(AtomicU64::new(0));
    let out = ATTEMPTS.scope(counter.clone(), fut).await;
    (out, counter.load(Ordering::Relaxed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Text(String),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub endpoint_name: String,
    pub kind: RequestKind,
    pub payload: Payload,
    pub latency_ms: u64,
    pub from_cache: bool,
}

impl ModelResponse {
    pub fn text(&self) -> Option<&str> {
        match &self.payload {
            Payload::Text(t) => Some(t),
            Payload::Vector(_) => None,
        }
    }

    pub fn into_text(self) -> Option<String> {
        match self.payload {
            Payload::Text(t) => Some(t),
            Payload::Vector(_) => None,
        }
    }

    pub fn into_vector(self) -> Option<Vec<f64>> {
        match self.payload {
            Payload::Vector(v) => Some(v),
            Payload::Text(_) => None,
        }
    }
}

/// Per-endpoint request accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointStats {
    /// HTTP attempts, including retries.
    pub attempts: u64,
    /// Attempts that failed and were eligible for retry.
    pub retried_failures: u64,
    pub cache_hits: u64,
    pub succeeded: u64,
    pub failed: u64,
}

struct EndpointState {
    config: ModelEndpoint,
    limiter: Semaphore,
    embed_dim: OnceLock<usize>,
}

/// Cached, retrying client over a set of model endpoints.
///
/// Safe to share between tasks; in-flight requests per endpoint never exceed
/// that endpoint's `max_concurrency`.
pub struct Gateway {
    http: reqwest::Client,
    endpoints: BTreeMap<String, EndpointState>,
    cache: Option<CacheStore>,
    stats: Arc<Mutex<BTreeMap<String, EndpointStats>>>,
}

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl Gateway {
    pub fn new(
        endpoints: Vec<ModelEndpoint>,
        cache_dir: Option<&Path>,
    ) -> Result<Self, GatewayError> {
        validate_endpoints(&endpoints)?;
        let cache = cache_dir
            .map(CacheStore::open)
            .transpose()
            .map_err(GatewayError::Cache)?;
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        let stats = endpoints
            .iter()
            .map(|e| (e.name.clone(), EndpointStats::default()))
            .collect();
        let endpoints = endpoints
            .into_iter()
            .map(|config| {
                (
                    config.name.clone(),
                    EndpointState {
                        limiter: Semaphore::new(config.max_concurrency),
                        embed_dim: OnceLock::new(),
                        config,
                    },
                )
            })
            .collect();
        Ok(Self {
            http,
            endpoints,
            cache,
            stats: Arc::new(Mutex::new(stats)),
        })
    }

    pub fn endpoint(&self, name: &str) -> Option<&ModelEndpoint> {
        self.endpoints.get(name).map(|s| &s.config)
    }

    /// Names of endpoints declaring `kind`, in name order.
    pub fn endpoints_with(&self, kind: RequestKind) -> Vec<String> {
        self.endpoints
            .values()
            .filter(|s| s.config.supports(kind))
            .map(|s| s.config.name.clone())
            .collect()
    }

    pub fn stats(&self) -> BTreeMap<String, EndpointStats> {
        self.stats.lock().expect("stats lock").clone()
    }

    fn bump(&self, endpoint: &str, f: impl FnOnce(&mut EndpointStats)) {
        let mut stats = self.stats.lock().expect("stats lock");
        f(stats.entry(endpoint.to_string()).or_default());
    }

    fn state(&self, endpoint: &str, kind: RequestKind) -> Result<&EndpointState, GatewayError> {
        let state = self
            .endpoints
            .get(endpoint)
            .ok_or_else(|| GatewayError::UnknownEndpoint(endpoint.to_string()))?;
        if !state.config.supports(kind) {
            return Err(GatewayError::MissingCapability {
                endpoint: endpoint.to_string(),
                kind,
            });
        }
        Ok(state)
    }

    pub async fn caption(
        &self,
        endpoint: &str,
        image: &EncodedImage,
    ) -> Result<ModelResponse, GatewayError> {
        let kind = RequestKind::Caption;
        let digest = request_digest(kind, Some(&image.digest), None, None);
        let body = CaptionRequest {
            image_b64: image.base64(),
        };
        self.call(endpoint, kind, digest, &body, |r: CaptionResponse| {
            Ok(r.caption)
        })
        .await
    }

    pub async fn vqa_answer(
        &self,
        endpoint: &str,
        image: &EncodedImage,
        question: &str,
        choices: Option<&[String]>,
    ) -> Result<ModelResponse, GatewayError> {
        if question.trim().is_empty() {
            return Err(GatewayError::Precondition("vqa question is empty".into()));
        }
        let kind = RequestKind::Vqa;
        let digest = request_digest(kind, Some(&image.digest), Some(question), choices);
        let body = VqaRequest {
            image_b64: image.base64(),
            question: question.to_string(),
            choices: choices.map(<[String]>::to_vec),
        };
        self.call(endpoint, kind, digest, &body, |r: VqaResponse| Ok(r.answer))
            .await
    }

    pub async fn generate(
        &self,
        endpoint: &str,
        prompt: &str,
    ) -> Result<ModelResponse, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::Precondition("prompt is empty".into()));
        }
        let state = self.state(endpoint, RequestKind::Generate)?;
        if let Some(max) = state.config.max_prompt_chars {
            let len = prompt.chars().count();
            if len > max {
                return Err(GatewayError::Oversize {
                    endpoint: endpoint.to_string(),
                    len,
                    max,
                });
            }
        }
        let kind = RequestKind::Generate;
        let digest = request_digest(kind, None, Some(prompt), None);
        let body = GenerateRequest {
            prompt: prompt.to_string(),
        };
        self.call(endpoint, kind, digest, &body, |r: GenerateResponse| {
            Ok(r.text)
        })
        .await
    }

    pub async fn embed_text(
        &self,
        endpoint: &str,
        text: &str,
    ) -> Result<ModelResponse, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::Precondition("cannot embed empty text".into()));
        }
        let kind = RequestKind::Embed;
        let digest = request_digest(kind, None, Some(text), None);
        let body = EmbedRequest {
            text: text.to_string(),
        };
        let response = self
            .call_payload(endpoint, kind, digest, &body, |r: EmbedResponse| {
                if r.vector.len() != r.dim || r.dim == 0 {
                    return Err(format!(
                        "vector has {} entries but dim says {}",
                        r.vector.len(),
                        r.dim
                    ));
                }
                Ok(Payload::Vector(r.vector))
            })
            .await?;
        let len = match &response.payload {
            Payload::Vector(v) => v.len(),
            Payload::Text(_) => unreachable!("embed payloads are vectors"),
        };
        let state = self.state(endpoint, kind)?;
        let expected = *state.embed_dim.get_or_init(|| len);
        if expected != len {
            return Err(GatewayError::DimensionMismatch {
                endpoint: endpoint.to_string(),
                expected,
                got: len,
            });
        }
        Ok(response)
    }

    async fn call<Req, Resp>(
        &self,
        endpoint: &str,
        kind: RequestKind,
        digest: String,
        body: &Req,
        extract: impl Fn(Resp) -> Result<String, String>,
    ) -> Result<ModelResponse, GatewayError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        self.call_payload(endpoint, kind, digest, body, |r| {
            let text = extract(r)?;
            let trimmed = text.trim();
            if trimmed.is_empty() {
                return Err(format!("empty {kind} text"));
            }
            Ok(Payload::Text(trimmed.to_string()))
        })
        .await
    }

    async fn call_payload<Req, Resp>(
        &self,
        endpoint: &str,
        kind: RequestKind,
        digest: String,
        body: &Req,
        extract: impl Fn(Resp) -> Result<Payload, String>,
    ) -> Result<ModelResponse, GatewayError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let state = self.state(endpoint, kind)?;
        let key = CacheKey::new(endpoint, kind, digest);
        let result = cached_call(self.cache.as_ref(), &key, || async {
            let value = self.send_with_retries(state, kind, body).await?;
            let parsed: Resp =
                serde_json::from_value(value).map_err(|e| GatewayError::MalformedBody {
                    endpoint: endpoint.to_string(),
                    message: e.to_string(),
                })?;
            extract(parsed).map_err(|message| GatewayError::MalformedBody {
                endpoint: endpoint.to_string(),
                message,
            })
        })
        .await;
        match &result {
            Ok(r) if r.from_cache => self.bump(endpoint, |s| s.cache_hits += 1),
            Ok(_) => self.bump(endpoint, |s| s.succeeded += 1),
            Err(_) => self.bump(endpoint, |s| s.failed += 1),
        }
        result
    }

    async fn send_with_retries<Req: Serialize>(
        &self,
        state: &EndpointState,
        kind: RequestKind,
        body: &Req,
    ) -> Result<serde_json::Value, GatewayError> {
        let cfg = &state.config;
        let mut retry = 0u32;
        loop {
            let outcome = {
                let _permit = state.limiter.acquire().await.expect("limiter never closes");
                self.bump(&cfg.name, |s| s.attempts += 1);
                let _ = ATTEMPTS.try_with(|c| c.fetch_add(1, Ordering::Relaxed));
                self.attempt(cfg, kind, body).await
            };
            let err = match outcome {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => e,
            };
            self.bump(&cfg.name, |s| s.retried_failures += 1);
            if retry >= cfg.max_retries {
                return Err(GatewayError::RetriesExhausted {
                    endpoint: cfg.name.clone(),
                    attempts: retry + 1,
                    last: Box::new(err),
                });
            }
            let delay = cfg.retry_delay(retry);
            tracing::warn!(
                endpoint = %cfg.name,
                %kind,
                attempt = retry + 1,
                delay_ms = delay.as_millis() as u64,
                error = %err,
                "retrying model request"
            );
            tokio::time::sleep(delay).await;
            retry += 1;
        }
    }

    async fn attempt<Req: Serialize>(
        &self,
        cfg: &ModelEndpoint,
        kind: RequestKind,
        body: &Req,
    ) -> Result<serde_json::Value, Attempt> {
        let mut req = self
            .http
            .post(cfg.url(kind))
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .json(body);
        if let Some(token) = &cfg.bearer_token {
            req = req.bearer_auth(token);
        }
        let transport = |e: reqwest::Error| {
            Attempt::Retry(GatewayError::Transport {
                endpoint: cfg.name.clone(),
                message: e.to_string(),
            })
        };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            let err = GatewayError::Status {
                endpoint: cfg.name.clone(),
                status: status.as_u16(),
                message,
            };
            let retryable = status.is_server_error() || matches!(status.as_u16(), 408 | 429);
            return Err(if retryable {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| {
            Attempt::Fatal(GatewayError::MalformedBody {
                endpoint: cfg.name.clone(),
                message: e.to_string(),
            })
        })
    }
}
