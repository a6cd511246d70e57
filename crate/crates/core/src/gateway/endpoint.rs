use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Caption,
    Vqa,
    Generate,
    Embed,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Caption => "caption",
            Self::Vqa => "vqa",
            Self::Generate => "generate",
            Self::Embed => "embed",
        }
    }

    pub fn path(self) -> &'static str {
        match self {
            Self::Caption => "/v1/caption",
            Self::Vqa => "/v1/vqa",
            Self::Generate => "/v1/generate",
            Self::Embed => "/v1/embed",
        }
    }
}

impl std::fmt::Display for RequestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named black-box model service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    pub name: String,
    pub base_url: String,
    pub capabilities: BTreeSet<RequestKind>,
    #[serde(default = "defaults::timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default = "defaults::max_concurrency")]
    pub max_concurrency: usize,
    /// Delay before the first retry; doubles on every further retry.
    #[serde(default = "defaults::backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "defaults::backoff_max_ms")]
    pub backoff_max_ms: u64,
    /// Longest prompt, in characters, accepted by `generate`.
    #[serde(default)]
    pub max_prompt_chars: Option<usize>,
    /// Sent as `Authorization: Bearer <token>`.
    #[serde(default)]
    pub bearer_token: Option<String>,
}

mod defaults {
    pub fn timeout_ms() -> u64 {
        30_000
    }
    pub fn max_retries() -> u32 {
        3
    }
    pub fn max_concurrency() -> usize {
        4
    }
    pub fn backoff_base_ms() -> u64 {
        250
    }
    pub fn backoff_max_ms() -> u64 {
        8_000
    }
}

impl ModelEndpoint {
    pub fn new(
        name: impl Into<String>,
        base_url: impl Into<String>,
        capabilities: impl IntoIterator<Item = RequestKind>,
    ) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into(),
            capabilities: capabilities.into_iter().collect(),
            timeout_ms: defaults::timeout_ms(),
            max_retries: defaults::max_retries(),
            max_concurrency: defaults::max_concurrency(),
            backoff_base_ms: defaults::backoff_base_ms(),
            backoff_max_ms: defaults::backoff_max_ms(),
            max_prompt_chars: None,
            bearer_token: None,
        }
    }

    pub fn supports(&self, kind: RequestKind) -> bool {
        self.capabilities.contains(&kind)
    }

    /// Sleep before retry `n` (0-based): `base * 2^n`, capped at `backoff_max_ms`.
    pub fn retry_delay(&self, n: u32) -> Duration {
        let factor = 1u64.checked_shl(n).unwrap_or(u64::MAX);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.backoff_max_ms),
        )
    }

    pub fn retry_delays(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|n| self.retry_delay(n)).collect()
    }

    pub fn url(&self, kind: RequestKind) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), kind.path())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::Config(m));
        if self.name.trim().is_empty() {
            return bad("endpoint name must be nonempty".into());
        }
        if self.max_concurrency < 1 {
            return bad(format!("{}: max_concurrency must be >= 1", self.name));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!(
                "{}: base_url must be an http(s) origin, got {:?}",
                self.name, self.base_url
            ));
        }
        if self.capabilities.is_empty() {
            return bad(format!("{}: no capabilities declared", self.name));
        }
        Ok(())
    }
}

pub fn validate_endpoints(endpoints: &[ModelEndpoint]) -> Result<(), GatewayError> {
    let mut seen = BTreeSet::new();
    for e in endpoints {
        e.validate()?;
        if !seen.insert(e.name.as_str()) {
            return Err(GatewayError::Config(format!(
                "duplicate endpoint name {:?}",
                e.name
            )));
        }
    }
    Ok(())
}
