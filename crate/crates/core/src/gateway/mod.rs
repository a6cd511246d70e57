//! Cached, retrying access to black-box model endpoints, and a mock server
//! that speaks the same protocol.

pub mod cache;
pub mod client;
pub mod digest;
pub mod embed;
pub mod endpoint;
pub mod mock;
pub mod wire;

pub use cache::{cached_call, CacheEntry, CacheStore};
pub use client::{count_attempts, EndpointStats, Gateway, ModelResponse, Payload};
pub use digest::{request_digest, CacheKey, EncodedImage};
pub use embed::{Embedder, GatewayEmbedder, TrigramEmbedder, TRIGRAM_DIM};
pub use endpoint::{validate_endpoints, ModelEndpoint, RequestKind};
pub use mock::{FaultPlan, MockFixtures, MockRule, MockServer, MockStats, FALLBACK_ANSWER};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(String),
    #[error("endpoint {endpoint:?} does not support {kind}")]
    MissingCapability { endpoint: String, kind: RequestKind },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("prompt for {endpoint:?} is {len} characters, limit is {max}")]
    Oversize {
        endpoint: String,
        len: usize,
        max: usize,
    },
    #[error("transport error talking to {endpoint:?}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint:?} returned HTTP {status}: {message}")]
    Status {
        endpoint: String,
        status: u16,
        message: String,
    },
    #[error("{endpoint:?} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        endpoint: String,
        attempts: u32,
        last: Box<GatewayError>,
    },
    #[error("malformed response from {endpoint:?}: {message}")]
    MalformedBody { endpoint: String, message: String },
    #[error("{endpoint:?} returned a {got}-dim vector, expected {expected}")]
    DimensionMismatch {
        endpoint: String,
        expected: usize,
        got: usize,
    },
    #[error("cache i/o: {0}")]
    Cache(#[source] std::io::Error),
    #[error("image: {0}")]
    Image(String),
    #[error("config: {0}")]
    Config(String),
}

impl GatewayError {
    /// Name of the endpoint the error is attributed to, when there is one.
    pub fn endpoint(&self) -> Option<&str> {
        match self {
            Self::UnknownEndpoint(e) => Some(e),
            Self::MissingCapability { endpoint, .. }
            | Self::Oversize { endpoint, .. }
            | Self::Transport { endpoint, .. }
            | Self::Status { endpoint, .. }
            | Self::RetriesExhausted { endpoint, .. }
            | Self::MalformedBody { endpoint, .. }
            | Self::DimensionMismatch { endpoint, .. } => Some(endpoint),
            _ => None,
        }
    }
}
