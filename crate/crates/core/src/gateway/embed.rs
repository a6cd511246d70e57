//! Text embedding sources.

use std::future::Future;

use super::{Gateway, GatewayError};

pub const TRIGRAM_DIM: usize = 256;

/// Anything that maps text to a fixed-dimension vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> impl Future<Output = Result<Vec<f64>, GatewayError>> + Send;
}

/// Deterministic hashed character-trigram counts, L2-normalised.
///
/// Text is lowercased and padded with one space on each side before the
/// trigrams are taken; each trigram is hashed with 64-bit FNV-1a into one of
/// `dim` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrigramEmbedder {
    pub dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self { dim: TRIGRAM_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for w in padded.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            v[(fnv1a(&buf[..len]) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> impl Future<Output = Result<Vec<f64>, GatewayError>> + Send {
        let result = if text.trim().is_empty() {
            Err(GatewayError::Precondition("cannot embed empty text".into()))
        } else {
            Ok(self.vector(text))
        };
        std::future::ready(result)
    }
}

/// Embeds through a gateway endpoint with the `embed` capability.
#[derive(Clone, Copy)]
pub struct GatewayEmbedder<'a> {
    pub gateway: &'a Gateway,
    pub endpoint: &'a str,
}

impl Embedder for GatewayEmbedder<'_> {
    fn embed(&self, text: &str) -> impl Future<Output = Result<Vec<f64>, GatewayError>> + Send {
        let (gateway, endpoint) = (self.gateway, self.endpoint);
        let text = text.to_string();
        async move {
            let r = gateway.embed_text(endpoint, &text).await?;
            r.into_vector().ok_or_else(|| GatewayError::MalformedBody {
                endpoint: endpoint.to_string(),
                message: "embed returned text".into(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn deterministic_unit_vectors() {
        let e = TrigramEmbedder::default();
        let a = e.vector("walk");
        assert_eq!(a, e.vector("walk"));
        assert_eq!(a.len(), 256);
        assert!((cos(&a, &a) - 1.0).abs() < 1e-9);
        assert_eq!(e.vector("WALK"), a);
    }

    #[test]
    fn shared_trigrams_score_higher() {
        let e = TrigramEmbedder::default();
        let run = e.vector("running");
        assert!(cos(&run, &e.vector("running fast")) > cos(&run, &e.vector("blue umbrella")));
    }

    #[tokio::test]
    async fn empty_text_rejected() {
        assert!(TrigramEmbedder::default().embed("  ").await.is_err());
    }
}
