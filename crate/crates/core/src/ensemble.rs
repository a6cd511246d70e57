//! Averaging ensemble of cosine similarities between each endpoint's answer
//! and each choice.

use std::collections::BTreeMap;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::gateway::{Embedder, EncodedImage, Gateway, GatewayError};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("vectors have different dimensions ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("at least one endpoint answer is required")]
    NoAnswers,
    #[error("choice list is empty")]
    NoChoices,
    #[error("embedding {what}: {source}")]
    Embedding {
        what: String,
        #[source]
        source: GatewayError,
    },
    #[error("querying {endpoint:?}: {source}")]
    Query {
        endpoint: String,
        #[source]
        source: GatewayError,
    },
}

impl EnsembleError {
    /// Endpoint the failure is attributed to, when there is one.
    pub fn endpoint(&self) -> Option<&str> {
        match self {
            Self::Query { endpoint, .. } => Some(endpoint),
            Self::Embedding { source, .. } => source.endpoint(),
            _ => None,
        }
    }
}

/// `dot(u, v) / (|u| |v|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, EnsembleError> {
    if u.len() != v.len() {
        return Err(EnsembleError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(EnsembleError::ZeroNorm);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScores {
    /// Column means of `per_endpoint`.
    pub scores: Vec<f64>,
    /// Row labels of `per_endpoint`.
    pub endpoints: Vec<String>,
    /// `per_endpoint[i][j]` = cosine(answer of endpoint i, choice j).
    pub per_endpoint: Vec<Vec<f64>>,
    pub chosen_index: usize,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(j);
        }
    }
    best
}

impl ChoiceScores {
    /// Averages a per-endpoint similarity matrix.
    pub fn from_matrix(
        endpoints: Vec<String>,
        per_endpoint: Vec<Vec<f64>>,
    ) -> Result<Self, EnsembleError> {
        let n = per_endpoint.len();
        if n == 0 {
            return Err(EnsembleError::NoAnswers);
        }
        let m = per_endpoint[0].len();
        if m == 0 {
            return Err(EnsembleError::NoChoices);
        }
        if let Some(row) = per_endpoint.iter().find(|r| r.len() != m) {
            return Err(EnsembleError::DimensionMismatch {
                left: m,
                right: row.len(),
            });
        }
        let scores: Vec<f64> = (0..m)
            .map(|j| per_endpoint.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let chosen_index = argmax(&scores).expect("nonempty");
        Ok(Self {
            scores,
            endpoints,
            per_endpoint,
            chosen_index,
        })
    }
}

async fn embed_one<E: Embedder>(
    embedder: &E,
    what: String,
    text: &str,
) -> Result<Vec<f64>, EnsembleError> {
    embedder
        .embed(text)
        .await
        .map_err(|source| EnsembleError::Embedding { what, source })
}

/// Scores every choice against every endpoint's answer text.
pub async fn ensemble_scores<E: Embedder>(
    answers: &BTreeMap<String, String>,
    choices: &[String],
    embedder: &E,
) -> Result<ChoiceScores, EnsembleError> {
    if answers.is_empty() {
        return Err(EnsembleError::NoAnswers);
    }
    if choices.is_empty() {
        return Err(EnsembleError::NoChoices);
    }
    let mut choice_vecs = Vec::with_capacity(choices.len());
    for (j, c) in choices.iter().enumerate() {
        choice_vecs.push(embed_one(embedder, format!("choice {j}"), c).await?);
    }
    let mut rows = Vec::with_capacity(answers.len());
    for (name, text) in answers {
        let a = embed_one(embedder, format!("answer from {name:?}"), text).await?;
        let row = choice_vecs
            .iter()
            .map(|c| cosine_similarity(&a, c))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    ChoiceScores::from_matrix(answers.keys().cloned().collect(), rows)
}

/// Asks every VLM endpoint the question, then scores the answers.
/// Returns the raw answers alongside the scores.
pub async fn ensemble_predict<E: Embedder>(
    gateway: &Gateway,
    image: &EncodedImage,
    question: &str,
    choices: &[String],
    vlm_endpoints: &[String],
    embedder: &E,
) -> Result<(BTreeMap<String, String>, ChoiceScores), EnsembleError> {
    if vlm_endpoints.is_empty() {
        return Err(EnsembleError::NoAnswers);
    }
    let calls = vlm_endpoints
        .iter()
        .map(|ep| gateway.vqa_answer(ep, image, question, Some(choices)));
    let mut answers = BTreeMap::new();
    for (ep, result) in vlm_endpoints.iter().zip(join_all(calls).await) {
        let response = result.map_err(|source| EnsembleError::Query {
            endpoint: ep.clone(),
            source,
        })?;
        answers.insert(ep.clone(), response.into_text().unwrap_or_default());
    }
    let scores = ensemble_scores(&answers, choices, embedder).await?;
    Ok((answers, scores))
}
