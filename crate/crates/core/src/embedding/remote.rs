//! Client for the embedding service wire protocol.
//!
//! `POST {base}/embed` with `{"model", "sentences"}` answers
//! `{"model", "dim", "vectors"}` in request order; `GET {base}/models` lists
//! `{"models": [{"name", "dim"}]}`. Failures carry `{"error": "..."}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub model: &'a str,
    pub sentences: &'a [&'a str],
}

#[derive(Debug, Deserialize, Serialize)]
pub struct EmbedResponse {
    pub model: String,
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize, Serialize)]
pub struct RemoteModel {
    pub name: String,
    pub dim: usize,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct ModelsResponse {
    models: Vec<RemoteModel>,
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(10))
        .timeout(Duration::from_secs(600))
        .build()
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn map_err(url: &str, err: ureq::Error) -> Error {
    match err {
        ureq::Error::Status(code, resp) => {
            let msg = resp
                .into_string()
                .ok()
                .and_then(|b| serde_json::from_str::<ErrorBody>(&b).ok())
                .map(|b| b.error)
                .unwrap_or_else(|| "no error body".to_string());
            Error::Provider(format!("{url} returned {code}: {msg}"))
        }
        ureq::Error::Transport(t) => Error::ProviderUnreachable(format!("{url}: {t}")),
    }
}

pub fn list_models(base: &str) -> Result<Vec<RemoteModel>> {
    let url = endpoint(base, "models");
    let resp = agent().get(&url).call().map_err(|e| map_err(&url, e))?;
    let body: ModelsResponse = resp
        .into_json()
        .map_err(|e| Error::Provider(format!("{url}: malformed /models response: {e}")))?;
    Ok(body.models)
}

/// Sends `sentences` in order, `batch_size` at a time, and concatenates the
/// returned vectors. Every batch must agree on the dimension.
pub fn embed_remote(base: &str, model: &str, sentences: &[&str], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    if batch_size == 0 {
        return Err(Error::InvalidProvider("batch_size must be >= 1".into()));
    }
    let url = endpoint(base, "embed");
    let agent = agent();
    let mut out = Vec::with_capacity(sentences.len());
    let mut dim: Option<usize> = None;
    for batch in sentences.chunks(batch_size) {
        let req = EmbedRequest { model, sentences: batch };
        let resp = agent.post(&url).send_json(&req).map_err(|e| map_err(&url, e))?;
        let body: EmbedResponse = resp
            .into_json()
            .map_err(|e| Error::Provider(format!("{url}: malformed /embed response: {e}")))?;
        if body.vectors.len() != batch.len() {
            return Err(Error::RowCountMismatch {
                expected: batch.len(),
                got: body.vectors.len(),
            });
        }
        let expected = *dim.get_or_insert(body.dim);
        if body.dim != expected {
            return Err(Error::DimensionMismatch { expected, got: body.dim });
        }
        for v in body.vectors {
            if v.len() != expected {
                return Err(Error::DimensionMismatch { expected, got: v.len() });
            }
            out.push(v);
        }
    }
    Ok(out)
}
