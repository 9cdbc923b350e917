//! Sentence embeddings and the providers that produce them.

mod reference;
pub mod remote;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::semv;

pub use reference::{fnv1a64, reference_embed, SplitMix64, EMPTY_TOKEN};

/// Short label for an embedding model ("MPNet", "I-F", ...).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub const MAX_LEN: usize = 32;

    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.len() > Self::MAX_LEN || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidModelId(name));
        }
        Ok(ModelId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::new(s)
    }
}

impl TryFrom<String> for ModelId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        ModelId::new(s)
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.0
    }
}

/// N x D sentence vectors for one (document, model) pair, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    model: ModelId,
    doc_id: String,
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates shape, finiteness and that no row is all zeros.
    pub fn new(
        model: ModelId,
        doc_id: impl Into<String>,
        n: usize,
        d: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if values.len() != n * d {
            return Err(Error::LengthMismatch(values.len(), n * d));
        }
        for (i, row) in values.chunks_exact(d).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroVector(i));
            }
        }
        Ok(EmbeddingMatrix {
            model,
            doc_id: doc_id.into(),
            n,
            d,
            values,
        })
    }

    pub fn from_rows(model: ModelId, doc_id: impl Into<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::new(model, doc_id, n, d, values)
    }

    pub fn model(&self) -> &ModelId {
        &self.model
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d)
    }

    pub fn with_model(mut self, model: ModelId) -> Self {
        self.model = model;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    File,
    Remote,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Path (file), base URL (remote); unused by the reference embedder.
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    32
}

impl ProviderConfig {
    pub fn reference(dim: usize) -> Self {
        ProviderConfig {
            kind: ProviderKind::Reference,
            location: String::new(),
            dim: Some(dim),
            batch_size: default_batch_size(),
        }
    }

    pub fn file(path: impl Into<String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::File,
            location: path.into(),
            dim: None,
            batch_size: default_batch_size(),
        }
    }

    pub fn remote(url: impl Into<String>, batch_size: usize) -> Self {
        ProviderConfig {
            kind: ProviderKind::Remote,
            location: url.into(),
            dim: None,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidProvider("batch_size must be >= 1".into()));
        }
        match self.kind {
            ProviderKind::Reference => match self.dim {
                Some(d) if d >= 2 => Ok(()),
                _ => Err(Error::InvalidProvider("reference provider needs dim >= 2".into())),
            },
            ProviderKind::File | ProviderKind::Remote if self.location.is_empty() => Err(
                Error::InvalidProvider(format!("{:?} provider needs a location", self.kind)),
            ),
            _ => Ok(()),
        }
    }

    /// File providers pointing at a directory look for `<doc_id>.<model>.semv`.
    pub fn resolve_file(&self, doc_id: &str, model: &ModelId) -> PathBuf {
        let p = Path::new(&self.location);
        if p.is_dir() {
            p.join(format!("{doc_id}.{model}.semv"))
        } else {
            p.to_path_buf()
        }
    }
}

/// Parses the CLI form `kind:location`, e.g. `reference:64`,
/// `file:emb/carol.semv` or `remote:http://127.0.0.1:8000`.
impl FromStr for ProviderConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, loc) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidProvider(format!("expected kind:location, got {s:?}")))?;
        let cfg = match kind {
            "reference" => {
                let dim = loc
                    .parse()
                    .map_err(|_| Error::InvalidProvider(format!("bad dimension {loc:?}")))?;
                ProviderConfig::reference(dim)
            }
            "file" => ProviderConfig::file(loc),
            "remote" => ProviderConfig::remote(loc, default_batch_size()),
            other => return Err(Error::InvalidProvider(format!("unknown provider kind {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Embeds every sentence of `doc`; row i of the result is sentence i.
pub fn embed_document(provider: &ProviderConfig, doc: &Document, model: &ModelId) -> Result<EmbeddingMatrix> {
    provider.validate()?;
    if doc.is_empty() {
        return Err(Error::NoSentences);
    }
    match provider.kind {
        ProviderKind::Reference => {
            let dim = provider.dim.unwrap_or_default();
            let rows = exec::map_indices(Execution::default(), doc.len(), |i| {
                reference_embed(&doc.sentences[i].text, dim)
            });
            EmbeddingMatrix::from_rows(model.clone(), doc.id.clone(), rows)
        }
        ProviderKind::File => {
            let m = semv::read_embeddings(provider.resolve_file(&doc.id, model))?;
            if m.n() != doc.len() {
                return Err(Error::RowCountMismatch { expected: doc.len(), got: m.n() });
            }
            if let Some(d) = provider.dim {
                if d != m.d() {
                    return Err(Error::DimensionMismatch { expected: d, got: m.d() });
                }
            }
            Ok(m.with_model(model.clone()))
        }
        ProviderKind::Remote => {
            let texts = doc.texts();
            let rows = remote::embed_remote(&provider.location, model.as_str(), &texts, provider.batch_size)?;
            if rows.len() != doc.len() {
                return Err(Error::RowCountMismatch { expected: doc.len(), got: rows.len() });
            }
            if let Some(d) = provider.dim {
                if let Some(r) = rows.iter().find(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch { expected: d, got: r.len() });
                }
            }
            EmbeddingMatrix::from_rows(model.clone(), doc.id.clone(), rows)
        }
    }
}
