//! Embeds chunks and question queries through a pluggable provider and
//! serves exact top-k retrieval by cosine similarity over an immutable
//! in-memory index with JSON persistence.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::note_store::Chunk;
use crate::util::{self, FileError};

/// A fixed-length embedding; the dimension is the vector length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn validate_finite(&self) -> Result<(), RetrieverError> {
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(RetrieverError::NonFiniteValue);
        }
        Ok(())
    }
}

/// Immutable chunk-embedding index bound to the provider that built it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    pub dim: usize,
    pub provider_tag: String,
    /// Hash of the indexed chunk ids and texts; detects stale indexes.
    pub corpus_hash: String,
    pub entries: BTreeMap<String, EmbeddingVector>,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Confirms the index was built by `provider` over the corpus with
    /// `corpus_hash`.
    pub fn validate_against(
        &self,
        provider: &dyn EmbeddingProvider,
        corpus_hash: &str,
    ) -> Result<(), RetrieverError> {
        if self.provider_tag != provider.tag() {
            return Err(RetrieverError::ProviderMismatch {
                index_tag: self.provider_tag.clone(),
                provider_tag: provider.tag().to_string(),
            });
        }
        if self.corpus_hash != corpus_hash {
            return Err(RetrieverError::CorpusMismatch {
                index_hash: self.corpus_hash.clone(),
                corpus_hash: corpus_hash.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("provider returned a vector of dim {got}, expected {expected}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFiniteValue,
    #[error("duplicate chunk id {0} in corpus")]
    DuplicateChunkId(String),
    #[error("index built by provider {index_tag:?} cannot serve provider {provider_tag:?}")]
    ProviderMismatch {
        index_tag: String,
        provider_tag: String,
    },
    #[error("index corpus hash {index_hash} does not match current corpus {corpus_hash}")]
    CorpusMismatch {
        index_hash: String,
        corpus_hash: String,
    },
    #[error("k must be >= 1")]
    InvalidK,
    #[error("embedding transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error(transparent)]
    File(#[from] FileError),
}

/// Cosine similarity in [-1, 1]; 0 when either vector has zero norm.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrieverError> {
    if u.dim() != v.dim() {
        return Err(RetrieverError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Deterministic text-to-vector backend.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifier persisted with indexes to prevent mixing embedding spaces.
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrieverError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, RetrieverError> {
        let mut vectors = self.embed_batch(std::slice::from_ref(&text.to_string()))?;
        vectors.pop().ok_or(RetrieverError::CountMismatch {
            expected: 1,
            got: 0,
        })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Offline bag-of-words embedder: lowercased whitespace tokens are hashed
/// into a 512-dimension count vector, then L2-normalized. Identical texts
/// embed identically; word order is ignored.
#[derive(Clone, Debug, Default)]
pub struct MockEmbedder;

impl MockEmbedder {
    pub const DIM: usize = 512;
    pub const TAG: &'static str = "mock-hash-512";
}

impl EmbeddingProvider for MockEmbedder {
    fn tag(&self) -> &str {
        MockEmbedder::TAG
    }

    fn dim(&self) -> usize {
        MockEmbedder::DIM
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrieverError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut values = vec![0.0f64; MockEmbedder::DIM];
                for word in text.to_lowercase().split_whitespace() {
                    let slot = (fnv1a(word.as_bytes()) % MockEmbedder::DIM as u64) as usize;
                    values[slot] += 1.0;
                }
                let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut values {
                        *v /= norm;
                    }
                }
                EmbeddingVector(values)
            })
            .collect())
    }
}

/// Hash identifying a chunk corpus: ids and texts, order-independent is not
/// needed because chunk files are written in a stable order.
pub fn corpus_hash(chunks: &[Chunk]) -> String {
    let mut buf = Vec::new();
    for chunk in chunks {
        for part in [&chunk.chunk_id, &chunk.text] {
            buf.extend_from_slice(&(part.len() as u64).to_be_bytes());
            buf.extend_from_slice(part.as_bytes());
        }
    }
    util::sha256_hex(&buf)
}

/// Embeds every chunk and builds a queryable index. Rebuilding over the same
/// chunks with the same provider yields an identical index.
pub fn index_chunks(
    chunks: &[Chunk],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, RetrieverError> {
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = provider.embed_batch(&texts)?;
    if vectors.len() != chunks.len() {
        return Err(RetrieverError::CountMismatch {
            expected: chunks.len(),
            got: vectors.len(),
        });
    }
    let mut entries = BTreeMap::new();
    for (chunk, vector) in chunks.iter().zip(vectors) {
        if vector.dim() != provider.dim() {
            return Err(RetrieverError::DimensionDrift {
                expected: provider.dim(),
                got: vector.dim(),
            });
        }
        vector.validate_finite()?;
        if entries.insert(chunk.chunk_id.clone(), vector).is_some() {
            return Err(RetrieverError::DuplicateChunkId(chunk.chunk_id.clone()));
        }
    }
    Ok(VectorIndex {
        dim: provider.dim(),
        provider_tag: provider.tag().to_string(),
        corpus_hash: corpus_hash(chunks),
        entries,
    })
}

/// One retrieval hit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub chunk_id: String,
    pub similarity: f64,
}

/// Default number of chunks retrieved per question.
pub const DEFAULT_TOP_K: usize = 10;

/// Exact top-k scan: cosine similarity descending, chunk id ascending on
/// ties. Returns fewer than `k` hits when the index is smaller.
pub fn retrieve(
    index: &VectorIndex,
    query_text: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Retrieved>, RetrieverError> {
    if k == 0 {
        return Err(RetrieverError::InvalidK);
    }
    if index.provider_tag != provider.tag() {
        return Err(RetrieverError::ProviderMismatch {
            index_tag: index.provider_tag.clone(),
            provider_tag: provider.tag().to_string(),
        });
    }
    let query = provider.embed_one(query_text)?;
    query.validate_finite()?;
    let mut hits: Vec<Retrieved> = index
        .entries
        .iter()
        .map(|(chunk_id, vector)| {
            Ok(Retrieved {
                chunk_id: chunk_id.clone(),
                similarity: cosine(&query, vector)?,
            })
        })
        .collect::<Result<_, RetrieverError>>()?;
    hits.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("cosine of finite vectors is finite")
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    hits.truncate(k);
    Ok(hits)
}

/// Persists an index as JSON via an atomic rename.
pub fn save_index(path: &Path, index: &VectorIndex) -> Result<(), RetrieverError> {
    let mut bytes = serde_json::to_vec(index).map_err(|e| FileError::line(path, 0, e.to_string()))?;
    bytes.push(b'\n');
    util::write_atomic(path, &bytes)?;
    Ok(())
}

/// Loads an index written by [`save_index`], revalidating vector finiteness
/// and dimensions.
pub fn load_index(path: &Path) -> Result<VectorIndex, RetrieverError> {
    let bytes = std::fs::read(path).map_err(|e| FileError::io(path, e))?;
    let index: VectorIndex =
        serde_json::from_slice(&bytes).map_err(|e| FileError::line(path, 0, e.to_string()))?;
    for vector in index.entries.values() {
        if vector.dim() != index.dim {
            return Err(RetrieverError::DimensionDrift {
                expected: index.dim,
                got: vector.dim(),
            });
        }
        vector.validate_finite()?;
    }
    Ok(index)
}

/// Embedding backend speaking the HTTP contract
/// `POST {texts: [...]} -> {vectors: [[...]]}`.
pub struct HttpEmbedder {
    pub endpoint: String,
    pub tag: String,
    pub dim: usize,
    pub batch_size: usize,
    pub retries: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, tag: impl Into<String>, dim: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        HttpEmbedder {
            endpoint: endpoint.into(),
            tag: tag.into(),
            dim,
            batch_size: 32,
            retries: 2,
            agent: config.into(),
        }
    }

    fn embed_batch_once(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrieverError> {
        let response: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(|e| RetrieverError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?
            .body_mut()
            .read_json()
            .map_err(|e| RetrieverError::Transport {
                attempts: 1,
                message: format!("invalid embedding response: {e}"),
            })?;
        if response.vectors.len() != texts.len() {
            return Err(RetrieverError::CountMismatch {
                expected: texts.len(),
                got: response.vectors.len(),
            });
        }
        response
            .vectors
            .into_iter()
            .map(|values| {
                let vector = EmbeddingVector(values);
                if vector.dim() != self.dim {
                    return Err(RetrieverError::DimensionDrift {
                        expected: self.dim,
                        got: vector.dim(),
                    });
                }
                vector.validate_finite()?;
                Ok(vector)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrieverError> {
        let mut vectors = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size.max(1)) {
            let mut last_error = None;
            let mut batch_vectors = None;
            for _ in 0..=self.retries {
                match self.embed_batch_once(batch) {
                    Ok(v) => {
                        batch_vectors = Some(v);
                        break;
                    }
                    Err(e) => last_error = Some(e),
                }
            }
            match batch_vectors {
                Some(v) => vectors.extend(v),
                None => {
                    return Err(match last_error.expect("at least one attempt") {
                        RetrieverError::Transport { message, .. } => RetrieverError::Transport {
                            attempts: self.retries + 1,
                            message,
                        },
                        other => other,
                    })
                }
            }
        }
        Ok(vectors)
    }
}
