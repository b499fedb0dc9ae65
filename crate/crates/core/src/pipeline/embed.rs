//! Text embedding and the retrieval index.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_RETRIEVAL_K: usize = 3;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    /// True when every component is nonnegative, so cosine lies in `[0, 1]`.
    fn nonnegative(&self) -> bool;
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn bucket(token: &str, seed: u64, dim: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % dim as u64) as usize
}

/// Feature-hashing term frequencies, optionally weighted by smoothed inverse
/// document frequency fitted on a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashingTfIdf {
    pub dim: usize,
    pub seed: u64,
    /// `ln((1 + N) / (1 + df)) + 1` per bucket; all ones before fitting.
    pub idf: Vec<f64>,
}

impl HashingTfIdf {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(HashingTfIdf {
            dim,
            seed,
            idf: vec![1.0; dim],
        })
    }

    pub fn fit<S: AsRef<str>>(dim: usize, seed: u64, docs: &[S]) -> Result<Self> {
        let mut e = HashingTfIdf::new(dim, seed)?;
        let mut df = vec![0usize; dim];
        for d in docs {
            let mut seen = vec![false; dim];
            for t in normalize_tokens(d.as_ref()) {
                seen[bucket(&t, seed, dim)] = true;
            }
            for (c, s) in df.iter_mut().zip(seen) {
                *c += usize::from(s);
            }
        }
        let n = docs.len() as f64;
        e.idf = df.iter().map(|&c| ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0).collect();
        Ok(e)
    }

    /// Raw weighted counts, possibly all zero.
    pub fn features(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in normalize_tokens(text) {
            v[bucket(&t, self.seed, self.dim)] += 1.0;
        }
        for (x, w) in v.iter_mut().zip(&self.idf) {
            *x *= w;
        }
        v
    }
}

impl Embedder for HashingTfIdf {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.features(text))
    }

    fn nonnegative(&self) -> bool {
        true
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; errors when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let (na, nb) = (sq(a), sq(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::NumericDomain("cosine similarity of a zero vector is undefined".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // sqrt(s * s) == s exactly, so identical inputs give exactly 1.
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub doc_id: String,
    pub vector: Vec<f64>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub doc_id: String,
    pub score: f64,
    pub text: String,
}

/// Immutable after construction.
#[derive(Clone)]
pub struct EmbeddingIndex {
    entries: Vec<IndexEntry>,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for EmbeddingIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingIndex")
            .field("entries", &self.entries.len())
            .field("dim", &self.embedder.dim())
            .finish()
    }
}

impl EmbeddingIndex {
    /// Embeds `docs`; documents without any token are skipped.
    pub fn build(docs: Vec<(String, String)>, embedder: Arc<dyn Embedder>) -> Result<Self> {
        let mut entries = Vec::with_capacity(docs.len());
        for (doc_id, text) in docs {
            let vector = embedder.embed(&text)?;
            if vector.len() != embedder.dim() {
                return Err(Error::Shape(format!(
                    "embedder returned {} components, expected {}",
                    vector.len(),
                    embedder.dim()
                )));
            }
            if norm(&vector) == 0.0 {
                log::warn!("document {doc_id} has no indexable tokens; skipped");
                continue;
            }
            entries.push(IndexEntry { doc_id, vector, text });
        }
        Ok(EmbeddingIndex { entries, embedder })
    }

    /// Default index: hashing TF-IDF fitted on the documents themselves.
    pub fn hashing(docs: Vec<(String, String)>, dim: usize, seed: u64) -> Result<Self> {
        let texts: Vec<&str> = docs.iter().map(|(_, t)| t.as_str()).collect();
        let e = HashingTfIdf::fit(dim, seed, &texts)?;
        EmbeddingIndex::build(docs, Arc::new(e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// Top `k` entries by cosine similarity, ties broken by `doc_id`. A query
    /// without tokens scores every entry 0.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Retrieved>> {
        if k == 0 {
            return Err(Error::Contract("retrieval needs k >= 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Contract("cannot retrieve from an empty index".into()));
        }
        let q = self.embedder.embed(query)?;
        let zero = norm(&q) == 0.0;
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| Ok((if zero { 0.0 } else { cosine(&q, &e.vector)? }, e)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, e)| Retrieved {
                doc_id: e.doc_id.clone(),
                score,
                text: e.text.clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<(String, String)> {
        [
            ("d1", "ecg r peak detection with pan tompkins"),
            ("d2", "imu activity recognition from accelerometer windows"),
            ("d3", "ecg heartbeat classification"),
            ("d4", "wifi signal based gesture sensing"),
            ("d5", "accelerometer step counting on imu"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
    }

    #[test]
    fn self_retrieval_ranks_first() {
        let idx = EmbeddingIndex::hashing(docs(), DEFAULT_EMBED_DIM, 0).unwrap();
        for (id, text) in docs() {
            let top = idx.retrieve(&text, 1).unwrap();
            assert_eq!(top[0].doc_id, id);
            assert!((top[0].score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_matches_brute_force() {
        let idx = EmbeddingIndex::hashing(docs(), 64, 3).unwrap();
        let query = "ecg peak on imu accelerometer";
        let got = idx.retrieve(query, 10).unwrap();
        assert_eq!(got.len(), 5);
        let q = idx.embedder().embed(query).unwrap();
        let mut brute: Vec<(f64, String)> = idx
            .entries()
            .iter()
            .map(|e| {
                let dot: f64 = q.iter().zip(&e.vector).map(|(a, b)| a * b).sum();
                let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (dot / (n(&q) * n(&e.vector)), e.doc_id.clone())
            })
            .collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (g, b) in got.iter().zip(&brute) {
            assert_eq!(g.doc_id, b.1);
            assert!((g.score - b.0).abs() < 1e-12);
        }
        assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn contract_errors() {
        let idx = EmbeddingIndex::hashing(vec![], 16, 0).unwrap();
        assert!(matches!(idx.retrieve("x", 1), Err(Error::Contract(_))));
        let idx = EmbeddingIndex::hashing(docs(), 16, 0).unwrap();
        assert!(matches!(idx.retrieve("x", 0), Err(Error::Contract(_))));
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn whitespace_and_case_do_not_matter() {
        let e = HashingTfIdf::new(256, 1).unwrap();
        let a = e.embed("def f(x):\n    return x+1").unwrap();
        let b = e.embed("def  f( x ):  return X + 1").unwrap();
        assert_eq!(cosine(&a, &b).unwrap(), 1.0);
    }
}
