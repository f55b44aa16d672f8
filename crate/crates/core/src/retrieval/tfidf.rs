use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Chunk, RetrievalError};
use crate::corpus::Stopwords;

pub const NGRAM_MIN: usize = 1;
pub const NGRAM_MAX: usize = 3;

fn is_filtered(token: &str, stopwords: &Stopwords) -> bool {
    stopwords.contains(token) || !token.chars().any(char::is_alphanumeric)
}

/// Raw n-gram counts for n in 1..=3.
///
/// Stopwords and pure punctuation never form a unigram and never sit at either
/// end of a higher-order n-gram; they are kept in the interior ("end of the
/// day").
pub fn ngram_counts(tokens: &[String], stopwords: &Stopwords) -> BTreeMap<String, usize> {
    let filtered: Vec<bool> = tokens.iter().map(|t| is_filtered(t, stopwords)).collect();
    let mut counts = BTreeMap::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        if tokens.len() < n {
            break;
        }
        for start in 0..=tokens.len() - n {
            if filtered[start] || filtered[start + n - 1] {
                continue;
            }
            *counts.entry(tokens[start..start + n].join(" ")).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub story_id: String,
    pub chunk_index: usize,
    pub len: usize,
    /// `(term id, weight)` sorted by term id; unit L2 norm unless empty.
    pub vector: Vec<(usize, f64)>,
}

impl IndexedChunk {
    pub fn is_zero(&self) -> bool {
        self.vector.is_empty()
    }
}

/// TF-IDF index with raw-count term frequency and smoothed idf
/// `ln((1 + N) / (1 + df)) + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfIndex {
    terms: Vec<String>,
    idf: Vec<f64>,
    chunks: Vec<IndexedChunk>,
    #[serde(skip)]
    term_ids: HashMap<String, usize>,
    #[serde(skip, default)]
    stopwords: Option<Stopwords>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedChunk {
    /// Position in the chunk sequence the index was built from.
    pub position: usize,
    pub score: f64,
}

fn normalize(v: &mut [(usize, f64)]) {
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in v.iter_mut() {
            *w /= norm;
        }
    }
}

impl TfidfIndex {
    pub fn build(chunks: &[Chunk], stopwords: &Stopwords) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::NoChunks);
        }
        let counts: Vec<BTreeMap<String, usize>> = chunks.iter().map(|c| ngram_counts(&c.tokens, stopwords)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &counts {
            for term in c.keys() {
                *df.entry(term.as_str()).or_default() += 1;
            }
        }
        let n = chunks.len() as f64;
        let terms: Vec<String> = df.keys().map(|t| t.to_string()).collect();
        let idf: Vec<f64> = df.values().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let term_ids: HashMap<String, usize> = terms.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        let indexed = chunks
            .iter()
            .zip(&counts)
            .map(|(chunk, c)| {
                let mut vector: Vec<(usize, f64)> = c
                    .iter()
                    .map(|(t, &tf)| {
                        let id = term_ids[t];
                        (id, tf as f64 * idf[id])
                    })
                    .collect();
                vector.sort_by_key(|&(id, _)| id);
                normalize(&mut vector);
                IndexedChunk {
                    story_id: chunk.story_id.clone(),
                    chunk_index: chunk.chunk_index,
                    len: chunk.tokens.len(),
                    vector,
                }
            })
            .collect();
        Ok(TfidfIndex {
            terms,
            idf,
            chunks: indexed,
            term_ids,
            stopwords: Some(stopwords.clone()),
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn chunks(&self) -> &[IndexedChunk] {
        &self.chunks
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_ids.get(term).map(|&i| self.idf[i])
    }

    /// Weight of `term` in chunk `position`, zero if absent.
    pub fn weight(&self, position: usize, term: &str) -> f64 {
        let Some(&id) = self.term_ids.get(term) else { return 0.0 };
        let v = &self.chunks[position].vector;
        v.binary_search_by_key(&id, |&(t, _)| t).map_or(0.0, |k| v[k].1)
    }

    /// Unit TF-IDF vector of a query over the index vocabulary.
    pub fn query_vector(&self, query: &[String]) -> Vec<(usize, f64)> {
        let default_stop;
        let stopwords = match &self.stopwords {
            Some(s) => s,
            None => {
                default_stop = Stopwords::default();
                &default_stop
            }
        };
        let mut v: Vec<(usize, f64)> = ngram_counts(query, stopwords)
            .into_iter()
            .filter_map(|(t, tf)| self.term_ids.get(&t).map(|&id| (id, tf as f64 * self.idf[id])))
            .collect();
        v.sort_by_key(|&(id, _)| id);
        normalize(&mut v);
        v
    }

    /// Cosine similarity of the query against every chunk, best first, cut to
    /// `top_k`. Ties keep story order; empty chunks sort after non-empty
    /// chunks of equal score.
    pub fn rank(&self, query: &[String], top_k: usize) -> Result<Vec<RankedChunk>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidArgument("top_k must be at least 1"));
        }
        let q = self.query_vector(query);
        let mut ranked: Vec<RankedChunk> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(position, c)| RankedChunk {
                position,
                score: sparse_dot(&q, &c.vector).clamp(0.0, 1.0),
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.chunks[a.position].is_zero().cmp(&self.chunks[b.position].is_zero()))
                .then_with(|| a.position.cmp(&b.position))
        });
        ranked.truncate(top_k);
        Ok(ranked)
    }

    fn rebuild_lookup(&mut self) {
        self.term_ids = self.terms.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    }

    pub fn set_stopwords(&mut self, stopwords: Stopwords) {
        self.stopwords = Some(stopwords);
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

pub fn rank_chunks(index: &TfidfIndex, query: &[String], top_k: usize) -> Result<Vec<RankedChunk>, RetrievalError> {
    index.rank(query, top_k)
}

pub const INDEX_FORMAT: &str = "ialcpg-tfidf";
pub const INDEX_VERSION: u32 = 1;

/// Versioned JSON container for one index per story.
#[derive(Debug, Serialize, Deserialize)]
pub struct IndexFile {
    pub format: String,
    pub version: u32,
    pub chunk_size: usize,
    pub indices: Vec<TfidfIndex>,
}

impl IndexFile {
    pub fn new(chunk_size: usize, indices: Vec<TfidfIndex>) -> Self {
        IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            chunk_size,
            indices,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), RetrievalError> {
        serde_json::to_writer(w, self).map_err(|e| RetrievalError::Persist(e.to_string()))
    }

    pub fn read<R: Read>(r: R, stopwords: &Stopwords) -> Result<Self, RetrievalError> {
        let mut f: IndexFile = serde_json::from_reader(r).map_err(|e| RetrievalError::Persist(e.to_string()))?;
        if f.format != INDEX_FORMAT || f.version != INDEX_VERSION {
            return Err(RetrievalError::Persist(format!(
                "unsupported index file {} v{}",
                f.format, f.version
            )));
        }
        for idx in &mut f.indices {
            idx.rebuild_lookup();
            idx.set_stopwords(stopwords.clone());
        }
        Ok(f)
    }
}
