//! Chunking, TF-IDF ranking and context-window assembly.

mod tfidf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QaExample, Stopwords, Story};

pub use tfidf::{
    ngram_counts, rank_chunks, IndexFile, IndexedChunk, RankedChunk, TfidfIndex, INDEX_FORMAT, INDEX_VERSION, NGRAM_MAX,
    NGRAM_MIN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("cannot index an empty chunk sequence")]
    NoChunks,
    #[error("nothing ranked to assemble")]
    EmptyRanking,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("index file: {0}")]
    Persist(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub story_id: String,
    pub chunk_index: usize,
    pub tokens: Vec<String>,
    pub size: usize,
}

/// Splits a story into consecutive spans of `n` tokens; only the last may be
/// shorter.
pub fn chunk_story(story: &Story, n: usize) -> Result<Vec<Chunk>, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::InvalidArgument("chunk size must be at least 1"));
    }
    Ok(story
        .tokens
        .chunks(n)
        .enumerate()
        .map(|(chunk_index, toks)| Chunk {
            story_id: story.story_id.clone(),
            chunk_index,
            tokens: toks.to_vec(),
            size: n,
        })
        .collect())
}

/// Assembled reader input for one example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub example_id: String,
    pub chunk_size: usize,
    pub tokens: Vec<String>,
    /// `(story_id, chunk_index)` in emitted order.
    pub provenance: Vec<(String, usize)>,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Greedily takes ranked chunks while the running total stays within
/// `max_context`, then restores story order. If even the best chunk exceeds
/// the budget it is truncated to fit.
pub fn assemble_context(
    example_id: &str,
    ranked: &[RankedChunk],
    chunks: &[Chunk],
    max_context: usize,
) -> Result<ContextWindow, RetrievalError> {
    let first = ranked.first().ok_or(RetrievalError::EmptyRanking)?;
    if max_context == 0 {
        return Err(RetrievalError::InvalidArgument("max_context must be at least 1"));
    }
    let mut selected: Vec<&Chunk> = Vec::new();
    let mut total = 0;
    for r in ranked {
        let c = &chunks[r.position];
        if total + c.tokens.len() > max_context {
            break;
        }
        total += c.tokens.len();
        selected.push(c);
    }
    let chunk_size = chunks[first.position].size;
    if selected.is_empty() {
        let c = &chunks[first.position];
        return Ok(ContextWindow {
            example_id: example_id.to_string(),
            chunk_size,
            tokens: c.tokens[..max_context.min(c.tokens.len())].to_vec(),
            provenance: vec![(c.story_id.clone(), c.chunk_index)],
        });
    }
    selected.sort_by_key(|c| c.chunk_index);
    Ok(ContextWindow {
        example_id: example_id.to_string(),
        chunk_size,
        tokens: selected.iter().flat_map(|c| c.tokens.iter().cloned()).collect(),
        provenance: selected.iter().map(|c| (c.story_id.clone(), c.chunk_index)).collect(),
    })
}

/// Which text cues retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cue {
    /// Both reference answers concatenated (training only).
    Answer,
    Question,
}

pub fn query_for(example: &QaExample, cue: Cue) -> Vec<String> {
    match cue {
        Cue::Answer => example.answers[0].iter().chain(&example.answers[1]).cloned().collect(),
        Cue::Question => example.question_tokens.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub max_context: usize,
    pub top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            max_context: 4000,
            top_k: 1000,
        }
    }
}

/// A story chunked at one size together with its index.
#[derive(Clone, Debug)]
pub struct StoryIndex {
    pub chunks: Vec<Chunk>,
    pub index: TfidfIndex,
}

impl StoryIndex {
    pub fn build(story: &Story, chunk_size: usize, stopwords: &Stopwords) -> Result<Self, RetrievalError> {
        let chunks = chunk_story(story, chunk_size)?;
        let index = TfidfIndex::build(&chunks, stopwords)?;
        Ok(StoryIndex { chunks, index })
    }

    pub fn window(&self, example_id: &str, query: &[String], cfg: &RetrievalConfig) -> Result<ContextWindow, RetrievalError> {
        let ranked = self.index.rank(query, cfg.top_k)?;
        assemble_context(example_id, &ranked, &self.chunks, cfg.max_context)
    }
}
