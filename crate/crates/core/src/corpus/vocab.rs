use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Story};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["<pad>", "<unk>", "<bos>"];

/// Token/index bijection with the three fixed specials in front.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    token_of: Vec<String>,
    id_of: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocab {
    type Error = CorpusError;

    fn try_from(f: VocabFile) -> Result<Self, CorpusError> {
        if f.tokens.len() < SPECIAL_TOKENS.len() || f.tokens[..3] != SPECIAL_TOKENS {
            return Err(CorpusError::MalformedVocab("special tokens missing".into()));
        }
        Vocab::from_ordered(f.tokens[3..].to_vec())
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { tokens: v.token_of }
    }
}

impl Vocab {
    /// Builds a vocabulary from non-special tokens in the given order.
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self, CorpusError> {
        let mut token_of: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut id_of: HashMap<String, usize> = token_of.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for t in tokens {
            if id_of.contains_key(&t) {
                return Err(CorpusError::MalformedVocab(format!("duplicate token `{t}`")));
            }
            id_of.insert(t.clone(), token_of.len());
            token_of.push(t);
        }
        Ok(Vocab { token_of, id_of })
    }

    /// Tokens present in at least `min_docs` distinct documents, ordered by
    /// descending total frequency with lexicographic tie-break.
    pub fn from_documents<'a, I, D>(docs: I, min_docs: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if min_docs == 0 {
            return Err(CorpusError::InvalidArgument("min_stories must be at least 1".into()));
        }
        let mut doc_count: BTreeMap<&str, usize> = BTreeMap::new();
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let mut seen = HashSet::new();
            for tok in doc {
                *freq.entry(tok.as_str()).or_default() += 1;
                if seen.insert(tok.as_str()) {
                    *doc_count.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<&str> = doc_count
            .into_iter()
            .filter(|&(t, c)| c >= min_docs && !SPECIAL_TOKENS.contains(&t))
            .map(|(t, _)| t)
            .collect();
        if kept.is_empty() {
            return Err(CorpusError::EmptyVocab { min_stories: min_docs });
        }
        kept.sort_by(|a, b| freq[b].cmp(&freq[a]).then_with(|| a.cmp(b)));
        Vocab::from_ordered(kept.into_iter().map(str::to_string).collect())
    }

    pub fn size(&self) -> usize {
        self.token_of.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    /// Index of `token`, or `UNK`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.token_of.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.get(token).is_some_and(|&i| i >= SPECIAL_TOKENS.len())
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.token_of
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }
}

/// Global generation vocabulary: tokens appearing in at least `min_stories`
/// distinct stories.
pub fn build_vocab(stories: &[Story], min_stories: usize) -> Result<Vocab, CorpusError> {
    Vocab::from_documents(stories.iter().map(|s| s.tokens.iter()), min_stories)
}
