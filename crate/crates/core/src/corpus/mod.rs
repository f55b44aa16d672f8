//! Stories, QA pairs, tokenization, the generation vocabulary and gold
//! labels for the pointer-generator loss.

mod labels;
mod tokenize;
mod vocab;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labels::{build_gold_labels, largest_ngram_match, GoldLabel};
pub use tokenize::{tokenize, Stopwords};
pub use vocab::{build_vocab, Vocab, BOS, PAD, SPECIAL_TOKENS, UNK};

pub type Token = String;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("example `{example_id}` references unknown story `{story_id}`")]
    UnknownStory { example_id: String, story_id: String },
    #[error("duplicate example id `{0}`")]
    DuplicateExample(String),
    #[error("duplicate story id `{0}`")]
    DuplicateStory(String),
    #[error("story `{0}` has no tokens")]
    EmptyStory(String),
    #[error("example `{0}` needs exactly two non-empty answers")]
    BadAnswers(String),
    #[error("no token appears in at least {min_stories} stories")]
    EmptyVocab { min_stories: usize },
    #[error("malformed vocabulary: {0}")]
    MalformedVocab(String),
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: String,
    pub tokens: Vec<Token>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub example_id: String,
    pub story_id: String,
    pub question_tokens: Vec<Token>,
    pub answers: [Vec<Token>; 2],
    pub split: Split,
}

/// On-disk JSON-lines record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Record {
    Story {
        story_id: String,
        text: String,
    },
    Qa {
        example_id: String,
        story_id: String,
        question: String,
        answers: Vec<String>,
        split: Split,
    },
}

/// Default question truncation length.
pub const MAX_QUESTION_LEN: usize = 30;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub stories: Vec<Story>,
    pub examples: Vec<QaExample>,
    story_index: HashMap<String, usize>,
}

impl Dataset {
    /// Validates references and uniqueness, and truncates questions to
    /// `max_question_len` tokens.
    pub fn new(stories: Vec<Story>, mut examples: Vec<QaExample>, max_question_len: usize) -> Result<Self, CorpusError> {
        let mut story_index = HashMap::new();
        for (i, s) in stories.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(CorpusError::EmptyStory(s.story_id.clone()));
            }
            if story_index.insert(s.story_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateStory(s.story_id.clone()));
            }
        }
        let mut seen = HashSet::new();
        for ex in &mut examples {
            if !seen.insert(ex.example_id.clone()) {
                return Err(CorpusError::DuplicateExample(ex.example_id.clone()));
            }
            if !story_index.contains_key(&ex.story_id) {
                return Err(CorpusError::UnknownStory {
                    example_id: ex.example_id.clone(),
                    story_id: ex.story_id.clone(),
                });
            }
            if ex.answers.iter().any(Vec::is_empty) {
                return Err(CorpusError::BadAnswers(ex.example_id.clone()));
            }
            ex.question_tokens.truncate(max_question_len);
        }
        Ok(Dataset {
            stories,
            examples,
            story_index,
        })
    }

    pub fn from_records(records: Vec<(usize, Record)>, max_question_len: usize) -> Result<Self, CorpusError> {
        let mut stories = Vec::new();
        let mut examples = Vec::new();
        for (line, r) in records {
            match r {
                Record::Story { story_id, text } => stories.push(Story {
                    story_id,
                    tokens: tokenize(&text),
                }),
                Record::Qa {
                    example_id,
                    story_id,
                    question,
                    answers,
                    split,
                } => {
                    let [a1, a2]: [String; 2] = answers.try_into().map_err(|_| CorpusError::Parse {
                        line,
                        message: format!("example `{example_id}` must carry exactly two answers"),
                    })?;
                    examples.push(QaExample {
                        example_id,
                        story_id,
                        question_tokens: tokenize(&question),
                        answers: [tokenize(&a1), tokenize(&a2)],
                        split,
                    });
                }
            }
        }
        Dataset::new(stories, examples, max_question_len)
    }

    pub fn read<R: BufRead>(reader: R, max_question_len: usize) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            records.push((line_no, r));
        }
        Dataset::from_records(records, max_question_len)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Dataset::load_with(path, MAX_QUESTION_LEN)
    }

    pub fn load_with(path: impl AsRef<Path>, max_question_len: usize) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Dataset::read(std::io::BufReader::new(file), max_question_len)
    }

    pub fn story(&self, story_id: &str) -> Option<&Story> {
        self.story_index.get(story_id).map(|&i| &self.stories[i])
    }

    pub fn example(&self, example_id: &str) -> Option<&QaExample> {
        self.examples.iter().find(|e| e.example_id == example_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QaExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn is_empty(&self) -> bool {
        self.stories.is_empty() && self.examples.is_empty()
    }

    /// Input-side vocabulary over every story, question and answer token.
    pub fn input_vocab(&self) -> Result<Vocab, CorpusError> {
        let docs = self
            .stories
            .iter()
            .map(|s| s.tokens.iter().collect::<Vec<_>>())
            .chain(self.examples.iter().map(|e| {
                e.question_tokens
                    .iter()
                    .chain(e.answers[0].iter())
                    .chain(e.answers[1].iter())
                    .collect()
            }));
        Vocab::from_documents(docs, 1)
    }
}

/// Serializes stories and examples back to the JSON-lines corpus format.
pub fn write_records<W: std::io::Write>(mut w: W, stories: &[(String, String)], qa: &[Record]) -> std::io::Result<()> {
    for (id, text) in stories {
        let r = Record::Story {
            story_id: id.clone(),
            text: text.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&r).expect("record serializes"))?;
    }
    for r in qa {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}

impl Dataset {
    /// Writes the dataset as JSON-lines with tokens joined by single spaces.
    pub fn write<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let stories: Vec<(String, String)> =
            self.stories.iter().map(|s| (s.story_id.clone(), s.tokens.join(" "))).collect();
        let qa: Vec<Record> = self
            .examples
            .iter()
            .map(|e| Record::Qa {
                example_id: e.example_id.clone(),
                story_id: e.story_id.clone(),
                question: e.question_tokens.join(" "),
                answers: e.answers.iter().map(|a| a.join(" ")).collect(),
                split: e.split,
            })
            .collect();
        write_records(w, &stories, &qa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_empty_dataset() {
        let d = Dataset::read(&b""[..], 30).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn one_story_one_question() {
        let text = r#"{"type":"story","story_id":"s1","text":"Roberta plays the violin."}
{"type":"qa","example_id":"q1","story_id":"s1","question":"What does Roberta play?","answers":["Violin.","the violin"],"split":"train"}
"#;
        let d = Dataset::read(text.as_bytes(), 30).unwrap();
        assert_eq!(d.examples.len(), 1);
        let ex = &d.examples[0];
        assert_eq!(ex.answers[0], ["violin", "."]);
        assert_eq!(ex.answers[1], ["the", "violin"]);
        assert_eq!(ex.split, Split::Train);
        assert_eq!(d.story("s1").unwrap().tokens.len(), 5);
    }

    #[test]
    fn unknown_story_is_rejected() {
        let text = r#"{"type":"qa","example_id":"q1","story_id":"nope","question":"q","answers":["a","b"],"split":"dev"}"#;
        match Dataset::read(text.as_bytes(), 30) {
            Err(CorpusError::UnknownStory { story_id, .. }) => assert_eq!(story_id, "nope"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"type\":\"story\",\"story_id\":\"s\",\"text\":\"x\"}\n{not json}\n";
        match Dataset::read(text.as_bytes(), 30) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_examples_and_answer_count() {
        let dup = r#"{"type":"story","story_id":"s","text":"x"}
{"type":"qa","example_id":"q","story_id":"s","question":"q","answers":["a","b"],"split":"dev"}
{"type":"qa","example_id":"q","story_id":"s","question":"q","answers":["a","b"],"split":"dev"}"#;
        assert!(matches!(Dataset::read(dup.as_bytes(), 30), Err(CorpusError::DuplicateExample(_))));
        let three = r#"{"type":"story","story_id":"s","text":"x"}
{"type":"qa","example_id":"q","story_id":"s","question":"q","answers":["a","b","c"],"split":"dev"}"#;
        assert!(matches!(Dataset::read(three.as_bytes(), 30), Err(CorpusError::Parse { line: 2, .. })));
    }

    #[test]
    fn questions_truncated() {
        let text = r#"{"type":"story","story_id":"s","text":"x"}
{"type":"qa","example_id":"q","story_id":"s","question":"a b c d e","answers":["a","b"],"split":"test"}"#;
        let d = Dataset::read(text.as_bytes(), 3).unwrap();
        assert_eq!(d.examples[0].question_tokens, ["a", "b", "c"]);
    }
}
