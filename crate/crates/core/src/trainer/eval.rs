use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, QaExample, Stopwords};
use crate::metrics::{answer_tokens, MetricReport};
use crate::model::Model;
use crate::retrieval::{ContextWindow, RetrievalConfig, StoryIndex};

use super::TrainError;

/// What inference is allowed to see of an example: no answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub example_id: String,
    pub story_id: String,
    pub tokens: Vec<String>,
}

impl From<&QaExample> for Question {
    fn from(ex: &QaExample) -> Self {
        Question {
            example_id: ex.example_id.clone(),
            story_id: ex.story_id.clone(),
            tokens: ex.question_tokens.clone(),
        }
    }
}

/// A question together with its question-cued context window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceInput {
    pub example_id: String,
    pub question: Vec<String>,
    pub context: ContextWindow,
}

/// Question-cued windows at chunk size `k`.
pub fn question_windows(
    dataset: &Dataset,
    questions: &[Question],
    retrieval: &RetrievalConfig,
    k: usize,
    stopwords: &Stopwords,
) -> Result<Vec<InferenceInput>, TrainError> {
    let mut cache: HashMap<&str, StoryIndex> = HashMap::new();
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        let story = dataset
            .story(&q.story_id)
            .ok_or_else(|| TrainError::Data(format!("unknown story `{}`", q.story_id)))?;
        if !cache.contains_key(q.story_id.as_str()) {
            cache.insert(q.story_id.as_str(), StoryIndex::build(story, k, stopwords)?);
        }
        let context = cache[q.story_id.as_str()].window(&q.example_id, &q.tokens, retrieval)?;
        out.push(InferenceInput {
            example_id: q.example_id.clone(),
            question: q.tokens.clone(),
            context,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    /// Examples whose normalized prediction equals a normalized reference.
    pub fn exact_matches(&self, references: &HashMap<String, Vec<String>>) -> usize {
        self.predictions
            .iter()
            .filter(|p| exact_match(&p.answer, references.get(&p.example_id).map(Vec::as_slice).unwrap_or(&[])))
            .count()
    }
}

pub fn exact_match(prediction: &str, references: &[String]) -> bool {
    let p = answer_tokens(prediction);
    references.iter().any(|r| answer_tokens(r) == p)
}

/// Greedy-decodes every input and scores against `references` (keyed by
/// example id). Inputs with an empty context or question decode to "".
pub fn evaluate(
    model: &Model,
    inputs: &[InferenceInput],
    references: &HashMap<String, Vec<String>>,
    max_answer_len: usize,
) -> Result<Evaluation, TrainError> {
    let mut predictions = Vec::with_capacity(inputs.len());
    for input in inputs {
        let answer = if input.context.is_empty() || input.question.is_empty() {
            String::new()
        } else {
            model
                .greedy_decode(&input.context.tokens, &input.question, max_answer_len)?
                .tokens
                .join(" ")
        };
        predictions.push(Prediction {
            example_id: input.example_id.clone(),
            answer,
        });
    }
    let hyps: Vec<String> = predictions.iter().map(|p| p.answer.clone()).collect();
    let refs: Vec<Vec<String>> = predictions
        .iter()
        .map(|p| references.get(&p.example_id).cloned().unwrap_or_default())
        .collect();
    let report = MetricReport::from_text(&hyps, &refs)?;
    Ok(Evaluation { report, predictions })
}

/// Reference answers joined back to text, keyed by example id.
pub fn reference_map<'a>(examples: impl IntoIterator<Item = &'a QaExample>) -> HashMap<String, Vec<String>> {
    examples
        .into_iter()
        .map(|e| (e.example_id.clone(), e.answers.iter().map(|a| a.join(" ")).collect()))
        .collect()
}
